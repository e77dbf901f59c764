// AVX2 kernels. Bit-identical to the scalar reference: the inner dimension is
// accumulated in the same ascending order for every output element, multiplies
// and adds stay separate (no FMA), and only correctly-rounded vector ops are
// used. Compiled with -mavx2; callers gate on runtime CPU support.
#include "echoes/kernels.hpp"

#if defined(__AVX2__)

#include <immintrin.h>

#include <algorithm>
#include <cmath>

namespace echoes::kernels::avx2 {

void matmul(const double* a, const double* b, double* c,
            std::size_t m, std::size_t k, std::size_t n) {
  std::fill(c, c + m * n, 0.0);
  const std::size_t n4 = n - n % 4;
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      const double* brow = b + kk * n;
      const __m256d avv = _mm256_set1_pd(av);
      std::size_t j = 0;
      for (; j < n4; j += 4) {
        __m256d cv = _mm256_loadu_pd(crow + j);
        __m256d bv = _mm256_loadu_pd(brow + j);
        cv = _mm256_add_pd(cv, _mm256_mul_pd(avv, bv));
        _mm256_storeu_pd(crow + j, cv);
      }
      for (; j < n; ++j) {
        crow[j] += av * brow[j];
      }
    }
  }
}

void relu(const double* x, double* y, std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_max_pd(_mm256_loadu_pd(x + i), zero));
  }
  for (; i < n; ++i) {
    y[i] = x[i] > 0.0 ? x[i] : 0.0;
  }
}

void relu_grad(const double* pre, const double* g_in, double* g_out,
               std::size_t n) {
  const __m256d zero = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d pv = _mm256_loadu_pd(pre + i);
    const __m256d gv = _mm256_loadu_pd(g_in + i);
    const __m256d mask = _mm256_cmp_pd(pv, zero, _CMP_GT_OQ);
    _mm256_storeu_pd(g_out + i, _mm256_and_pd(gv, mask));
  }
  for (; i < n; ++i) {
    g_out[i] = pre[i] > 0.0 ? g_in[i] : 0.0;
  }
}

void add_bias(double* rows, const double* bias, std::size_t n_rows,
              std::size_t n_cols) {
  const std::size_t n4 = n_cols - n_cols % 4;
  for (std::size_t r = 0; r < n_rows; ++r) {
    double* row = rows + r * n_cols;
    std::size_t j = 0;
    for (; j < n4; j += 4) {
      const __m256d rv = _mm256_loadu_pd(row + j);
      const __m256d bv = _mm256_loadu_pd(bias + j);
      _mm256_storeu_pd(row + j, _mm256_add_pd(rv, bv));
    }
    for (; j < n_cols; ++j) {
      row[j] += bias[j];
    }
  }
}

void adam_update(double* p, double* m, double* v, const double* g,
                 std::size_t n, double lr, double beta1, double beta2,
                 double eps, double bc1, double bc2) {
  const double one_minus_b1 = 1.0 - beta1;
  const double one_minus_b2 = 1.0 - beta2;
  const __m256d b1v = _mm256_set1_pd(beta1);
  const __m256d b2v = _mm256_set1_pd(beta2);
  const __m256d ob1v = _mm256_set1_pd(one_minus_b1);
  const __m256d ob2v = _mm256_set1_pd(one_minus_b2);
  const __m256d bc1v = _mm256_set1_pd(bc1);
  const __m256d bc2v = _mm256_set1_pd(bc2);
  const __m256d epsv = _mm256_set1_pd(eps);
  const __m256d lrv = _mm256_set1_pd(lr);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d gv = _mm256_loadu_pd(g + i);
    __m256d mv = _mm256_loadu_pd(m + i);
    __m256d vv = _mm256_loadu_pd(v + i);
    mv = _mm256_add_pd(_mm256_mul_pd(b1v, mv), _mm256_mul_pd(ob1v, gv));
    vv = _mm256_add_pd(_mm256_mul_pd(b2v, vv),
                       _mm256_mul_pd(ob2v, _mm256_mul_pd(gv, gv)));
    _mm256_storeu_pd(m + i, mv);
    _mm256_storeu_pd(v + i, vv);
    const __m256d mhat = _mm256_div_pd(mv, bc1v);
    const __m256d vhat = _mm256_div_pd(vv, bc2v);
    const __m256d denom = _mm256_add_pd(_mm256_sqrt_pd(vhat), epsv);
    const __m256d step = _mm256_mul_pd(lrv, _mm256_div_pd(mhat, denom));
    _mm256_storeu_pd(p + i, _mm256_sub_pd(_mm256_loadu_pd(p + i), step));
  }
  for (; i < n; ++i) {
    const double gi = g[i];
    m[i] = beta1 * m[i] + one_minus_b1 * gi;
    v[i] = beta2 * v[i] + one_minus_b2 * (gi * gi);
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    p[i] -= lr * (mhat / (std::sqrt(vhat) + eps));
  }
}

}  // namespace echoes::kernels::avx2

#endif  // __AVX2__
