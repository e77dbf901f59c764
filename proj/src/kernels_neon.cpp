// NEON kernels for arm64. Same bit-exactness contract as the AVX2 variants:
// ascending accumulation per output element, separate mul/add (no fused ops).
#include "echoes/kernels.hpp"

#if defined(__aarch64__)

#include <arm_neon.h>

#include <algorithm>
#include <cmath>

namespace echoes::kernels::neon {

void matmul(const double* a, const double* b, double* c,
            std::size_t m, std::size_t k, std::size_t n) {
  std::fill(c, c + m * n, 0.0);
  const std::size_t n2 = n - n % 2;
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      const double* brow = b + kk * n;
      const float64x2_t avv = vdupq_n_f64(av);
      std::size_t j = 0;
      for (; j < n2; j += 2) {
        float64x2_t cv = vld1q_f64(crow + j);
        const float64x2_t bv = vld1q_f64(brow + j);
        cv = vaddq_f64(cv, vmulq_f64(avv, bv));
        vst1q_f64(crow + j, cv);
      }
      for (; j < n; ++j) {
        crow[j] += av * brow[j];
      }
    }
  }
}

void relu(const double* x, double* y, std::size_t n) {
  const float64x2_t zero = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    vst1q_f64(y + i, vmaxq_f64(vld1q_f64(x + i), zero));
  }
  for (; i < n; ++i) {
    y[i] = x[i] > 0.0 ? x[i] : 0.0;
  }
}

void relu_grad(const double* pre, const double* g_in, double* g_out,
               std::size_t n) {
  const float64x2_t zero = vdupq_n_f64(0.0);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const float64x2_t pv = vld1q_f64(pre + i);
    const float64x2_t gv = vld1q_f64(g_in + i);
    const uint64x2_t mask = vcgtq_f64(pv, zero);
    vst1q_f64(g_out + i,
              vreinterpretq_f64_u64(vandq_u64(vreinterpretq_u64_f64(gv), mask)));
  }
  for (; i < n; ++i) {
    g_out[i] = pre[i] > 0.0 ? g_in[i] : 0.0;
  }
}

void add_bias(double* rows, const double* bias, std::size_t n_rows,
              std::size_t n_cols) {
  const std::size_t n2 = n_cols - n_cols % 2;
  for (std::size_t r = 0; r < n_rows; ++r) {
    double* row = rows + r * n_cols;
    std::size_t j = 0;
    for (; j < n2; j += 2) {
      vst1q_f64(row + j, vaddq_f64(vld1q_f64(row + j), vld1q_f64(bias + j)));
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
  const float64x2_t b1v = vdupq_n_f64(beta1);
  const float64x2_t b2v = vdupq_n_f64(beta2);
  const float64x2_t ob1v = vdupq_n_f64(one_minus_b1);
  const float64x2_t ob2v = vdupq_n_f64(one_minus_b2);
  const float64x2_t bc1v = vdupq_n_f64(bc1);
  const float64x2_t bc2v = vdupq_n_f64(bc2);
  const float64x2_t epsv = vdupq_n_f64(eps);
  const float64x2_t lrv = vdupq_n_f64(lr);
  std::size_t i = 0;
  for (; i + 2 <= n; i += 2) {
    const float64x2_t gv = vld1q_f64(g + i);
    float64x2_t mv = vld1q_f64(m + i);
    float64x2_t vv = vld1q_f64(v + i);
    mv = vaddq_f64(vmulq_f64(b1v, mv), vmulq_f64(ob1v, gv));
    vv = vaddq_f64(vmulq_f64(b2v, vv), vmulq_f64(ob2v, vmulq_f64(gv, gv)));
    vst1q_f64(m + i, mv);
    vst1q_f64(v + i, vv);
    const float64x2_t mhat = vdivq_f64(mv, bc1v);
    const float64x2_t vhat = vdivq_f64(vv, bc2v);
    const float64x2_t denom = vaddq_f64(vsqrtq_f64(vhat), epsv);
    const float64x2_t step = vmulq_f64(lrv, vdivq_f64(mhat, denom));
    vst1q_f64(p + i, vsubq_f64(vld1q_f64(p + i), step));
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

}  // namespace echoes::kernels::neon

#endif  // __aarch64__
