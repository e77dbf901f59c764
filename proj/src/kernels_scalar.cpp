// Scalar reference kernels. These define the numeric contract; the SIMD
// variants must reproduce them bit for bit.
#include "echoes/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace echoes::kernels::scalar {

void matmul(const double* a, const double* b, double* c,
            std::size_t m, std::size_t k, std::size_t n) {
  std::fill(c, c + m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      const double* brow = b + kk * n;
      for (std::size_t j = 0; j < n; ++j) {
        crow[j] += av * brow[j];
      }
    }
  }
}

void relu(const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = x[i] > 0.0 ? x[i] : 0.0;
  }
}

void relu_grad(const double* pre, const double* g_in, double* g_out,
               std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    g_out[i] = pre[i] > 0.0 ? g_in[i] : 0.0;
  }
}

void add_bias(double* rows, const double* bias, std::size_t n_rows,
              std::size_t n_cols) {
  for (std::size_t r = 0; r < n_rows; ++r) {
    double* row = rows + r * n_cols;
    for (std::size_t j = 0; j < n_cols; ++j) {
      row[j] += bias[j];
    }
  }
}

void adam_update(double* p, double* m, double* v, const double* g,
                 std::size_t n, double lr, double beta1, double beta2,
                 double eps, double bc1, double bc2) {
  const double one_minus_b1 = 1.0 - beta1;
  const double one_minus_b2 = 1.0 - beta2;
  for (std::size_t i = 0; i < n; ++i) {
    const double gi = g[i];
    m[i] = beta1 * m[i] + one_minus_b1 * gi;
    v[i] = beta2 * v[i] + one_minus_b2 * (gi * gi);
    const double mhat = m[i] / bc1;
    const double vhat = v[i] / bc2;
    p[i] -= lr * (mhat / (std::sqrt(vhat) + eps));
  }
}

}  // namespace echoes::kernels::scalar
