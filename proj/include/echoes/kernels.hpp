// Data-parallel inner loops behind the numeric stack: scalar reference
// kernels plus SIMD variants (AVX2 on x86-64, NEON on arm64) selected at
// runtime. Every backend is bit-for-bit equivalent to the scalar reference:
// per output element the operation order is identical, nothing is contracted
// into FMA, and only IEEE correctly-rounded vector ops (mul/add/div/sqrt,
// lane-wise select) are used. Equivalence is enforced by tests.
#pragma once

#include <cstddef>
#include <string>

namespace echoes::kernels {

enum class Backend { Scalar, Avx2, Neon };

struct Ops {
  // c = a * b with a: m x k, b: k x n, c: m x n, all row-major. c is
  // overwritten. Accumulation order over the inner dimension is ascending
  // for every output element, in every backend.
  void (*matmul)(const double* a, const double* b, double* c,
                 std::size_t m, std::size_t k, std::size_t n);
  // y[i] = max(x[i], 0)
  void (*relu)(const double* x, double* y, std::size_t n);
  // g_out[i] = pre[i] > 0 ? g_in[i] : 0
  void (*relu_grad)(const double* pre, const double* g_in, double* g_out,
                    std::size_t n);
  // rows[r] += bias for each of n_rows rows of length n_cols
  void (*add_bias)(double* rows, const double* bias, std::size_t n_rows,
                   std::size_t n_cols);
  // Bias-corrected Adam, elementwise:
  //   m = b1*m + (1-b1)*g
  //   v = b2*v + (1-b2)*(g*g)
  //   p -= lr * (m/bc1) / (sqrt(v/bc2) + eps)
  // bc1, bc2 are the bias corrections (1 - b1^t), (1 - b2^t).
  void (*adam_update)(double* p, double* m, double* v, const double* g,
                      std::size_t n, double lr, double beta1, double beta2,
                      double eps, double bc1, double bc2);
};

// Table of the active backend. The first call selects the best supported
// backend, or the one named in the ECHOES_BACKEND environment variable
// ("scalar", "avx2", "neon", "auto"). An unknown or unsupported name throws.
const Ops& ops();
Backend active_backend();

bool backend_supported(Backend b);
// Force a backend (used by equivalence tests). Returns false if unsupported.
bool set_backend(Backend b);
const Ops& ops_for(Backend b);  // throws std::runtime_error if unsupported
const char* backend_name(Backend b);

namespace scalar {
void matmul(const double* a, const double* b, double* c,
            std::size_t m, std::size_t k, std::size_t n);
void relu(const double* x, double* y, std::size_t n);
void relu_grad(const double* pre, const double* g_in, double* g_out,
               std::size_t n);
void add_bias(double* rows, const double* bias, std::size_t n_rows,
              std::size_t n_cols);
void adam_update(double* p, double* m, double* v, const double* g,
                 std::size_t n, double lr, double beta1, double beta2,
                 double eps, double bc1, double bc2);
}  // namespace scalar

}  // namespace echoes::kernels
