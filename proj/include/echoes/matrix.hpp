// Row-major dense matrix of doubles plus the handful of shape-checked
// operations the network needs. Arithmetic runs through the kernel dispatch
// layer; transpose is pure data movement and stays here.
#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "echoes/kernels.hpp"

namespace echoes {

struct Matrix2D {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;  // row-major, rows * cols entries

  Matrix2D() = default;
  Matrix2D(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), values(r * c, fill) {}

  double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  double* row(std::size_t r) { return values.data() + r * cols; }
  const double* row(std::size_t r) const { return values.data() + r * cols; }
  std::size_t size() const { return values.size(); }

  bool finite() const {
    for (const double v : values) {
      if (!std::isfinite(v)) {
        return false;
      }
    }
    return true;
  }
};

inline Matrix2D matmul(const Matrix2D& a, const Matrix2D& b) {
  if (a.cols != b.rows) {
    throw std::invalid_argument("matmul: shape mismatch (" +
                                std::to_string(a.rows) + "x" + std::to_string(a.cols) +
                                " * " + std::to_string(b.rows) + "x" +
                                std::to_string(b.cols) + ")");
  }
  Matrix2D c(a.rows, b.cols);
  kernels::ops().matmul(a.values.data(), b.values.data(), c.values.data(),
                        a.rows, a.cols, b.cols);
  return c;
}

inline Matrix2D transpose(const Matrix2D& a) {
  Matrix2D t(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i) {
    for (std::size_t j = 0; j < a.cols; ++j) {
      t.values[j * a.rows + i] = a.values[i * a.cols + j];
    }
  }
  return t;
}

}  // namespace echoes
