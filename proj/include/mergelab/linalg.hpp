#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "mergelab/common.hpp"

namespace mergelab {

using Vec = std::vector<double>;

// Row-major dense matrix. Small enough that hand-rolled loops beat pulling
// in a linear algebra dependency for an MLP of this size.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
};

inline Vec matvec(const Matrix& m, const Vec& x) {
  if (x.size() != m.cols) throw ShapeError("matvec: dimension mismatch");
  Vec out(m.rows, 0.0);
  for (std::size_t r = 0; r < m.rows; ++r) {
    double acc = 0.0;
    const double* row = m.data.data() + r * m.cols;
    for (std::size_t c = 0; c < m.cols; ++c) acc += row[c] * x[c];
    out[r] = acc;
  }
  return out;
}

// y += M^T x
inline void add_matvec_transposed(const Matrix& m, const Vec& x, Vec& y) {
  if (x.size() != m.rows || y.size() != m.cols) throw ShapeError("matvec^T: dimension mismatch");
  for (std::size_t r = 0; r < m.rows; ++r) {
    const double* row = m.data.data() + r * m.cols;
    for (std::size_t c = 0; c < m.cols; ++c) y[c] += row[c] * x[r];
  }
}

inline double dot(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) throw ShapeError("dot: dimension mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double norm(const Vec& a) { return std::sqrt(dot(a, a)); }

// Numerically shifted softmax; temperature is divided out before the shift.
inline Vec softmax(const Vec& scores, double temperature) {
  Vec out(scores.size());
  double mx = -1e300;
  for (double s : scores) mx = std::max(mx, s / temperature);
  double z = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out[i] = std::exp(scores[i] / temperature - mx);
    z += out[i];
  }
  for (double& p : out) p /= z;
  return out;
}

}  // namespace mergelab
