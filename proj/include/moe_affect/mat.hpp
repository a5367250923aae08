#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace moe_affect {

/// Dense row-major matrix. Rank-3 data (batch of sequences) is kept as a
/// vector of Mat since sequence lengths are ragged.
template <class T>
struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> a;

  Mat() = default;
  Mat(std::size_t r, std::size_t c, T fill = T(0)) : rows(r), cols(c), a(r * c, fill) {}

  T& operator()(std::size_t i, std::size_t j) { return a[i * cols + j]; }
  const T& operator()(std::size_t i, std::size_t j) const { return a[i * cols + j]; }

  std::size_t size() const { return a.size(); }

  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

  bool all_finite() const {
    for (T v : a)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  template <class U>
  Mat<U> cast() const {
    Mat<U> out(rows, cols);
    for (std::size_t i = 0; i < a.size(); ++i) out.a[i] = static_cast<U>(a[i]);
    return out;
  }

  bool operator==(const Mat& o) const {
    return rows == o.rows && cols == o.cols && a == o.a;
  }
};

template <class T>
Mat<T> matmul(const Mat<T>& x, const Mat<T>& y) {
  if (x.cols != y.rows) throw std::invalid_argument("matmul: inner dimension mismatch");
  Mat<T> z(x.rows, y.cols);
  for (std::size_t i = 0; i < x.rows; ++i)
    for (std::size_t k = 0; k < x.cols; ++k) {
      T xv = x(i, k);
      if (xv == T(0)) continue;
      for (std::size_t j = 0; j < y.cols; ++j) z(i, j) += xv * y(k, j);
    }
  return z;
}

template <class T>
Mat<T> transpose(const Mat<T>& x) {
  Mat<T> z(x.cols, x.rows);
  for (std::size_t i = 0; i < x.rows; ++i)
    for (std::size_t j = 0; j < x.cols; ++j) z(j, i) = x(i, j);
  return z;
}

}  // namespace moe_affect
