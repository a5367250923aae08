#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <stdexcept>
#include <vector>

#include "moe_affect/mat.hpp"

namespace moe_affect {

/// Reverse-mode gradient tape over dense matrices. Covers exactly the fixed
/// layer set the classifier needs; not a general-purpose graph engine.
///
/// Usage: push inputs, build the computation, call backward() on a 1x1
/// output, then read grad(id) for any input.
template <class T>
class Tape {
 public:
  using Id = std::size_t;

  Id input(Mat<T> v) { return push(std::move(v)); }

  const Mat<T>& val(Id id) const { return slots_[id].val; }
  const Mat<T>& grad(Id id) const { return slots_[id].grad; }
  Mat<T>& grad(Id id) { return slots_[id].grad; }

  Id matmul(Id a, Id b) {
    Id out = push(moe_affect::matmul(val(a), val(b)));
    backs_.push_back([this, a, b, out] {
      const Mat<T>& g = grad(out);
      accumulate(grad(a), moe_affect::matmul(g, moe_affect::transpose(val(b))));
      accumulate(grad(b), moe_affect::matmul(moe_affect::transpose(val(a)), g));
    });
    return out;
  }

  Id add(Id a, Id b) {
    const Mat<T>&x = val(a), &y = val(b);
    if (!x.same_shape(y)) throw std::invalid_argument("add: shape mismatch");
    Mat<T> z = x;
    for (std::size_t i = 0; i < z.size(); ++i) z.a[i] += y.a[i];
    Id out = push(std::move(z));
    backs_.push_back([this, a, b, out] {
      const Mat<T>& g = grad(out);
      accumulate(grad(a), g);
      accumulate(grad(b), g);
    });
    return out;
  }

  /// x [n x d] + b [1 x d], broadcast over rows.
  Id add_row_broadcast(Id a, Id b) {
    const Mat<T>&x = val(a), &bias = val(b);
    if (bias.rows != 1 || bias.cols != x.cols)
      throw std::invalid_argument("add_row_broadcast: bias shape mismatch");
    Mat<T> z = x;
    for (std::size_t i = 0; i < x.rows; ++i)
      for (std::size_t j = 0; j < x.cols; ++j) z(i, j) += bias(0, j);
    Id out = push(std::move(z));
    backs_.push_back([this, a, b, out] {
      const Mat<T>& g = grad(out);
      accumulate(grad(a), g);
      Mat<T>& gb = grad(b);
      for (std::size_t i = 0; i < g.rows; ++i)
        for (std::size_t j = 0; j < g.cols; ++j) gb(0, j) += g(i, j);
    });
    return out;
  }

  Id scale(Id a, T c) {
    Mat<T> z = val(a);
    for (T& v : z.a) v *= c;
    Id out = push(std::move(z));
    backs_.push_back([this, a, c, out] {
      const Mat<T>& g = grad(out);
      Mat<T>& ga = grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga.a[i] += c * g.a[i];
    });
    return out;
  }

  Id hadamard(Id a, Id b) {
    const Mat<T>&x = val(a), &y = val(b);
    if (!x.same_shape(y)) throw std::invalid_argument("hadamard: shape mismatch");
    Mat<T> z = x;
    for (std::size_t i = 0; i < z.size(); ++i) z.a[i] *= y.a[i];
    Id out = push(std::move(z));
    backs_.push_back([this, a, b, out] {
      const Mat<T>& g = grad(out);
      Mat<T>&ga = grad(a), &gb = grad(b);
      const Mat<T>&x = val(a), &y = val(b);
      for (std::size_t i = 0; i < g.size(); ++i) {
        ga.a[i] += g.a[i] * y.a[i];
        gb.a[i] += g.a[i] * x.a[i];
      }
    });
    return out;
  }

  /// m [n x k] scaled row-wise by column vector w [n x 1].
  Id col_broadcast_mul(Id a, Id w) {
    const Mat<T>&x = val(a), &c = val(w);
    if (c.cols != 1 || c.rows != x.rows)
      throw std::invalid_argument("col_broadcast_mul: weight shape mismatch");
    Mat<T> z = x;
    for (std::size_t i = 0; i < x.rows; ++i)
      for (std::size_t j = 0; j < x.cols; ++j) z(i, j) *= c(i, 0);
    Id out = push(std::move(z));
    backs_.push_back([this, a, w, out] {
      const Mat<T>& g = grad(out);
      const Mat<T>&x = val(a), &c = val(w);
      Mat<T>&ga = grad(a), &gw = grad(w);
      for (std::size_t i = 0; i < g.rows; ++i)
        for (std::size_t j = 0; j < g.cols; ++j) {
          ga(i, j) += g(i, j) * c(i, 0);
          gw(i, 0) += g(i, j) * x(i, j);
        }
    });
    return out;
  }

  /// Numerically stable row softmax (max subtraction).
  Id softmax_rows(Id a) {
    const Mat<T>& x = val(a);
    Mat<T> z(x.rows, x.cols);
    for (std::size_t i = 0; i < x.rows; ++i) {
      T m = x(i, 0);
      for (std::size_t j = 1; j < x.cols; ++j) m = std::max(m, x(i, j));
      T sum = 0;
      for (std::size_t j = 0; j < x.cols; ++j) {
        z(i, j) = std::exp(x(i, j) - m);
        sum += z(i, j);
      }
      for (std::size_t j = 0; j < x.cols; ++j) z(i, j) /= sum;
    }
    Id out = push(std::move(z));
    backs_.push_back([this, a, out] {
      const Mat<T>&p = val(out), &g = grad(out);
      Mat<T>& ga = grad(a);
      for (std::size_t i = 0; i < p.rows; ++i) {
        T dot = 0;
        for (std::size_t j = 0; j < p.cols; ++j) dot += g(i, j) * p(i, j);
        for (std::size_t j = 0; j < p.cols; ++j)
          ga(i, j) += p(i, j) * (g(i, j) - dot);
      }
    });
    return out;
  }

  /// Exact (erf-based) GELU.
  Id gelu(Id a) {
    const Mat<T>& x = val(a);
    Mat<T> z = x;
    for (T& v : z.a) {
      double xv = static_cast<double>(v);
      v = static_cast<T>(0.5 * xv * (1.0 + std::erf(xv * 0.7071067811865475244)));
    }
    Id out = push(std::move(z));
    backs_.push_back([this, a, out] {
      const Mat<T>&x = val(a), &g = grad(out);
      Mat<T>& ga = grad(a);
      for (std::size_t i = 0; i < x.size(); ++i) {
        double xv = static_cast<double>(x.a[i]);
        double cdf = 0.5 * (1.0 + std::erf(xv * 0.7071067811865475244));
        double pdf = 0.3989422804014326779 * std::exp(-0.5 * xv * xv);
        ga.a[i] += g.a[i] * static_cast<T>(cdf + xv * pdf);
      }
    });
    return out;
  }

  /// Per-row layer norm with affine rescale: out = gamma * (x-mu)/sigma + beta.
  Id layer_norm_rows(Id a, Id gamma, Id beta, T eps = T(1e-5)) {
    const Mat<T>&x = val(a), &gm = val(gamma), &bt = val(beta);
    if (gm.rows != 1 || gm.cols != x.cols || bt.rows != 1 || bt.cols != x.cols)
      throw std::invalid_argument("layer_norm_rows: affine shape mismatch");
    std::size_t d = x.cols;
    Mat<T> norm(x.rows, d);  // pre-affine normalized values, cached for backward
    Mat<T> inv_sigma(x.rows, 1);
    Mat<T> z(x.rows, d);
    for (std::size_t i = 0; i < x.rows; ++i) {
      T mu = 0;
      for (std::size_t j = 0; j < d; ++j) mu += x(i, j);
      mu /= static_cast<T>(d);
      T var = 0;
      for (std::size_t j = 0; j < d; ++j) {
        T c = x(i, j) - mu;
        var += c * c;
      }
      var /= static_cast<T>(d);
      T is = T(1) / std::sqrt(var + eps);
      inv_sigma(i, 0) = is;
      for (std::size_t j = 0; j < d; ++j) {
        norm(i, j) = (x(i, j) - mu) * is;
        z(i, j) = norm(i, j) * gm(0, j) + bt(0, j);
      }
    }
    Id out = push(std::move(z));
    backs_.push_back([this, a, gamma, beta, out, norm = std::move(norm),
                      inv_sigma = std::move(inv_sigma)] {
      const Mat<T>&g = grad(out), &gm = val(gamma);
      Mat<T>&ga = grad(a), &ggm = grad(gamma), &gbt = grad(beta);
      std::size_t d = norm.cols;
      for (std::size_t i = 0; i < norm.rows; ++i) {
        T mean_gy = 0, mean_gyn = 0;
        for (std::size_t j = 0; j < d; ++j) {
          T gy = g(i, j) * gm(0, j);
          mean_gy += gy;
          mean_gyn += gy * norm(i, j);
          ggm(0, j) += g(i, j) * norm(i, j);
          gbt(0, j) += g(i, j);
        }
        mean_gy /= static_cast<T>(d);
        mean_gyn /= static_cast<T>(d);
        for (std::size_t j = 0; j < d; ++j) {
          T gy = g(i, j) * gm(0, j);
          ga(i, j) += (gy - mean_gy - norm(i, j) * mean_gyn) * inv_sigma(i, 0);
        }
      }
    });
    return out;
  }

  /// Column-wise concatenation; gradient splits back per input.
  Id concat_cols(const std::vector<Id>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: empty input");
    std::size_t rows = val(parts[0]).rows, cols = 0;
    for (Id p : parts) {
      if (val(p).rows != rows) throw std::invalid_argument("concat_cols: row-count mismatch");
      cols += val(p).cols;
    }
    Mat<T> z(rows, cols);
    std::size_t off = 0;
    for (Id p : parts) {
      const Mat<T>& x = val(p);
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < x.cols; ++j) z(i, off + j) = x(i, j);
      off += x.cols;
    }
    Id out = push(std::move(z));
    backs_.push_back([this, parts, out] {
      const Mat<T>& g = grad(out);
      std::size_t off = 0;
      for (Id p : parts) {
        Mat<T>& gp = grad(p);
        for (std::size_t i = 0; i < gp.rows; ++i)
          for (std::size_t j = 0; j < gp.cols; ++j) gp(i, j) += g(i, off + j);
        off += gp.cols;
      }
    });
    return out;
  }

  Id concat_rows(const std::vector<Id>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: empty input");
    std::size_t cols = val(parts[0]).cols, rows = 0;
    for (Id p : parts) {
      if (val(p).cols != cols) throw std::invalid_argument("concat_rows: column-count mismatch");
      rows += val(p).rows;
    }
    Mat<T> z(rows, cols);
    std::size_t off = 0;
    for (Id p : parts) {
      const Mat<T>& x = val(p);
      for (std::size_t i = 0; i < x.rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) z(off + i, j) = x(i, j);
      off += x.rows;
    }
    Id out = push(std::move(z));
    backs_.push_back([this, parts, out] {
      const Mat<T>& g = grad(out);
      std::size_t off = 0;
      for (Id p : parts) {
        Mat<T>& gp = grad(p);
        for (std::size_t i = 0; i < gp.rows; ++i)
          for (std::size_t j = 0; j < gp.cols; ++j) gp(i, j) += g(off + i, j);
        off += gp.rows;
      }
    });
    return out;
  }

  Id slice_rows(Id a, std::size_t r0, std::size_t r1) {
    const Mat<T>& x = val(a);
    if (r1 > x.rows || r0 >= r1) throw std::invalid_argument("slice_rows: bad range");
    Mat<T> z(r1 - r0, x.cols);
    for (std::size_t i = r0; i < r1; ++i)
      for (std::size_t j = 0; j < x.cols; ++j) z(i - r0, j) = x(i, j);
    Id out = push(std::move(z));
    backs_.push_back([this, a, r0, out] {
      const Mat<T>& g = grad(out);
      Mat<T>& ga = grad(a);
      for (std::size_t i = 0; i < g.rows; ++i)
        for (std::size_t j = 0; j < g.cols; ++j) ga(r0 + i, j) += g(i, j);
    });
    return out;
  }

  Id slice_cols(Id a, std::size_t c0, std::size_t c1) {
    const Mat<T>& x = val(a);
    if (c1 > x.cols || c0 >= c1) throw std::invalid_argument("slice_cols: bad range");
    Mat<T> z(x.rows, c1 - c0);
    for (std::size_t i = 0; i < x.rows; ++i)
      for (std::size_t j = c0; j < c1; ++j) z(i, j - c0) = x(i, j);
    Id out = push(std::move(z));
    backs_.push_back([this, a, c0, out] {
      const Mat<T>& g = grad(out);
      Mat<T>& ga = grad(a);
      for (std::size_t i = 0; i < g.rows; ++i)
        for (std::size_t j = 0; j < g.cols; ++j) ga(i, c0 + j) += g(i, j);
    });
    return out;
  }

  Id transpose(Id a) {
    Id out = push(moe_affect::transpose(val(a)));
    backs_.push_back([this, a, out] {
      accumulate(grad(a), moe_affect::transpose(grad(out)));
    });
    return out;
  }

  /// probs [n x k], one entry per row at the target class -> [n x 1].
  Id pick_per_row(Id a, const std::vector<std::size_t>& idx) {
    const Mat<T>& x = val(a);
    if (idx.size() != x.rows) throw std::invalid_argument("pick_per_row: index count mismatch");
    Mat<T> z(x.rows, 1);
    for (std::size_t i = 0; i < x.rows; ++i) {
      if (idx[i] >= x.cols) throw std::invalid_argument("pick_per_row: index out of range");
      z(i, 0) = x(i, idx[i]);
    }
    Id out = push(std::move(z));
    backs_.push_back([this, a, idx, out] {
      const Mat<T>& g = grad(out);
      Mat<T>& ga = grad(a);
      for (std::size_t i = 0; i < g.rows; ++i) ga(i, idx[i]) += g(i, 0);
    });
    return out;
  }

  /// ln(max(x, floor)); gradient is zero where the clamp is active.
  Id log_clamped(Id a, T floor) {
    const Mat<T>& x = val(a);
    Mat<T> z = x;
    for (T& v : z.a) v = std::log(std::max(v, floor));
    Id out = push(std::move(z));
    backs_.push_back([this, a, floor, out] {
      const Mat<T>&x = val(a), &g = grad(out);
      Mat<T>& ga = grad(a);
      for (std::size_t i = 0; i < x.size(); ++i)
        if (x.a[i] > floor) ga.a[i] += g.a[i] / x.a[i];
    });
    return out;
  }

  /// max(x, floor)^p elementwise, floor > 0.
  Id pow_clamped(Id a, T p, T floor) {
    const Mat<T>& x = val(a);
    Mat<T> z = x;
    for (T& v : z.a) v = std::pow(std::max(v, floor), p);
    Id out = push(std::move(z));
    backs_.push_back([this, a, p, floor, out] {
      const Mat<T>&x = val(a), &g = grad(out);
      Mat<T>& ga = grad(a);
      for (std::size_t i = 0; i < x.size(); ++i) {
        T b = x.a[i];
        if (b > floor) ga.a[i] += g.a[i] * p * std::pow(b, p - T(1));
      }
    });
    return out;
  }

  Id one_minus(Id a) {
    Mat<T> z = val(a);
    for (T& v : z.a) v = T(1) - v;
    Id out = push(std::move(z));
    backs_.push_back([this, a, out] {
      const Mat<T>& g = grad(out);
      Mat<T>& ga = grad(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga.a[i] -= g.a[i];
    });
    return out;
  }

  /// Mean of all entries -> [1 x 1].
  Id mean_all(Id a) {
    const Mat<T>& x = val(a);
    T s = 0;
    for (T v : x.a) s += v;
    Mat<T> z(1, 1);
    z(0, 0) = s / static_cast<T>(x.size());
    Id out = push(std::move(z));
    backs_.push_back([this, a, out] {
      T g = grad(out)(0, 0);
      Mat<T>& ga = grad(a);
      T c = g / static_cast<T>(ga.size());
      for (T& v : ga.a) v += c;
    });
    return out;
  }

  /// x [n x r*h] -> sum over the r rank blocks -> [n x h].
  Id sum_rank_blocks(Id a, std::size_t rank, std::size_t h) {
    const Mat<T>& x = val(a);
    if (x.cols != rank * h) throw std::invalid_argument("sum_rank_blocks: shape mismatch");
    Mat<T> z(x.rows, h);
    for (std::size_t i = 0; i < x.rows; ++i)
      for (std::size_t r = 0; r < rank; ++r)
        for (std::size_t j = 0; j < h; ++j) z(i, j) += x(i, r * h + j);
    Id out = push(std::move(z));
    backs_.push_back([this, a, rank, h, out] {
      const Mat<T>& g = grad(out);
      Mat<T>& ga = grad(a);
      for (std::size_t i = 0; i < g.rows; ++i)
        for (std::size_t r = 0; r < rank; ++r)
          for (std::size_t j = 0; j < h; ++j) ga(i, r * h + j) += g(i, j);
    });
    return out;
  }

  /// Appends a constant 1 column (low-rank fusion input lift).
  Id append_ones_col(Id a) {
    const Mat<T>& x = val(a);
    Mat<T> z(x.rows, x.cols + 1);
    for (std::size_t i = 0; i < x.rows; ++i) {
      for (std::size_t j = 0; j < x.cols; ++j) z(i, j) = x(i, j);
      z(i, x.cols) = T(1);
    }
    Id out = push(std::move(z));
    backs_.push_back([this, a, out] {
      const Mat<T>& g = grad(out);
      Mat<T>& ga = grad(a);
      for (std::size_t i = 0; i < ga.rows; ++i)
        for (std::size_t j = 0; j < ga.cols; ++j) ga(i, j) += g(i, j);
    });
    return out;
  }

  /// Runs reverse accumulation from a 1x1 scalar output.
  void backward(Id out) {
    if (val(out).rows != 1 || val(out).cols != 1)
      throw std::invalid_argument("backward: output must be scalar");
    grad(out)(0, 0) = T(1);
    for (auto it = backs_.rbegin(); it != backs_.rend(); ++it) (*it)();
  }

  std::size_t node_count() const { return slots_.size(); }

 private:
  struct Slot {
    Mat<T> val;
    Mat<T> grad;
  };

  Id push(Mat<T> v) {
#ifndef NDEBUG
    if (!v.all_finite()) throw std::runtime_error("tape: non-finite value produced");
#endif
    Slot s;
    s.grad = Mat<T>(v.rows, v.cols);
    s.val = std::move(v);
    slots_.push_back(std::move(s));
    return slots_.size() - 1;
  }

  static void accumulate(Mat<T>& dst, const Mat<T>& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst.a[i] += src.a[i];
  }

  std::vector<Slot> slots_;
  std::vector<std::function<void()>> backs_;
};

}  // namespace moe_affect
