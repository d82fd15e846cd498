// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <vector>

#include "psage/error.hpp"
#include "psage/matrix.hpp"
#include "psage/rng.hpp"

namespace psage {

using NeighborLists = std::vector<std::vector<std::size_t>>;

/// Mean (or weighted mean) of neighbour rows. Row i of the output is
/// sum_j c_ij x_j with c_ij = 1/|N(i)|, or w_ij / sum_{k in N(i)} w_ik when
/// weights are supplied. The complete unweighted case never materialises the
/// N x N coefficient matrix.
class MeanAggregator {
 public:
  /// N(i) = every node except i.
  static MeanAggregator complete(std::size_t n) {
    require(n >= 2, ErrorKind::invalid_graph, "a complete neighbourhood needs at least two nodes");
    MeanAggregator agg;
    agg.n_ = n;
    agg.complete_ = true;
    return agg;
  }

  /// N(i) = every node except i, weighted by w_ij (diagonal ignored).
  static MeanAggregator complete_weighted(const Matrix& weights) {
    const std::size_t n = weights.rows();
    require(weights.cols() == n, ErrorKind::shape, "edge weights must be square");
    NeighborLists lists(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (j != i) lists[i].push_back(j);
    return from_lists(lists, &weights);
  }

  static MeanAggregator from_lists(const NeighborLists& lists, const Matrix* weights = nullptr) {
    const std::size_t n = lists.size();
    if (weights)
      require(weights->rows() == n && weights->cols() == n, ErrorKind::shape,
              "edge weights " + shape_string(*weights) + " do not match " + std::to_string(n) + " nodes");
    MeanAggregator agg;
    agg.n_ = n;
    agg.coeff_ = Matrix(n, n);
    for (std::size_t i = 0; i < n; ++i) {
      require(!lists[i].empty(), ErrorKind::invalid_graph,
              "node " + std::to_string(i) + " has an empty neighbour list");
      double total = 0.0;
      for (std::size_t j : lists[i]) {
        require(j < n, ErrorKind::invalid_graph, "neighbour index out of range");
        const double w = weights ? (*weights)(i, j) : 1.0;
        require(std::isfinite(w) && w >= 0.0, ErrorKind::invalid_graph, "edge weights must be finite and >= 0");
        total += w;
      }
      require(total > 0.0, ErrorKind::invalid_graph,
              "node " + std::to_string(i) + " has zero total neighbour weight");
      for (std::size_t j : lists[i]) agg.coeff_(i, j) += (weights ? (*weights)(i, j) : 1.0) / total;
    }
    return agg;
  }

  std::size_t nodes() const noexcept { return n_; }
  bool is_complete_unweighted() const noexcept { return complete_; }

  Matrix forward(const Matrix& x) const {
    require(x.rows() == n_, ErrorKind::shape,
            "aggregator over " + std::to_string(n_) + " nodes given " + shape_string(x));
    if (complete_) return complete_mean(x);
    return matmul(coeff_, x);
  }

  /// d_x += C^T d_out.
  void backward(const Matrix& d_out, Matrix& d_x) const {
    require(d_out.rows() == n_ && d_x.same_shape(d_out), ErrorKind::shape, "aggregator backward shapes");
    if (complete_) {
      // The complete-graph coefficient matrix is symmetric.
      d_x += complete_mean(d_out);
      return;
    }
    add_matmul_tn(d_x, coeff_, d_out);
  }

  /// Dense coefficient matrix (materialised on demand for the complete case).
  Matrix coefficients() const {
    if (!complete_) return coeff_;
    Matrix c(n_, n_, 1.0 / static_cast<double>(n_ - 1));
    for (std::size_t i = 0; i < n_; ++i) c(i, i) = 0.0;
    return c;
  }

 private:
  Matrix complete_mean(const Matrix& x) const {
    const std::size_t f = x.cols();
    std::vector<double> total(f, 0.0);
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = 0; j < f; ++j) total[j] += x(i, j);
    const double inv = 1.0 / static_cast<double>(n_ - 1);
    Matrix out(n_, f);
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t j = 0; j < f; ++j) out(i, j) = (total[j] - x(i, j)) * inv;
    return out;
  }

  std::size_t n_ = 0;
  bool complete_ = false;
  Matrix coeff_;
};

inline Matrix mean_aggregate(const Matrix& x, const NeighborLists& lists, const Matrix* weights = nullptr) {
  return MeanAggregator::from_lists(lists, weights).forward(x);
}

// Elementwise activations. Derivatives of sigmoid and tanh are expressed in
// terms of the forward output, which is what the backward passes cache.

inline double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
inline double sigmoid_grad_from_output(double y) noexcept { return y * (1.0 - y); }
inline double tanh_grad_from_output(double y) noexcept { return 1.0 - y * y; }

inline double hardswish(double x) noexcept { return x * std::min(std::max(x + 3.0, 0.0), 6.0) / 6.0; }
inline double hardswish_grad(double x) noexcept {
  if (x <= -3.0) return 0.0;
  if (x >= 3.0) return 1.0;
  return (2.0 * x + 3.0) / 6.0;
}

template <class F>
Matrix map(const Matrix& m, F&& f) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.size(); ++i) out.data()[i] = f(m.data()[i]);
  return out;
}

inline Matrix sigmoid(const Matrix& m) { return map(m, [](double v) { return sigmoid(v); }); }
inline Matrix tanh(const Matrix& m) { return map(m, [](double v) { return std::tanh(v); }); }
inline Matrix hardswish(const Matrix& m) { return map(m, [](double v) { return hardswish(v); }); }

/// d_x = d_y * hardswish'(x).
inline Matrix hardswish_backward(const Matrix& x, const Matrix& d_y) {
  require(x.same_shape(d_y), ErrorKind::shape, "hardswish backward shapes");
  Matrix d(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) d.data()[i] = d_y.data()[i] * hardswish_grad(x.data()[i]);
  return d;
}

/// Inverted dropout. The mask (0 or 1/(1-p) per entry) is kept for backward.
class Dropout {
 public:
  Matrix forward(const Matrix& x, double p, bool training, Rng& rng) {
    require(p >= 0.0 && p < 1.0, ErrorKind::invalid_input, "dropout probability must be in [0, 1)");
    active_ = training && p > 0.0;
    if (!active_) return x;
    mask_ = Matrix(x.rows(), x.cols());
    const double keep_scale = 1.0 / (1.0 - p);
    Matrix out(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double m = rng.uniform() < p ? 0.0 : keep_scale;
      mask_.data()[i] = m;
      out.data()[i] = x.data()[i] * m;
    }
    return out;
  }

  Matrix backward(const Matrix& d_y) const {
    if (!active_) return d_y;
    return hadamard(d_y, mask_);
  }

  bool active() const noexcept { return active_; }
  const Matrix& mask() const noexcept { return mask_; }

 private:
  bool active_ = false;
  Matrix mask_;
};

inline double mse_loss(const Matrix& pred, const Matrix& target) {
  require(pred.same_shape(target), ErrorKind::shape,
          "mse of " + shape_string(pred) + " against " + shape_string(target));
  require(pred.size() > 0, ErrorKind::invalid_input, "mse of empty matrices");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred.data()[i] - target.data()[i];
    s += d * d;
  }
  return s / static_cast<double>(pred.size());
}

/// d pred = 2 (pred - target) / count.
inline Matrix mse_backward(const Matrix& pred, const Matrix& target) {
  require(pred.same_shape(target), ErrorKind::shape, "mse backward shapes");
  Matrix d(pred.rows(), pred.cols());
  const double scale = 2.0 / static_cast<double>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) d.data()[i] = scale * (pred.data()[i] - target.data()[i]);
  return d;
}

}  // namespace psage
