// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "psage/error.hpp"
#include "psage/rng.hpp"

namespace psage {

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  Matrix(std::initializer_list<std::initializer_list<double>> init) {
    rows_ = init.size();
    cols_ = rows_ ? init.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& row : init) {
      require(row.size() == cols_, ErrorKind::shape, "ragged matrix initializer");
      data_.insert(data_.end(), row.begin(), row.end());
    }
  }

  static Matrix column(std::span<const double> values) {
    Matrix m(values.size(), 1);
    std::copy(values.begin(), values.end(), m.data_.begin());
    return m;
  }

  static Matrix row_vector(std::span<const double> values) {
    Matrix m(1, values.size());
    std::copy(values.begin(), values.end(), m.data_.begin());
    return m;
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }

  void fill(double v) noexcept { std::fill(data_.begin(), data_.end(), v); }
  void set_zero() noexcept { fill(0.0); }

  bool same_shape(const Matrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

  Matrix transposed() const {
    Matrix t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    return t;
  }

  Matrix& operator+=(const Matrix& o) {
    check_same(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  Matrix& operator-=(const Matrix& o) {
    check_same(o, "-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }

  Matrix& operator*=(double s) noexcept {
    for (double& v : data_) v *= s;
    return *this;
  }

  friend Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
  friend Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
  friend Matrix operator*(Matrix a, double s) { return a *= s; }

  friend bool operator==(const Matrix& a, const Matrix& b) noexcept {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

 private:
  void check_same(const Matrix& o, const char* op) const {
    require(same_shape(o), ErrorKind::shape,
            std::string("operator") + op + " on " + std::to_string(rows_) + "x" +
                std::to_string(cols_) + " and " + std::to_string(o.rows_) + "x" +
                std::to_string(o.cols_));
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline std::string shape_string(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

/// Learnable tensor: value plus an accumulated gradient of identical shape.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, Matrix v)
      : name(std::move(n)), value(std::move(v)), grad(value.rows(), value.cols()) {}

  void zero_grad() noexcept { grad.set_zero(); }
  std::size_t size() const noexcept { return value.size(); }
};

/// uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)) for a fan_in x fan_out weight.
inline Matrix uniform_fan_in(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  Matrix m(fan_in, fan_out);
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  for (double& v : m.values()) v = rng.uniform(-bound, bound);
  return m;
}

// C += A * B
inline void add_matmul(Matrix& c, const Matrix& a, const Matrix& b) {
  require(a.cols() == b.rows() && c.rows() == a.rows() && c.cols() == b.cols(), ErrorKind::shape,
          "matmul " + shape_string(a) + " * " + shape_string(b) + " -> " + shape_string(c));
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  for (std::size_t i = 0; i < n; ++i) {
    double* ci = c.data() + i * m;
    const double* ai = a.data() + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      if (aip == 0.0) continue;
      const double* bp = b.data() + p * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += aip * bp[j];
    }
  }
}

// C += A^T * B
inline void add_matmul_tn(Matrix& c, const Matrix& a, const Matrix& b) {
  require(a.rows() == b.rows() && c.rows() == a.cols() && c.cols() == b.cols(), ErrorKind::shape,
          "matmul_tn " + shape_string(a) + "^T * " + shape_string(b) + " -> " + shape_string(c));
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  for (std::size_t r = 0; r < n; ++r) {
    const double* ar = a.data() + r * k;
    const double* br = b.data() + r * m;
    for (std::size_t i = 0; i < k; ++i) {
      const double ari = ar[i];
      if (ari == 0.0) continue;
      double* ci = c.data() + i * m;
      for (std::size_t j = 0; j < m; ++j) ci[j] += ari * br[j];
    }
  }
}

// C += A * B^T
inline void add_matmul_nt(Matrix& c, const Matrix& a, const Matrix& b) {
  require(a.cols() == b.cols() && c.rows() == a.rows() && c.cols() == b.rows(), ErrorKind::shape,
          "matmul_nt " + shape_string(a) + " * " + shape_string(b) + "^T -> " + shape_string(c));
  const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
  for (std::size_t i = 0; i < n; ++i) {
    const double* ai = a.data() + i * k;
    double* ci = c.data() + i * m;
    for (std::size_t j = 0; j < m; ++j) {
      const double* bj = b.data() + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      ci[j] += s;
    }
  }
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.rows(), ErrorKind::shape,
          "matmul inner dimensions disagree: " + shape_string(a) + " * " + shape_string(b));
  Matrix c(a.rows(), b.cols());
  add_matmul(c, a, b);
  return c;
}

/// Accumulates dA += G B^T and dB += A^T G; either target may be null.
inline void matmul_backward(const Matrix& a, const Matrix& b, const Matrix& g, Matrix* da, Matrix* db) {
  if (da) add_matmul_nt(*da, g, b);
  if (db) add_matmul_tn(*db, a, g);
}

/// Adds a 1xF row vector to every row.
inline void add_row_broadcast(Matrix& m, const Matrix& row) {
  require(row.rows() == 1 && row.cols() == m.cols(), ErrorKind::shape,
          "row broadcast of " + shape_string(row) + " onto " + shape_string(m));
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += row(0, j);
  }
}

/// Accumulates column sums of g into a 1xF gradient (bias backward).
inline void add_column_sums(Matrix& grad_row, const Matrix& g) {
  require(grad_row.rows() == 1 && grad_row.cols() == g.cols(), ErrorKind::shape,
          "column sums of " + shape_string(g) + " into " + shape_string(grad_row));
  for (std::size_t i = 0; i < g.rows(); ++i) {
    auto r = g.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) grad_row(0, j) += r[j];
  }
}

inline Matrix hadamard(const Matrix& a, const Matrix& b) {
  require(a.same_shape(b), ErrorKind::shape, "hadamard " + shape_string(a) + " vs " + shape_string(b));
  Matrix c(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) c.data()[i] = a.data()[i] * b.data()[i];
  return c;
}

/// Rows reordered so that result row k is source row perm[k].
inline Matrix permute_rows(const Matrix& m, std::span<const std::size_t> perm) {
  require(perm.size() == m.rows(), ErrorKind::shape, "permutation length disagrees with rows");
  Matrix out(m.rows(), m.cols());
  for (std::size_t k = 0; k < perm.size(); ++k) {
    auto src = m.row(perm[k]);
    std::copy(src.begin(), src.end(), out.row(k).begin());
  }
  return out;
}

/// Symmetric relabelling P W P^T for a square matrix.
inline Matrix permute_symmetric(const Matrix& m, std::span<const std::size_t> perm) {
  require(m.rows() == m.cols() && perm.size() == m.rows(), ErrorKind::shape,
          "symmetric permutation needs a square matrix");
  Matrix out(m.rows(), m.cols());
  for (std::size_t a = 0; a < perm.size(); ++a)
    for (std::size_t b = 0; b < perm.size(); ++b) out(a, b) = m(perm[a], perm[b]);
  return out;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  require(a.same_shape(b), ErrorKind::shape, "diff " + shape_string(a) + " vs " + shape_string(b));
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a.data()[i] - b.data()[i]));
  return d;
}

}  // namespace psage
