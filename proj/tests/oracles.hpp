// SPDX-License-Identifier: Apache-2.0
// Reference implementations used only by the tests. Each one is written from
// the defining formula with plain loops and shares no code with the library
// beyond the Matrix container.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <set>
#include <vector>

#include "psage/matrix.hpp"

namespace oracle {

using psage::Matrix;
using Mat = std::vector<std::vector<double>>;

inline Mat to_mat(const Matrix& m) {
  Mat out(m.rows(), std::vector<double>(m.cols()));
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out[i][j] = m(i, j);
  return out;
}

inline Matrix from_mat(const Mat& m) {
  Matrix out(m.size(), m.empty() ? 0 : m[0].size());
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m[i].size(); ++j) out(i, j) = m[i][j];
  return out;
}

inline Mat matmul(const Mat& a, const Mat& b) {
  const std::size_t n = a.size(), k = b.size(), m = b.empty() ? 0 : b[0].size();
  Mat c(n, std::vector<double>(m, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      long double s = 0;
      for (std::size_t t = 0; t < k; ++t) s += static_cast<long double>(a[i][t]) * b[t][j];
      c[i][j] = static_cast<double>(s);
    }
  return c;
}

inline Mat transpose(const Mat& a) {
  const std::size_t r = a.size(), c = a.empty() ? 0 : a[0].size();
  Mat t(c, std::vector<double>(r));
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) t[j][i] = a[i][j];
  return t;
}

// ---------------------------------------------------------------------------
// Haversine weight in long double, degrees converted here.

inline long double haversine_weight(double lat_a, double lon_a, double lat_b, double lon_b, bool with_sqrt,
                                    long double cap) {
  const long double pi = 3.141592653589793238462643383279502884L;
  const long double pa = lat_a * pi / 180.0L, pb = lat_b * pi / 180.0L;
  const long double la = lon_a * pi / 180.0L, lb = lon_b * pi / 180.0L;
  const long double s1 = std::sin((pb - pa) / 2.0L), s2 = std::sin((lb - la) / 2.0L);
  long double h = s1 * s1 + std::cos(pa) * std::cos(pb) * s2 * s2;
  long double arg = with_sqrt ? std::sqrt(h) : h;
  if (arg < 1e-12L) arg = 1e-12L;
  if (arg > 1.0L) arg = 1.0L;
  const long double w = 1.0L / (2.0L * std::asin(arg));
  return w < cap ? w : cap;
}

// ---------------------------------------------------------------------------
// Graph aggregation.

/// Row i = mean (or w-weighted mean) of rows j in lists[i].
inline Mat mean_aggregate(const Mat& x, const std::vector<std::vector<std::size_t>>& lists, const Mat* w) {
  const std::size_t f = x[0].size();
  Mat out(x.size(), std::vector<double>(f, 0.0));
  for (std::size_t i = 0; i < x.size(); ++i) {
    long double total = 0;
    for (std::size_t j : lists[i]) total += w ? (*w)[i][j] : 1.0;
    for (std::size_t c = 0; c < f; ++c) {
      long double s = 0;
      for (std::size_t j : lists[i]) s += (w ? (*w)[i][j] : 1.0) * static_cast<long double>(x[j][c]);
      out[i][c] = static_cast<double>(s / total);
    }
  }
  return out;
}

/// d x for a cotangent g on the aggregate: each neighbour j of i receives
/// g_i * c_ij.
inline Mat mean_aggregate_backward(std::size_t n, const Mat& g, const std::vector<std::vector<std::size_t>>& lists,
                                   const Mat* w) {
  const std::size_t f = g[0].size();
  Mat dx(n, std::vector<double>(f, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    long double total = 0;
    for (std::size_t j : lists[i]) total += w ? (*w)[i][j] : 1.0;
    for (std::size_t j : lists[i]) {
      const long double c = (w ? (*w)[i][j] : 1.0) / total;
      for (std::size_t k = 0; k < f; ++k) dx[j][k] += static_cast<double>(c * g[i][k]);
    }
  }
  return dx;
}

inline std::vector<std::vector<std::size_t>> all_others(std::size_t n) {
  std::vector<std::vector<std::size_t>> lists(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) lists[i].push_back(j);
  return lists;
}

/// Explicit D^-1/2 (A + I) D^-1/2 with the diagonal of A dropped.
inline Mat gcn_normalized(const Mat& edges) {
  const std::size_t n = edges.size();
  Mat a(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a[i][j] = (i == j) ? 1.0 : edges[i][j];
  std::vector<long double> d(n, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) d[i] += a[i][j];
  Mat out(n, std::vector<double>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out[i][j] = static_cast<double>(a[i][j] / (std::sqrt(d[i]) * std::sqrt(d[j])));
  return out;
}

// ---------------------------------------------------------------------------
// Scalar LSTM step over precomputed gate pre-activations.

struct LstmOut {
  Mat h, c;
};

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

/// pre[g][n][k]: z for gate g in order i, f, c, o.
inline LstmOut lstm_from_preacts(const std::array<Mat, 4>& pre, const Mat& c_prev) {
  LstmOut o{c_prev, c_prev};
  for (std::size_t n = 0; n < c_prev.size(); ++n)
    for (std::size_t k = 0; k < c_prev[n].size(); ++k) {
      const double i = sigmoid(pre[0][n][k]);
      const double f = sigmoid(pre[1][n][k]);
      const double g = std::tanh(pre[2][n][k]);
      const double out = sigmoid(pre[3][n][k]);
      o.c[n][k] = f * c_prev[n][k] + i * g;
      o.h[n][k] = out * std::tanh(o.c[n][k]);
    }
  return o;
}

inline Mat add(const Mat& a, const Mat& b) {
  Mat c = a;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) c[i][j] += b[i][j];
  return c;
}

inline Mat add_row(const Mat& a, const std::vector<double>& row) {
  Mat c = a;
  for (auto& r : c)
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += row[j];
  return c;
}

// ---------------------------------------------------------------------------
// Losses.

inline double mse(const Mat& p, const Mat& t) {
  long double s = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < p.size(); ++i)
    for (std::size_t j = 0; j < p[i].size(); ++j, ++n) s += (static_cast<long double>(p[i][j]) - t[i][j]) * (p[i][j] - t[i][j]);
  return static_cast<double>(s / n);
}

/// RMSE over every entry of every (prediction, target) pair.
inline double rmse(const std::vector<Mat>& preds, const std::vector<Mat>& targets) {
  long double s = 0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < preds.size(); ++k)
    for (std::size_t i = 0; i < preds[k].size(); ++i)
      for (std::size_t j = 0; j < preds[k][i].size(); ++j, ++n) {
        const long double d = static_cast<long double>(preds[k][i][j]) - targets[k][i][j];
        s += d * d;
      }
  return static_cast<double>(std::sqrt(s / n));
}

// ---------------------------------------------------------------------------
// Delaunay by exhaustion: a triple is a Delaunay triangle when no other point
// lies strictly inside its circumcircle.

struct P2 {
  double x, y;
};

using Tri = std::array<std::size_t, 3>;

inline long double orient(const P2& a, const P2& b, const P2& c) {
  return (static_cast<long double>(b.x) - a.x) * (static_cast<long double>(c.y) - a.y) -
         (static_cast<long double>(b.y) - a.y) * (static_cast<long double>(c.x) - a.x);
}

/// > 0 when d is inside the circumcircle of counter-clockwise (a, b, c).
inline long double in_circle(const P2& a, const P2& b, const P2& c, const P2& d) {
  const long double adx = a.x - static_cast<long double>(d.x), ady = a.y - static_cast<long double>(d.y);
  const long double bdx = b.x - static_cast<long double>(d.x), bdy = b.y - static_cast<long double>(d.y);
  const long double cdx = c.x - static_cast<long double>(d.x), cdy = c.y - static_cast<long double>(d.y);
  return (adx * adx + ady * ady) * (bdx * cdy - cdx * bdy) - (bdx * bdx + bdy * bdy) * (adx * cdy - cdx * ady) +
         (cdx * cdx + cdy * cdy) * (adx * bdy - bdx * ady);
}

inline std::set<Tri> delaunay(const std::vector<P2>& pts, long double tol = 1e-18L) {
  std::set<Tri> out;
  const std::size_t n = pts.size();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      for (std::size_t k = j + 1; k < n; ++k) {
        std::size_t a = i, b = j, c = k;
        const long double o = orient(pts[a], pts[b], pts[c]);
        if (std::abs(o) < 1e-20L) continue;
        if (o < 0) std::swap(b, c);
        bool empty = true;
        for (std::size_t m = 0; m < n && empty; ++m)
          if (m != a && m != b && m != c && in_circle(pts[a], pts[b], pts[c], pts[m]) > tol) empty = false;
        if (empty) out.insert({i, j, k});
      }
  return out;
}

/// Tests every triangle for containment; outside the hull the nearest point
/// supplies the value.
inline std::vector<double> interpolate(const std::vector<P2>& pts, const Mat& values, const std::set<Tri>& tris,
                                       const P2& q) {
  for (const Tri& t : tris) {
    const P2 &a = pts[t[0]], &b = pts[t[1]], &c = pts[t[2]];
    const long double area = orient(a, b, c);
    const long double w0 = orient(b, c, q) / area, w1 = orient(c, a, q) / area, w2 = orient(a, b, q) / area;
    const long double lo = -1e-12L;
    if (w0 < lo || w1 < lo || w2 < lo) continue;
    std::vector<double> out(values[0].size());
    for (std::size_t k = 0; k < out.size(); ++k)
      out[k] = static_cast<double>(w0 * values[t[0]][k] + w1 * values[t[1]][k] + w2 * values[t[2]][k]);
    return out;
  }
  std::size_t best = 0;
  long double best_d = std::numeric_limits<long double>::infinity();
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const long double dx = static_cast<long double>(pts[i].x) - q.x, dy = static_cast<long double>(pts[i].y) - q.y;
    if (dx * dx + dy * dy < best_d) {
      best_d = dx * dx + dy * dy;
      best = i;
    }
  }
  return values[best];
}

}  // namespace oracle
