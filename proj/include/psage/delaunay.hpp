// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <map>
#include <optional>
#include <utility>
#include <vector>

#include "psage/error.hpp"
#include "psage/matrix.hpp"

namespace psage {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
  friend bool operator==(const Point2&, const Point2&) = default;
};

inline constexpr double kOrientEpsilon = 1e-12;

/// Twice the signed area of (a, b, c); positive when counter-clockwise.
inline double orient2d(Point2 a, Point2 b, Point2 c) noexcept {
  return (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
}

/// Planar Delaunay triangulation built by incremental insertion.
/// Points are mapped into the unit box (uniform scale, so circles stay
/// circles) before any predicate is evaluated; kOrientEpsilon applies there.
/// Duplicate input points are kept in `points()` but only the first copy
/// becomes a vertex.
class DelaunayTriangulation {
 public:
  using Triangle = std::array<std::size_t, 3>;  // counter-clockwise vertex indices

  struct Location {
    std::size_t triangle = 0;
    std::array<double, 3> weights{};  // barycentric, ordered like the triangle's vertices
  };

  explicit DelaunayTriangulation(std::vector<Point2> points) : points_(std::move(points)) {
    require(points_.size() >= 3, ErrorKind::degenerate_geometry, "need at least three sample points");
    for (const Point2& p : points_)
      require(std::isfinite(p.x) && std::isfinite(p.y), ErrorKind::invalid_input, "non-finite sample point");
    normalise();
    check_not_collinear();
    triangulate();
  }

  const std::vector<Point2>& points() const noexcept { return points_; }
  const std::vector<Triangle>& triangles() const noexcept { return triangles_; }

  /// Containing triangle and barycentric weights, or nullopt outside the hull.
  std::optional<Location> locate(Point2 q) const {
    const Point2 u = to_unit(q);
    for (std::size_t t = 0; t < triangles_.size(); ++t) {
      const auto& tri = triangles_[t];
      const Point2 a = unit_[tri[0]], b = unit_[tri[1]], c = unit_[tri[2]];
      const double area = orient2d(a, b, c);
      const double w0 = orient2d(b, c, u), w1 = orient2d(c, a, u), w2 = orient2d(a, b, u);
      if (w0 < -kOrientEpsilon || w1 < -kOrientEpsilon || w2 < -kOrientEpsilon) continue;
      return Location{t, {w0 / area, w1 / area, w2 / area}};
    }
    return std::nullopt;
  }

  /// Index of the closest sample point (first one on ties).
  std::size_t nearest(Point2 q) const {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < points_.size(); ++i) {
      const double dx = points_[i].x - q.x, dy = points_[i].y - q.y;
      const double d = dx * dx + dy * dy;
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    return best;
  }

  /// Vertex with exactly these coordinates, if any.
  std::optional<std::size_t> vertex_at(Point2 q) const {
    auto it = exact_.find({q.x, q.y});
    if (it == exact_.end()) return std::nullopt;
    return it->second;
  }

 private:
  Point2 to_unit(Point2 p) const noexcept { return {(p.x - origin_.x) / scale_, (p.y - origin_.y) / scale_}; }

  void normalise() {
    double min_x = points_[0].x, max_x = min_x, min_y = points_[0].y, max_y = min_y;
    for (const Point2& p : points_) {
      min_x = std::min(min_x, p.x);
      max_x = std::max(max_x, p.x);
      min_y = std::min(min_y, p.y);
      max_y = std::max(max_y, p.y);
    }
    origin_ = {min_x, min_y};
    const double extent = std::max(max_x - min_x, max_y - min_y);
    require(extent > 0.0, ErrorKind::degenerate_geometry, "all sample points coincide");
    // A power of two keeps the division exact, so exactly collinear inputs
    // stay exactly collinear.
    scale_ = std::exp2(std::ceil(std::log2(extent)));
    unit_.reserve(points_.size() + 3);
    for (std::size_t i = 0; i < points_.size(); ++i) {
      unit_.push_back(to_unit(points_[i]));
      if (exact_.emplace(std::make_pair(points_[i].x, points_[i].y), i).second) vertices_.push_back(i);
    }
  }

  void check_not_collinear() const {
    require(vertices_.size() >= 3, ErrorKind::degenerate_geometry, "fewer than three distinct sample points");
    const Point2 a = unit_[vertices_[0]];
    // Farthest point from a fixes the reference direction.
    std::size_t far = vertices_[1];
    double far_d = 0.0;
    for (std::size_t v : vertices_) {
      const double dx = unit_[v].x - a.x, dy = unit_[v].y - a.y;
      if (dx * dx + dy * dy > far_d) {
        far_d = dx * dx + dy * dy;
        far = v;
      }
    }
    const Point2 b = unit_[far];
    for (std::size_t v : vertices_)
      if (std::abs(orient2d(a, b, unit_[v])) > kOrientEpsilon) return;
    fail(ErrorKind::degenerate_geometry, "all sample points are collinear");
  }

  /// > 0 when d lies inside the circumcircle of counter-clockwise (a, b, c).
  static double in_circle(Point2 a, Point2 b, Point2 c, Point2 d) noexcept {
    const double adx = a.x - d.x, ady = a.y - d.y;
    const double bdx = b.x - d.x, bdy = b.y - d.y;
    const double cdx = c.x - d.x, cdy = c.y - d.y;
    return (adx * adx + ady * ady) * (bdx * cdy - cdx * bdy) - (bdx * bdx + bdy * bdy) * (adx * cdy - cdx * ady) +
           (cdx * cdx + cdy * cdy) * (adx * bdy - bdx * ady);
  }

  double orient(std::size_t a, std::size_t b, std::size_t c) const noexcept {
    return orient2d(unit_[a], unit_[b], unit_[c]);
  }

  // Points are inserted in lexicographic order, so each new point lies outside
  // the current hull and is joined to every hull edge it sees. Lawson flips
  // then make every edge locally Delaunay.
  void triangulate() {
    std::vector<std::size_t> order = vertices_;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return unit_[a].x < unit_[b].x || (unit_[a].x == unit_[b].x && unit_[a].y < unit_[b].y);
    });

    // Leading run of collinear points, fanned from the first point off the line.
    std::size_t k = 2;
    while (k + 1 < order.size() && orient(order[0], order[1], order[k]) == 0.0) ++k;
    const bool left = orient(order[0], order[k - 1], order[k]) > 0.0;
    std::vector<std::size_t> hull;  // counter-clockwise
    for (std::size_t i = 0; i + 1 < k; ++i) {
      if (left) triangles_.push_back({order[i], order[i + 1], order[k]});
      else triangles_.push_back({order[i + 1], order[i], order[k]});
    }
    if (left) {
      hull.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k + 1));
    } else {
      hull = {order[0], order[k]};
      for (std::size_t i = k - 1; i >= 1; --i) hull.push_back(order[i]);
    }

    for (std::size_t idx = k + 1; idx < order.size(); ++idx) {
      const std::size_t p = order[idx];
      const std::size_t h = hull.size();
      auto visible = [&](std::size_t e) { return orient(hull[e], hull[(e + 1) % h], p) < 0.0; };
      std::size_t first = h;
      for (std::size_t e = 0; e < h; ++e)
        if (visible(e)) {
          first = e;
          break;
        }
      require(first < h, ErrorKind::degenerate_geometry, "sample point sees no hull edge");
      // Back up to the start of the visible chain, then walk forward.
      while (visible((first + h - 1) % h)) first = (first + h - 1) % h;
      std::size_t last = first;
      while (visible(last)) {
        triangles_.push_back({hull[(last + 1) % h], hull[last], p});
        last = (last + 1) % h;
      }
      // Hull vertices strictly between first and last are now interior.
      std::vector<std::size_t> next;
      next.reserve(h + 1);
      for (std::size_t i = last;; i = (i + 1) % h) {
        next.push_back(hull[i]);
        if (i == first) break;
      }
      next.push_back(p);
      hull = std::move(next);
    }
    legalize();
  }

  void legalize() {
    std::map<std::pair<std::size_t, std::size_t>, std::size_t> owner;  // directed edge -> triangle
    auto record = [&](std::size_t t) {
      const auto& v = triangles_[t];
      for (int e = 0; e < 3; ++e) owner[{v[e], v[(e + 1) % 3]}] = t;
    };
    for (std::size_t t = 0; t < triangles_.size(); ++t) record(t);

    std::vector<std::pair<std::size_t, std::size_t>> stack;
    for (const auto& [edge, _] : owner) stack.push_back(edge);
    while (!stack.empty()) {
      const auto [a, b] = stack.back();
      stack.pop_back();
      const auto i1 = owner.find({a, b}), i2 = owner.find({b, a});
      if (i1 == owner.end() || i2 == owner.end()) continue;
      const std::size_t t1 = i1->second, t2 = i2->second;
      auto third = [&](std::size_t t) {
        for (std::size_t v : triangles_[t])
          if (v != a && v != b) return v;
        return a;
      };
      const std::size_t c = third(t1), d = third(t2);
      if (in_circle(unit_[a], unit_[b], unit_[c], unit_[d]) <= kOrientEpsilon) continue;
      if (orient(a, d, c) <= 0.0 || orient(d, b, c) <= 0.0) continue;
      // Replace (a, b, c) + (b, a, d) by (a, d, c) + (d, b, c).
      owner.erase({a, b});
      owner.erase({b, a});
      triangles_[t1] = {a, d, c};
      triangles_[t2] = {d, b, c};
      record(t1);
      record(t2);
      stack.insert(stack.end(), {{a, d}, {d, b}, {b, c}, {c, a}});
    }
  }

  std::vector<Point2> points_;
  std::vector<Point2> unit_;
  std::vector<std::size_t> vertices_;
  std::map<std::pair<double, double>, std::size_t> exact_;
  std::vector<Triangle> triangles_;
  Point2 origin_;
  double scale_ = 1.0;
};

/// Barycentric interpolation of K value channels over a triangulation;
/// queries outside the convex hull take the nearest sample's values.
class ScatteredInterpolator {
 public:
  /// `values` is P x K: one row of K channels per sample point.
  ScatteredInterpolator(std::vector<Point2> points, Matrix values)
      : values_(std::move(values)), tri_(std::move(points)) {
    require(values_.rows() == tri_.points().size(), ErrorKind::shape,
            "one value row per sample point is required");
  }

  const DelaunayTriangulation& triangulation() const noexcept { return tri_; }
  std::size_t channels() const noexcept { return values_.cols(); }

  /// K-vector at q.
  std::vector<double> at(Point2 q) const {
    const std::size_t k = values_.cols();
    std::vector<double> out(k, 0.0);
    if (auto v = tri_.vertex_at(q)) {
      for (std::size_t c = 0; c < k; ++c) out[c] = values_(*v, c);
      return out;
    }
    if (auto loc = tri_.locate(q)) {
      const auto& tri = tri_.triangles()[loc->triangle];
      for (std::size_t c = 0; c < k; ++c)
        out[c] = loc->weights[0] * values_(tri[0], c) + loc->weights[1] * values_(tri[1], c) +
                 loc->weights[2] * values_(tri[2], c);
      return out;
    }
    const std::size_t n = tri_.nearest(q);
    for (std::size_t c = 0; c < k; ++c) out[c] = values_(n, c);
    return out;
  }

  /// K x Q matrix, one column per query.
  Matrix interpolate(const std::vector<Point2>& queries) const {
    Matrix out(values_.cols(), queries.size());
    for (std::size_t q = 0; q < queries.size(); ++q) {
      const auto v = at(queries[q]);
      for (std::size_t c = 0; c < v.size(); ++c) out(c, q) = v[c];
    }
    return out;
  }

 private:
  Matrix values_;
  DelaunayTriangulation tri_;
};

}  // namespace psage
