// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <array>
#include <bitset>
#include <cmath>
#include <cstddef>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "psage/error.hpp"
#include "psage/matrix.hpp"

namespace psage {

inline constexpr std::size_t kTraceCount = 256;
inline constexpr std::size_t kFeatureCount = 8;
inline constexpr std::size_t kBaseFeatureCount = 3;
inline constexpr std::size_t kPhysicalFeatureCount = 5;
inline constexpr double kDefaultWeightCap = 1e9;
inline constexpr double kHaversineFloor = 1e-12;

/// Node feature columns. The order is part of the file formats.
enum Feature : std::size_t {
  kLat = 0,
  kLon,
  kThickness,
  kSmb,
  kSurfaceTemp,
  kRefreeze,
  kMeltHeight,
  kSnowpack,
};

inline constexpr std::array<std::string_view, kFeatureCount> kFeatureNames = {
    "lat", "lon", "thickness", "smb", "surface_temp", "refreeze", "melt_height", "snowpack"};

/// `as_written` evaluates 1 / (2 asin(h)); `sqrt` uses the standard haversine
/// central angle 2 asin(sqrt(h)).
enum class EdgeMode { as_written, sqrt };

inline std::string_view to_string(EdgeMode m) noexcept { return m == EdgeMode::sqrt ? "sqrt" : "as-written"; }

inline EdgeMode parse_edge_mode(std::string_view s) {
  if (s == "as-written" || s == "as_written") return EdgeMode::as_written;
  if (s == "sqrt") return EdgeMode::sqrt;
  fail(ErrorKind::config, "unknown edge mode '" + std::string(s) + "' (expected as-written or sqrt)");
}

struct GeoPoint {
  double lat = 0.0;  // degrees
  double lon = 0.0;  // degrees
};

inline void validate_point(GeoPoint p) {
  require(std::isfinite(p.lat) && std::isfinite(p.lon), ErrorKind::invalid_input, "non-finite coordinate");
  require(p.lat >= -90.0 && p.lat <= 90.0, ErrorKind::invalid_input,
          "latitude " + std::to_string(p.lat) + " outside [-90, 90]");
  require(p.lon >= -180.0 && p.lon <= 180.0, ErrorKind::invalid_input,
          "longitude " + std::to_string(p.lon) + " outside [-180, 180]");
}

/// Per-trace latitude/longitude of one image (exactly kTraceCount entries).
struct TraceCoordinates {
  std::vector<double> lat;
  std::vector<double> lon;

  void validate() const {
    require(lat.size() == kTraceCount && lon.size() == kTraceCount, ErrorKind::invalid_input,
            "trace coordinates need exactly " + std::to_string(kTraceCount) + " latitudes and longitudes");
    for (std::size_t i = 0; i < kTraceCount; ++i) validate_point({lat[i], lon[i]});
  }

  GeoPoint at(std::size_t i) const { return {lat[i], lon[i]}; }
  std::size_t size() const noexcept { return lat.size(); }
};

inline double haversine(double theta) noexcept {
  const double s = std::sin(theta / 2.0);
  return s * s;
}

/// Edge weight between two traces; symmetric, positive, and at most `cap`.
/// The arcsin argument is floored at kHaversineFloor so that coincident
/// points land on the cap instead of dividing by zero.
inline double haversine_edge_weight(GeoPoint a, GeoPoint b, EdgeMode mode = EdgeMode::as_written,
                                    double cap = kDefaultWeightCap) {
  validate_point(a);
  validate_point(b);
  require(cap > 0.0 && std::isfinite(cap), ErrorKind::invalid_input, "weight cap must be positive and finite");
  constexpr double to_rad = std::numbers::pi / 180.0;
  const double phi_a = a.lat * to_rad, phi_b = b.lat * to_rad;
  const double lam_a = a.lon * to_rad, lam_b = b.lon * to_rad;
  // Written so that swapping a and b yields the same floating-point value.
  const double h = haversine(std::abs(phi_b - phi_a)) +
                   std::cos(phi_a) * std::cos(phi_b) * haversine(std::abs(lam_b - lam_a));
  double arg = mode == EdgeMode::sqrt ? std::sqrt(std::max(h, 0.0)) : h;
  arg = std::clamp(arg, kHaversineFloor, 1.0);
  const double w = 1.0 / (2.0 * std::asin(arg));
  return std::min(w, cap);
}

/// Fully connected symmetric weight matrix; the diagonal carries `cap`.
inline Matrix build_edge_weights(std::span<const double> lat, std::span<const double> lon,
                                 EdgeMode mode = EdgeMode::as_written, double cap = kDefaultWeightCap) {
  require(lat.size() == lon.size(), ErrorKind::invalid_input, "latitude and longitude counts differ");
  const std::size_t n = lat.size();
  Matrix w(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    validate_point({lat[i], lon[i]});
    w(i, i) = cap;
    for (std::size_t j = i + 1; j < n; ++j) {
      const double v = haversine_edge_weight({lat[i], lon[i]}, {lat[j], lon[j]}, mode, cap);
      w(i, j) = v;
      w(j, i) = v;
    }
  }
  return w;
}

inline Matrix build_edge_weights(const TraceCoordinates& coords, EdgeMode mode = EdgeMode::as_written,
                                 double cap = kDefaultWeightCap) {
  coords.validate();
  return build_edge_weights(coords.lat, coords.lon, mode, cap);
}

/// Which of the eight feature columns are live. Base columns are always on.
class FeatureMask {
 public:
  FeatureMask() : bits_(0b111) {}

  static FeatureMask base_only() { return FeatureMask(); }
  static FeatureMask all() {
    FeatureMask m;
    m.bits_.set();
    return m;
  }

  /// Eight '0'/'1' characters in column order, e.g. "11110000".
  static FeatureMask parse(std::string_view text) {
    require(text.size() == kFeatureCount, ErrorKind::config,
            "feature mask '" + std::string(text) + "' must have 8 characters of 0/1");
    FeatureMask m;
    for (std::size_t i = 0; i < kFeatureCount; ++i) {
      require(text[i] == '0' || text[i] == '1', ErrorKind::config,
              "feature mask '" + std::string(text) + "' must contain only 0 and 1");
      m.bits_[i] = text[i] == '1';
    }
    m.validate();
    return m;
  }

  void validate() const {
    require(bits_[kLat] && bits_[kLon] && bits_[kThickness], ErrorKind::config,
            "feature mask must keep the base columns (lat, lon, thickness) enabled");
  }

  bool operator[](std::size_t i) const { return bits_[i]; }
  void set(std::size_t i, bool on) { bits_[i] = on; }
  bool any_physical() const {
    for (std::size_t i = kBaseFeatureCount; i < kFeatureCount; ++i)
      if (bits_[i]) return true;
    return false;
  }
  std::size_t count() const { return bits_.count(); }

  std::string str() const {
    std::string s(kFeatureCount, '0');
    for (std::size_t i = 0; i < kFeatureCount; ++i) s[i] = bits_[i] ? '1' : '0';
    return s;
  }

  friend bool operator==(const FeatureMask&, const FeatureMask&) = default;

 private:
  std::bitset<kFeatureCount> bits_;
};

/// Zeroes every column whose mask bit is off. Idempotent.
inline void apply_mask(Matrix& features, const FeatureMask& mask) {
  require(features.cols() == kFeatureCount, ErrorKind::shape, "node features must have 8 columns");
  for (std::size_t i = 0; i < features.rows(); ++i)
    for (std::size_t c = 0; c < kFeatureCount; ++c)
      if (!mask[c]) features(i, c) = 0.0;
}

/// One year's layer as a fully connected graph.
struct LayerGraph {
  int year = 0;
  Matrix node_features;                        // N x 8, column order per Feature
  std::shared_ptr<const Matrix> edge_weights;  // N x N, shared across a sample's years
  FeatureMask mask;

  std::size_t nodes() const noexcept { return node_features.rows(); }
};

/// Assembles the node feature matrix. `physical` is 5 x N (rows in Feature
/// order starting at kSmb) or null, in which case the physical columns are
/// zero and the effective mask drops them.
inline LayerGraph build_layer_graph(const TraceCoordinates& coords, std::span<const double> thickness,
                                    const Matrix* physical, FeatureMask mask, int year,
                                    std::shared_ptr<const Matrix> edge_weights) {
  coords.validate();
  mask.validate();
  const std::size_t n = coords.size();
  require(thickness.size() == n, ErrorKind::incomplete_layer,
          "thickness vector has " + std::to_string(thickness.size()) + " entries, expected " + std::to_string(n));
  for (std::size_t i = 0; i < n; ++i)
    require(std::isfinite(thickness[i]) && thickness[i] >= 0.0, ErrorKind::incomplete_layer,
            "thickness at trace " + std::to_string(i) + " is missing or negative");
  if (physical)
    require(physical->rows() == kPhysicalFeatureCount && physical->cols() == n, ErrorKind::shape,
            "physical features must be 5 x " + std::to_string(n) + ", got " + shape_string(*physical));
  require(edge_weights && edge_weights->rows() == n && edge_weights->cols() == n, ErrorKind::shape,
          "edge weights do not match the node count");

  if (!physical)
    for (std::size_t c = kBaseFeatureCount; c < kFeatureCount; ++c) mask.set(c, false);

  LayerGraph g;
  g.year = year;
  g.mask = mask;
  g.edge_weights = std::move(edge_weights);
  g.node_features = Matrix(n, kFeatureCount);
  for (std::size_t i = 0; i < n; ++i) {
    g.node_features(i, kLat) = coords.lat[i];
    g.node_features(i, kLon) = coords.lon[i];
    g.node_features(i, kThickness) = thickness[i];
    if (physical)
      for (std::size_t k = 0; k < kPhysicalFeatureCount; ++k)
        g.node_features(i, kBaseFeatureCount + k) = (*physical)(k, i);
  }
  apply_mask(g.node_features, mask);
  return g;
}

inline LayerGraph build_layer_graph(const TraceCoordinates& coords, std::span<const double> thickness,
                                    const Matrix* physical, FeatureMask mask, int year,
                                    EdgeMode mode = EdgeMode::as_written, double cap = kDefaultWeightCap) {
  auto w = std::make_shared<const Matrix>(build_edge_weights(coords, mode, cap));
  return build_layer_graph(coords, thickness, physical, mask, year, std::move(w));
}

}  // namespace psage
