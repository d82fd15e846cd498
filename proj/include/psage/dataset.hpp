// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "psage/delaunay.hpp"
#include "psage/error.hpp"
#include "psage/geo_graph.hpp"
#include "psage/matrix.hpp"
#include "psage/rng.hpp"

namespace psage {

inline constexpr std::size_t kInputYears = 5;
inline constexpr std::size_t kTargetYears = 15;
inline constexpr std::size_t kMinCompleteLayers = kInputYears + kTargetYears;

inline bool is_missing(double v) noexcept { return std::isnan(v); }
inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

/// Labelled boundary positions of one image. `boundaries` is L x 256 row-pixel
/// positions, top boundary first; missing entries are NaN.
struct LabeledImageRecord {
  std::string id;
  int year = 2012;
  TraceCoordinates coords;
  Matrix boundaries;
};

/// thickness[k] = boundaries[k+1] - boundaries[k]; an entry is missing when
/// either adjacent boundary is.
inline Matrix thickness_from_boundaries(const Matrix& boundaries) {
  require(boundaries.rows() >= 2, ErrorKind::invalid_input, "need at least two boundaries to form a layer");
  Matrix t(boundaries.rows() - 1, boundaries.cols());
  for (std::size_t k = 0; k + 1 < boundaries.rows(); ++k)
    for (std::size_t c = 0; c < boundaries.cols(); ++c) {
      const double top = boundaries(k, c), bottom = boundaries(k + 1, c);
      if (is_missing(top) || is_missing(bottom)) {
        t(k, c) = kMissing;
        continue;
      }
      require(bottom >= top, ErrorKind::malformed_record,
              "boundary " + std::to_string(k + 1) + " lies above boundary " + std::to_string(k) + " at trace " +
                  std::to_string(c));
      t(k, c) = bottom - top;
    }
  return t;
}

/// Number of leading thickness rows free of missing entries.
inline std::size_t complete_leading_layers(const Matrix& thickness) {
  std::size_t k = 0;
  for (; k < thickness.rows(); ++k) {
    bool complete = true;
    for (double v : thickness.row(k)) complete = complete && !is_missing(v);
    if (!complete) break;
  }
  return k;
}

/// Keeps records whose first kMinCompleteLayers layers are complete across
/// every trace. Malformed records are dropped, never thrown.
inline std::vector<LabeledImageRecord> filter_valid(const std::vector<LabeledImageRecord>& records) {
  std::vector<LabeledImageRecord> kept;
  for (const auto& r : records) {
    try {
      r.coords.validate();
      if (r.boundaries.cols() != kTraceCount || r.boundaries.rows() < kMinCompleteLayers + 1) continue;
      if (complete_leading_layers(thickness_from_boundaries(r.boundaries)) < kMinCompleteLayers) continue;
      kept.push_back(r);
    } catch (const Error&) {
    }
  }
  return kept;
}

struct SplitSpec {
  std::uint64_t seed = 0;
};

template <class T>
struct Split {
  std::vector<T> train, val, test;
};

/// Seeded permutation, then contiguous 3:1:1 slices; the remainder goes to test.
template <class T>
Split<T> split(const std::vector<T>& items, SplitSpec spec) {
  const std::size_t n = items.size();
  require(n >= 5, ErrorKind::invalid_input, "a 3:1:1 split needs at least 5 items, got " + std::to_string(n));
  Rng rng(spec.seed);
  const auto perm = rng.permutation(n);
  const std::size_t n_train = 3 * n / 5, n_val = n / 5;
  Split<T> out;
  for (std::size_t i = 0; i < n; ++i) {
    auto& dst = i < n_train ? out.train : (i < n_train + n_val ? out.val : out.test);
    dst.push_back(items[perm[i]]);
  }
  return out;
}

/// Climate samples for one year: P points, P x 5 values in Feature order
/// starting at kSmb.
struct MarYear {
  std::vector<GeoPoint> points;
  Matrix values;
};

struct MarSampleSet {
  std::map<int, MarYear> years;

  /// The requested year, or the only year when just one is present.
  const MarYear& for_year(int year) const {
    require(!years.empty(), ErrorKind::invalid_input, "MAR sample set is empty");
    if (years.size() == 1) return years.begin()->second;
    auto it = years.find(year);
    require(it != years.end(), ErrorKind::invalid_input, "MAR data has no samples for year " + std::to_string(year));
    return it->second;
  }
};

inline Point2 planar(GeoPoint p) noexcept { return {p.lon, p.lat}; }

/// Per-year cached triangulations over the planar (lon, lat) embedding.
class MarInterpolator {
 public:
  explicit MarInterpolator(const MarSampleSet& set) : set_(&set) {}

  /// 5 x N physical features at the query coordinates.
  Matrix interpolate(int year, const TraceCoordinates& queries) {
    const MarYear& data = set_->for_year(year);
    auto it = cache_.find(&data);
    if (it == cache_.end()) {
      require(data.values.rows() == data.points.size() && data.values.cols() == kPhysicalFeatureCount,
              ErrorKind::shape, "MAR values must be P x 5");
      std::vector<Point2> pts;
      pts.reserve(data.points.size());
      for (const GeoPoint& g : data.points) pts.push_back(planar(g));
      it = cache_.emplace(&data, std::make_unique<ScatteredInterpolator>(std::move(pts), data.values)).first;
    }
    std::vector<Point2> q;
    q.reserve(queries.size());
    for (std::size_t i = 0; i < queries.size(); ++i) q.push_back(planar(queries.at(i)));
    return it->second->interpolate(q);
  }

 private:
  const MarSampleSet* set_;
  std::map<const MarYear*, std::unique_ptr<ScatteredInterpolator>> cache_;
};

inline Matrix delaunay_interpolate(const MarYear& samples, const TraceCoordinates& queries) {
  MarSampleSet set;
  set.years.emplace(0, samples);
  MarInterpolator interp(set);
  return interp.interpolate(0, queries);
}

/// Five input graphs (years acquisition-1 ... acquisition-5, in that order)
/// and a 256 x 15 target matrix (columns acquisition-6 ... acquisition-20).
struct TemporalSample {
  std::string id;
  int acquisition_year = 2012;
  TraceCoordinates coords;
  std::vector<LayerGraph> inputs;
  Matrix targets;
};

struct SampleOptions {
  FeatureMask mask;
  EdgeMode edge_mode = EdgeMode::as_written;
  double weight_cap = kDefaultWeightCap;
};

inline std::vector<TemporalSample> build_samples(const std::vector<LabeledImageRecord>& records,
                                                const MarSampleSet* mar, const SampleOptions& opts) {
  opts.mask.validate();
  std::optional<MarInterpolator> interp;
  const bool use_mar = mar && opts.mask.any_physical();
  if (use_mar) interp.emplace(*mar);

  std::vector<TemporalSample> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    r.coords.validate();
    require(r.boundaries.cols() == kTraceCount, ErrorKind::malformed_record,
            "record " + r.id + " boundaries must have 256 columns");
    const Matrix thick = thickness_from_boundaries(r.boundaries);
    require(complete_leading_layers(thick) >= kMinCompleteLayers, ErrorKind::incomplete_layer,
            "record " + r.id + " has fewer than 20 complete layers");

    TemporalSample s;
    s.id = r.id;
    s.acquisition_year = r.year;
    s.coords = r.coords;
    auto edges = std::make_shared<const Matrix>(build_edge_weights(r.coords, opts.edge_mode, opts.weight_cap));
    for (std::size_t k = 0; k < kInputYears; ++k) {
      const int year = r.year - 1 - static_cast<int>(k);
      std::optional<Matrix> physical;
      if (use_mar) physical = interp->interpolate(year, r.coords);
      s.inputs.push_back(build_layer_graph(r.coords, thick.row(k), physical ? &*physical : nullptr, opts.mask,
                                           year, edges));
    }
    s.targets = Matrix(kTraceCount, kTargetYears);
    for (std::size_t j = 0; j < kTargetYears; ++j)
      for (std::size_t c = 0; c < kTraceCount; ++c) s.targets(c, j) = thick(kInputYears + j, c);
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// File formats.

namespace detail {

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s, const std::string& where) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  require(res.ec == std::errc() && res.ptr == s.data() + s.size(), ErrorKind::malformed_record,
          where + ": cannot parse number '" + std::string(s) + "'");
  return v;
}

inline std::vector<double> number_array(const nlohmann::json& j, const std::string& field, bool allow_null) {
  require(j.is_array(), ErrorKind::malformed_record, "field '" + field + "' must be an array");
  std::vector<double> v;
  v.reserve(j.size());
  for (const auto& e : j) {
    if (e.is_null() && allow_null) {
      v.push_back(kMissing);
      continue;
    }
    require(e.is_number(), ErrorKind::malformed_record, "field '" + field + "' must contain numbers");
    v.push_back(e.get<double>());
  }
  return v;
}

inline nlohmann::json row_json(std::span<const double> row) {
  auto a = nlohmann::json::array();
  for (double v : row) a.push_back(is_missing(v) ? nlohmann::json(nullptr) : nlohmann::json(v));
  return a;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::io, "cannot open '" + path + "' for reading");
  return in;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorKind::io, "cannot open '" + path + "' for writing");
  return out;
}

}  // namespace detail

inline nlohmann::json record_to_json(const LabeledImageRecord& r) {
  nlohmann::json j;
  j["id"] = r.id;
  j["year"] = r.year;
  j["lat"] = r.coords.lat;
  j["lon"] = r.coords.lon;
  auto b = nlohmann::json::array();
  for (std::size_t k = 0; k < r.boundaries.rows(); ++k) b.push_back(detail::row_json(r.boundaries.row(k)));
  j["boundaries"] = std::move(b);
  return j;
}

inline LabeledImageRecord record_from_json(const nlohmann::json& j) {
  require(j.is_object(), ErrorKind::malformed_record, "record must be an object");
  for (const char* f : {"id", "year", "lat", "lon", "boundaries"})
    require(j.contains(f), ErrorKind::malformed_record, std::string("record is missing field '") + f + "'");
  LabeledImageRecord r;
  require(j["id"].is_string(), ErrorKind::malformed_record, "field 'id' must be a string");
  require(j["year"].is_number_integer(), ErrorKind::malformed_record, "field 'year' must be an integer");
  r.id = j["id"].get<std::string>();
  r.year = j["year"].get<int>();
  r.coords.lat = detail::number_array(j["lat"], "lat", false);
  r.coords.lon = detail::number_array(j["lon"], "lon", false);
  const auto& b = j["boundaries"];
  require(b.is_array() && !b.empty(), ErrorKind::malformed_record, "field 'boundaries' must be a non-empty array");
  r.boundaries = Matrix(b.size(), kTraceCount);
  for (std::size_t k = 0; k < b.size(); ++k) {
    const auto row = detail::number_array(b[k], "boundaries", true);
    require(row.size() == kTraceCount, ErrorKind::malformed_record,
            "record " + r.id + " boundary " + std::to_string(k) + " must have 256 entries");
    std::copy(row.begin(), row.end(), r.boundaries.row(k).begin());
  }
  return r;
}

/// One JSON object per line.
inline void write_records(const std::string& path, const std::vector<LabeledImageRecord>& records) {
  auto out = detail::open_out(path);
  for (const auto& r : records) out << record_to_json(r).dump() << '\n';
  require(out.good(), ErrorKind::io, "failed writing '" + path + "'");
}

inline std::vector<LabeledImageRecord> read_records(const std::string& path) {
  auto in = detail::open_in(path);
  std::vector<LabeledImageRecord> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      records.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::malformed_record, path + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const Error& e) {
      fail(e.kind(), path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return records;
}

inline constexpr std::string_view kMarHeader = "year,lat,lon,smb,surface_temp,refreeze,melt_height,snowpack";

inline void write_mar(const std::string& path, const MarSampleSet& set) {
  auto out = detail::open_out(path);
  out << kMarHeader << '\n';
  for (const auto& [year, data] : set.years)
    for (std::size_t p = 0; p < data.points.size(); ++p) {
      out << year << ',' << detail::format_double(data.points[p].lat) << ','
          << detail::format_double(data.points[p].lon);
      for (std::size_t k = 0; k < kPhysicalFeatureCount; ++k) out << ',' << detail::format_double(data.values(p, k));
      out << '\n';
    }
  require(out.good(), ErrorKind::io, "failed writing '" + path + "'");
}

inline MarSampleSet read_mar(const std::string& path) {
  auto in = detail::open_in(path);
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorKind::malformed_record, path + ": empty MAR file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  require(line == kMarHeader, ErrorKind::malformed_record,
          path + ": MAR header must be '" + std::string(kMarHeader) + "'");
  std::map<int, std::vector<std::vector<double>>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path + ":" + std::to_string(lineno);
    std::vector<double> fields;
    std::size_t start = 0;
    while (true) {
      const std::size_t comma = line.find(',', start);
      fields.push_back(detail::parse_double(std::string_view(line).substr(start, comma - start), where));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    require(fields.size() == 8, ErrorKind::malformed_record, where + ": expected 8 fields");
    require(fields[0] == std::floor(fields[0]), ErrorKind::malformed_record, where + ": year must be an integer");
    rows[static_cast<int>(fields[0])].push_back(std::move(fields));
  }
  MarSampleSet set;
  for (auto& [year, list] : rows) {
    MarYear y;
    y.values = Matrix(list.size(), kPhysicalFeatureCount);
    for (std::size_t p = 0; p < list.size(); ++p) {
      y.points.push_back({list[p][1], list[p][2]});
      validate_point(y.points.back());
      for (std::size_t k = 0; k < kPhysicalFeatureCount; ++k) y.values(p, k) = list[p][3 + k];
    }
    set.years.emplace(year, std::move(y));
  }
  return set;
}

/// Samples file: one JSON object per line. Edge weights are not stored; they
/// are rebuilt from the coordinates with the recorded edge mode and cap.
inline nlohmann::json sample_to_json(const TemporalSample& s, const SampleOptions& opts) {
  nlohmann::json j;
  j["id"] = s.id;
  j["year"] = s.acquisition_year;
  j["edge_mode"] = std::string(to_string(opts.edge_mode));
  j["weight_cap"] = opts.weight_cap;
  j["mask"] = s.inputs.empty() ? opts.mask.str() : s.inputs.front().mask.str();
  j["lat"] = s.coords.lat;
  j["lon"] = s.coords.lon;
  auto years = nlohmann::json::array();
  auto feats = nlohmann::json::array();
  for (const auto& g : s.inputs) {
    years.push_back(g.year);
    auto rows = nlohmann::json::array();
    for (std::size_t i = 0; i < g.nodes(); ++i) rows.push_back(detail::row_json(g.node_features.row(i)));
    feats.push_back(std::move(rows));
  }
  j["input_years"] = std::move(years);
  j["features"] = std::move(feats);
  auto t = nlohmann::json::array();
  for (std::size_t i = 0; i < s.targets.rows(); ++i) t.push_back(detail::row_json(s.targets.row(i)));
  j["targets"] = std::move(t);
  return j;
}

inline TemporalSample sample_from_json(const nlohmann::json& j) {
  for (const char* f : {"id", "year", "edge_mode", "weight_cap", "mask", "lat", "lon", "input_years", "features",
                        "targets"})
    require(j.contains(f), ErrorKind::malformed_record, std::string("sample is missing field '") + f + "'");
  TemporalSample s;
  s.id = j["id"].get<std::string>();
  s.acquisition_year = j["year"].get<int>();
  s.coords.lat = detail::number_array(j["lat"], "lat", false);
  s.coords.lon = detail::number_array(j["lon"], "lon", false);
  s.coords.validate();
  const EdgeMode mode = parse_edge_mode(j["edge_mode"].get<std::string>());
  const double cap = j["weight_cap"].get<double>();
  const FeatureMask mask = FeatureMask::parse(j["mask"].get<std::string>());
  auto edges = std::make_shared<const Matrix>(build_edge_weights(s.coords, mode, cap));
  const auto& years = j["input_years"];
  const auto& feats = j["features"];
  require(years.size() == kInputYears && feats.size() == kInputYears, ErrorKind::malformed_record,
          "sample " + s.id + " must have 5 input graphs");
  for (std::size_t k = 0; k < kInputYears; ++k) {
    LayerGraph g;
    g.year = years[k].get<int>();
    g.mask = mask;
    g.edge_weights = edges;
    require(feats[k].size() == kTraceCount, ErrorKind::malformed_record, "feature rows must number 256");
    g.node_features = Matrix(kTraceCount, kFeatureCount);
    for (std::size_t i = 0; i < kTraceCount; ++i) {
      const auto row = detail::number_array(feats[k][i], "features", false);
      require(row.size() == kFeatureCount, ErrorKind::malformed_record, "feature rows must have 8 columns");
      std::copy(row.begin(), row.end(), g.node_features.row(i).begin());
    }
    s.inputs.push_back(std::move(g));
  }
  const auto& t = j["targets"];
  require(t.size() == kTraceCount, ErrorKind::malformed_record, "targets must have 256 rows");
  s.targets = Matrix(kTraceCount, kTargetYears);
  for (std::size_t i = 0; i < kTraceCount; ++i) {
    const auto row = detail::number_array(t[i], "targets", false);
    require(row.size() == kTargetYears, ErrorKind::malformed_record, "target rows must have 15 columns");
    std::copy(row.begin(), row.end(), s.targets.row(i).begin());
  }
  return s;
}

inline void write_samples(const std::string& path, const std::vector<TemporalSample>& samples,
                          const SampleOptions& opts) {
  auto out = detail::open_out(path);
  for (const auto& s : samples) out << sample_to_json(s, opts).dump() << '\n';
  require(out.good(), ErrorKind::io, "failed writing '" + path + "'");
}

/// `options`, when given, receives the edge mode, cap and mask the file was
/// built with; every line must agree.
inline std::vector<TemporalSample> read_samples(const std::string& path, SampleOptions* options = nullptr) {
  auto in = detail::open_in(path);
  std::vector<TemporalSample> samples;
  std::optional<std::string> signature;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      samples.push_back(sample_from_json(j));
      const std::string sig = j["edge_mode"].get<std::string>() + "|" + j["weight_cap"].dump() + "|" +
                              j["mask"].get<std::string>();
      if (!signature) {
        signature = sig;
        if (options) {
          options->edge_mode = parse_edge_mode(j["edge_mode"].get<std::string>());
          options->weight_cap = j["weight_cap"].get<double>();
          options->mask = FeatureMask::parse(j["mask"].get<std::string>());
        }
      }
      require(sig == *signature, ErrorKind::malformed_record,
              "samples disagree on edge mode, cap or mask (" + sig + " vs " + *signature + ")");
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorKind::malformed_record, path + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const Error& e) {
      fail(e.kind(), path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return samples;
}

}  // namespace psage
