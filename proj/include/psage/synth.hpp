// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "psage/dataset.hpp"
#include "psage/error.hpp"
#include "psage/geo_graph.hpp"
#include "psage/rng.hpp"

namespace psage {

/// Desk-scale stand-in for labelled radar records.
///
/// Each record follows a short, gently curved flight line inside its own
/// 0.5 x 1.0 degree cell of a grid over Greenland. Layer k's thickness along
/// the track is base_k * s(t) * m_k + noise, where s(t) is a sum of
/// low-frequency sinusoids shared by every layer of the record, m_k = 1 for
/// the five shallow layers and m_k = a for the deep ones. The per-record
/// factor a is drawn from [1 - spread, 1 + spread] and is invisible in the
/// shallow layers. When `informative_channel` is set, the smb channel of the
/// emitted MAR samples around each track equals a, so it explains the deep
/// thickness that the base features cannot.
struct SynthParams {
  std::uint64_t seed = 0;
  std::size_t n_records = 20;
  std::size_t layers = kMinCompleteLayers;  // thickness rows; boundaries = layers + 1
  std::size_t harmonics = 3;
  double smooth_amplitude = 0.15;  // relative amplitude of the along-track profile
  double noise_std = 0.25;         // pixels
  double base_thickness = 12.0;    // pixels, shallowest layer
  double deep_spread = 0.4;
  int acquisition_year = 2012;
  bool emit_mar = true;
  bool informative_channel = true;
};

struct SynthOutput {
  std::vector<LabeledImageRecord> records;
  std::optional<MarSampleSet> mar;
  std::vector<double> deep_factor;  // a per record
  std::vector<double> channel;      // informative channel value per record (when MAR emitted)
  double channel_target_correlation = std::numeric_limits<double>::quiet_NaN();
};

inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  require(x.size() == y.size() && x.size() >= 2, ErrorKind::invalid_input, "correlation needs paired samples");
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

namespace synth_detail {
inline constexpr double kLatMin = 66.0, kLonMin = -54.0;
inline constexpr double kCellLat = 0.5, kCellLon = 1.0;
inline constexpr std::size_t kCellRows = 24, kCellCols = 30;
inline constexpr double kTrackLength = 0.15;  // degrees in the (lon, lat) plane
inline constexpr double kStripHalfWidth = 0.03;
inline constexpr std::size_t kMarStations = 32;
}  // namespace synth_detail

inline SynthOutput synth_generate(const SynthParams& p) {
  using namespace synth_detail;
  require(p.n_records >= 1, ErrorKind::invalid_input, "n_records must be at least 1");
  require(p.layers >= kMinCompleteLayers, ErrorKind::invalid_input, "at least 20 layers are required");
  require(p.harmonics >= 1, ErrorKind::invalid_input, "harmonics must be at least 1");
  require(p.smooth_amplitude >= 0.0 && p.smooth_amplitude < 0.5, ErrorKind::invalid_input,
          "smooth_amplitude must be in [0, 0.5)");
  require(p.noise_std >= 0.0 && std::isfinite(p.noise_std), ErrorKind::invalid_input, "noise_std must be >= 0");
  require(p.base_thickness > 1.0, ErrorKind::invalid_input, "base_thickness must exceed 1 pixel");
  require(p.deep_spread >= 0.0 && p.deep_spread < 1.0, ErrorKind::invalid_input, "deep_spread must be in [0, 1)");
  require(!p.emit_mar || p.n_records <= kCellRows * kCellCols, ErrorKind::invalid_input,
          "at most 720 records can carry separated MAR tiles");

  Rng root(p.seed);
  Rng layout = root.fork(1);
  const auto cells = layout.permutation(kCellRows * kCellCols);

  SynthOutput out;
  std::vector<int> years;
  for (std::size_t k = 0; k < kInputYears; ++k) years.push_back(p.acquisition_year - 1 - static_cast<int>(k));
  std::vector<std::vector<double>> mar_rows;  // (year, lat, lon, 5 values)
  std::vector<double> mean_target;

  for (std::size_t r = 0; r < p.n_records; ++r) {
    Rng rng = root.fork(1000 + r);
    const std::size_t cell = cells[r % cells.size()];
    const double lat_c = kLatMin + (static_cast<double>(cell / kCellCols) + 0.5) * kCellLat + rng.uniform(-0.1, 0.1);
    const double lon_c = kLonMin + (static_cast<double>(cell % kCellCols) + 0.5) * kCellLon + rng.uniform(-0.2, 0.2);
    const double heading = rng.uniform(0.0, std::numbers::pi);
    const double bend = rng.uniform(-0.01, 0.01);
    const double tx = std::cos(heading), ty = std::sin(heading);  // along-track in (lon, lat)
    const double nx = -ty, ny = tx;

    auto track = [&](double t) {
      const double along = (t - 0.5) * kTrackLength;
      const double off = bend * std::sin(std::numbers::pi * t);
      return GeoPoint{lat_c + along * ty + off * ny, lon_c + along * tx + off * nx};
    };

    LabeledImageRecord rec;
    rec.id = "synth-" + std::to_string(p.seed) + "-" + std::to_string(r);
    rec.year = p.acquisition_year;
    rec.coords.lat.resize(kTraceCount);
    rec.coords.lon.resize(kTraceCount);
    for (std::size_t i = 0; i < kTraceCount; ++i) {
      const GeoPoint g = track(static_cast<double>(i) / static_cast<double>(kTraceCount - 1));
      rec.coords.lat[i] = g.lat;
      rec.coords.lon[i] = g.lon;
    }

    std::vector<double> amp(p.harmonics), phase(p.harmonics);
    for (std::size_t h = 0; h < p.harmonics; ++h) {
      amp[h] = p.smooth_amplitude / static_cast<double>(h + 1) * rng.uniform(0.5, 1.0);
      phase[h] = rng.uniform(0.0, 2.0 * std::numbers::pi);
    }
    std::vector<double> profile(kTraceCount);
    for (std::size_t i = 0; i < kTraceCount; ++i) {
      const double t = static_cast<double>(i) / static_cast<double>(kTraceCount - 1);
      double s = 1.0;
      for (std::size_t h = 0; h < p.harmonics; ++h)
        s += amp[h] * std::sin(2.0 * std::numbers::pi * static_cast<double>(h + 1) * t + phase[h]);
      profile[i] = s;
    }
    const double deep = rng.uniform(1.0 - p.deep_spread, 1.0 + p.deep_spread);
    out.deep_factor.push_back(deep);

    rec.boundaries = Matrix(p.layers + 1, kTraceCount);
    const double surface = rng.uniform(15.0, 40.0);
    const double surface_tilt = rng.uniform(-3.0, 3.0);
    double target_sum = 0.0;
    for (std::size_t i = 0; i < kTraceCount; ++i) {
      const double t = static_cast<double>(i) / static_cast<double>(kTraceCount - 1);
      double b = surface + surface_tilt * t;
      rec.boundaries(0, i) = b;
      for (std::size_t k = 0; k < p.layers; ++k) {
        const double base = p.base_thickness * (1.0 - 0.015 * static_cast<double>(k));
        const double factor = k < kInputYears ? 1.0 : deep;
        const double thick = std::max(0.5, base * profile[i] * factor + p.noise_std * rng.normal());
        b += thick;
        rec.boundaries(k + 1, i) = b;
        if (k >= kInputYears && k < kMinCompleteLayers) target_sum += thick;
      }
    }
    mean_target.push_back(target_sum / static_cast<double>(kTraceCount * kTargetYears));

    if (p.emit_mar) {
      const double channel = p.informative_channel ? deep : rng.uniform(1.0 - p.deep_spread, 1.0 + p.deep_spread);
      out.channel.push_back(channel);
      for (int year : years) {
        Rng yr = rng.fork(static_cast<std::uint64_t>(year));
        for (std::size_t m = 0; m < kMarStations; ++m) {
          const GeoPoint g = track(static_cast<double>(m) / static_cast<double>(kMarStations - 1));
          for (double side : {-1.0, 1.0}) {
            const double lat = g.lat + side * kStripHalfWidth * ny;
            const double lon = g.lon + side * kStripHalfWidth * nx;
            mar_rows.push_back({static_cast<double>(year), lat, lon, channel,
                                -25.0 + 0.5 * (lat - 72.0) + yr.normal(), yr.uniform(0.0, 1.0),
                                yr.uniform(0.0, 0.2), yr.uniform(0.5, 2.0)});
          }
        }
      }
    }
    out.records.push_back(std::move(rec));
  }

  if (p.emit_mar) {
    MarSampleSet set;
    std::map<int, std::vector<const std::vector<double>*>> by_year;
    for (const auto& row : mar_rows) by_year[static_cast<int>(row[0])].push_back(&row);
    for (const auto& [year, rows] : by_year) {
      MarYear y;
      y.values = Matrix(rows.size(), kPhysicalFeatureCount);
      for (std::size_t i = 0; i < rows.size(); ++i) {
        y.points.push_back({(*rows[i])[1], (*rows[i])[2]});
        for (std::size_t k = 0; k < kPhysicalFeatureCount; ++k) y.values(i, k) = (*rows[i])[3 + k];
      }
      set.years.emplace(year, std::move(y));
    }
    out.mar = std::move(set);
    if (p.informative_channel && p.n_records >= 3 && p.deep_spread > 0.0) {
      out.channel_target_correlation = pearson(out.channel, mean_target);
      require(out.channel_target_correlation >= 0.8, ErrorKind::contract,
              "informative channel correlation " + std::to_string(out.channel_target_correlation) +
                  " fell below 0.8");
    }
  }
  return out;
}

}  // namespace psage
