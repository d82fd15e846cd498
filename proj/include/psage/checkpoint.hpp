// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bit>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "psage/error.hpp"
#include "psage/matrix.hpp"
#include "psage/model.hpp"

namespace psage {

/// Binary layout, all integers and reals little-endian:
///
///   8 bytes  magic "PSAGECKP"
///   u32      format version
///   u64      header length H
///   H bytes  JSON header: config, seed, epoch, has_stats, manifest
///   payload  for each manifest entry, rows*cols f64 values in row-major order
///
/// Normalisation statistics travel as manifest entries ("norm.*") so that they
/// round-trip bit-exactly like the weights.
inline constexpr std::string_view kCheckpointMagic = "PSAGECKP";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointMeta {
  std::uint64_t seed = 0;
  std::size_t epoch = 0;
};

namespace ckpt_detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_le(const std::string& in, std::size_t pos, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

struct Entry {
  std::string name;
  const Matrix* matrix;
};

inline std::vector<Entry> stats_entries(const NormStats& s, std::vector<Matrix>& storage) {
  storage.clear();
  storage.push_back(Matrix::row_vector(s.feature_mean));
  storage.push_back(Matrix::row_vector(s.feature_std));
  storage.push_back(Matrix::row_vector(s.target_mean));
  storage.push_back(Matrix::row_vector(s.target_std));
  return {{"norm.feature_mean", &storage[0]},
          {"norm.feature_std", &storage[1]},
          {"norm.target_mean", &storage[2]},
          {"norm.target_std", &storage[3]}};
}

}  // namespace ckpt_detail

inline std::string serialize_checkpoint(Model& model, const CheckpointMeta& meta) {
  using namespace ckpt_detail;
  std::vector<Entry> entries;
  for (Parameter* p : model.parameters()) entries.push_back({p->name, &p->value});
  std::vector<Matrix> stats_storage;
  if (model.stats())
    for (auto& e : stats_entries(*model.stats(), stats_storage)) entries.push_back(e);

  nlohmann::json header;
  header["config"] = to_json(model.config());
  header["seed"] = meta.seed;
  header["epoch"] = meta.epoch;
  header["has_stats"] = model.stats().has_value();
  auto manifest = nlohmann::json::array();
  for (const auto& e : entries)
    manifest.push_back({{"name", e.name}, {"rows", e.matrix->rows()}, {"cols", e.matrix->cols()}});
  header["manifest"] = std::move(manifest);
  const std::string header_text = header.dump();

  std::string out(kCheckpointMagic);
  put_u32(out, kCheckpointVersion);
  put_u64(out, header_text.size());
  out += header_text;
  for (const auto& e : entries)
    for (double v : e.matrix->values()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

struct LoadedCheckpoint {
  Model model;
  CheckpointMeta meta;
};

inline LoadedCheckpoint deserialize_checkpoint(const std::string& bytes) {
  using namespace ckpt_detail;
  const std::size_t fixed = kCheckpointMagic.size() + 4 + 8;
  require(bytes.size() >= fixed, ErrorKind::corrupt_manifest, "checkpoint is truncated (no header)");
  require(std::string_view(bytes).substr(0, kCheckpointMagic.size()) == kCheckpointMagic,
          ErrorKind::corrupt_manifest, "not a checkpoint file (bad magic)");
  const auto version = static_cast<std::uint32_t>(get_le(bytes, kCheckpointMagic.size(), 4));
  require(version == kCheckpointVersion, ErrorKind::version_mismatch,
          "checkpoint version " + std::to_string(version) + ", expected " + std::to_string(kCheckpointVersion));
  const std::uint64_t header_len = get_le(bytes, kCheckpointMagic.size() + 4, 8);
  require(header_len <= bytes.size() - fixed, ErrorKind::corrupt_manifest, "checkpoint is truncated (header)");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(fixed, header_len));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::corrupt_manifest, std::string("checkpoint header: ") + e.what());
  }

  LoadedCheckpoint out;
  std::map<std::string, Matrix> values;
  std::vector<std::string> order;
  try {
    const ModelConfig config = model_config_from_json(header.at("config"));
    out.meta.seed = header.at("seed").get<std::uint64_t>();
    out.meta.epoch = header.at("epoch").get<std::size_t>();
    const bool has_stats = header.at("has_stats").get<bool>();
    out.model = Model(config, 0, /*allow_toy_shapes=*/true);

    std::size_t pos = fixed + header_len;
    for (const auto& e : header.at("manifest")) {
      const auto name = e.at("name").get<std::string>();
      const auto rows = e.at("rows").get<std::size_t>();
      const auto cols = e.at("cols").get<std::size_t>();
      require(rows * cols <= (bytes.size() - pos) / 8, ErrorKind::corrupt_manifest,
              "checkpoint payload is truncated at '" + name + "'");
      Matrix m(rows, cols);
      for (double& v : m.values()) {
        v = std::bit_cast<double>(get_le(bytes, pos, 8));
        pos += 8;
      }
      require(values.emplace(name, std::move(m)).second, ErrorKind::corrupt_manifest,
              "duplicate manifest entry '" + name + "'");
      order.push_back(name);
    }
    require(pos == bytes.size(), ErrorKind::corrupt_manifest, "checkpoint has trailing bytes after the payload");

    for (Parameter* p : out.model.parameters()) {
      auto it = values.find(p->name);
      require(it != values.end(), ErrorKind::corrupt_manifest, "checkpoint lacks parameter '" + p->name + "'");
      require(it->second.same_shape(p->value), ErrorKind::corrupt_manifest,
              "parameter '" + p->name + "' is " + shape_string(it->second) + ", model expects " +
                  shape_string(p->value));
      p->value = std::move(it->second);
      values.erase(it);
    }
    if (has_stats) {
      NormStats s;
      auto take = [&](const char* name, std::vector<double>& dst) {
        auto it = values.find(name);
        require(it != values.end() && it->second.rows() == 1, ErrorKind::corrupt_manifest,
                std::string("checkpoint lacks '") + name + "'");
        dst.assign(it->second.values().begin(), it->second.values().end());
        values.erase(it);
      };
      take("norm.feature_mean", s.feature_mean);
      take("norm.feature_std", s.feature_std);
      take("norm.target_mean", s.target_mean);
      take("norm.target_std", s.target_std);
      out.model.set_stats(std::move(s));
    }
    require(values.empty(), ErrorKind::corrupt_manifest,
            "checkpoint carries unknown entry '" + (values.empty() ? std::string() : values.begin()->first) + "'");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::corrupt_manifest, std::string("checkpoint manifest: ") + e.what());
  }
  return out;
}

inline void save_checkpoint(Model& model, const std::string& path, const CheckpointMeta& meta = {}) {
  const std::string bytes = serialize_checkpoint(model, meta);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorKind::io, "cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  require(out.good(), ErrorKind::io, "failed writing '" + path + "'");
}

inline LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::io, "cannot open '" + path + "' for reading");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(bytes);
}

}  // namespace psage
