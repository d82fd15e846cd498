// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "psage/error.hpp"
#include "psage/model.hpp"
#include "psage/training.hpp"

namespace psage {

/// Flat experiment configuration. Every key is optional in the file; absent
/// keys keep the defaults below.
///
///   records, mar, samples, out_dir        paths
///   cell                                  "sage" | "gcn"
///   hidden, head, dropout                 network shape
///   mask                                  8 characters of 0/1, e.g. "11110000"
///   edge_mode                             "as-written" | "sqrt"
///   weight_cap                            positive real
///   aggregation                           "mean" | "weighted_mean"
///   fanout                                "all" | positive integer
///   gate_bias, head_bias                  booleans
///   epochs                                integer (default 450 sage / 300 gcn)
///   lr, lr_period, weight_decay           optimiser
///   decoupled_weight_decay, shuffle       booleans
///   seed, trials, threads                 integers
///   bit_exact                             boolean; reports omit wall time
///   label                                 row name in comparison tables
struct ExperimentConfig {
  std::string records;
  std::string mar;
  std::string samples;
  std::string out_dir = "out";
  ModelConfig model;
  TrainConfig train;
  std::size_t trials = 5;
  std::size_t threads = 1;
  bool bit_exact = true;
  std::string label;

  std::string effective_label() const {
    if (!label.empty()) return label;
    std::string l = model.cell == CellKind::sage ? "GraphSAGE-LSTM" : "GCN-LSTM";
    if (model.mask.any_physical()) l = (model.cell == CellKind::sage ? "PSAGE-LSTM" : "PGCN-LSTM");
    return l + " [" + model.mask.str() + "]";
  }

  TrialSettings trial_settings() const {
    TrialSettings s;
    s.model = model;
    s.train = train;
    s.n_trials = trials;
    s.threads = threads;
    s.label = effective_label();
    s.record_wall_time = !bit_exact;
    return s;
  }

  void validate() const {
    model.validate();
    train.validate();
    require(trials >= 1, ErrorKind::config, "trials must be at least 1");
    require(threads >= 1, ErrorKind::config, "threads must be at least 1");
  }

  /// Every named path must exist.
  void require_paths(std::initializer_list<const std::string*> paths) const {
    for (const std::string* p : paths) {
      require(!p->empty(), ErrorKind::config, "a required path is not set");
      require(std::filesystem::exists(*p), ErrorKind::io, "file not found: " + *p);
    }
  }
};

inline const std::set<std::string>& config_keys() {
  static const std::set<std::string> keys = {
      "records", "mar",       "samples",  "out_dir",   "cell",         "hidden", "head",
      "dropout", "mask",      "edge_mode", "weight_cap", "aggregation", "fanout", "gate_bias",
      "head_bias", "epochs",  "lr",       "lr_period", "weight_decay", "decoupled_weight_decay",
      "shuffle", "seed",      "trials",   "threads",   "bit_exact",    "label"};
  return keys;
}

/// Applies the keys present in `j` on top of `c`.
inline void apply_config_json(ExperimentConfig& c, const nlohmann::json& j) {
  require(j.is_object(), ErrorKind::config, "config must be a JSON object");
  for (const auto& [key, _] : j.items())
    require(config_keys().count(key) != 0, ErrorKind::config, "unknown config key '" + key + "'");
  try {
    auto str = [&](const char* k, std::string& dst) {
      if (j.contains(k)) dst = j[k].get<std::string>();
    };
    str("records", c.records);
    str("mar", c.mar);
    str("samples", c.samples);
    str("out_dir", c.out_dir);
    str("label", c.label);
    if (j.contains("cell")) c.model.cell = parse_cell_kind(j["cell"].get<std::string>());
    if (j.contains("hidden")) c.model.hidden = j["hidden"].get<std::size_t>();
    if (j.contains("head")) c.model.head = j["head"].get<std::vector<std::size_t>>();
    if (j.contains("dropout")) c.model.dropout = j["dropout"].get<double>();
    if (j.contains("mask")) c.model.mask = FeatureMask::parse(j["mask"].get<std::string>());
    if (j.contains("edge_mode")) c.model.edge_mode = parse_edge_mode(j["edge_mode"].get<std::string>());
    if (j.contains("weight_cap")) c.model.weight_cap = j["weight_cap"].get<double>();
    if (j.contains("aggregation")) c.model.aggregation = parse_aggregation(j["aggregation"].get<std::string>());
    if (j.contains("fanout")) {
      const auto& f = j["fanout"];
      if (f.is_string()) {
        require(f.get<std::string>() == "all", ErrorKind::config, "fanout must be \"all\" or a positive integer");
        c.model.fanout.reset();
      } else {
        c.model.fanout = f.get<std::size_t>();
      }
    }
    if (j.contains("gate_bias")) c.model.gate_bias = j["gate_bias"].get<bool>();
    if (j.contains("head_bias")) c.model.head_bias = j["head_bias"].get<bool>();
    if (j.contains("epochs")) c.train.epochs = j["epochs"].get<std::size_t>();
    if (j.contains("lr")) c.train.lr0 = j["lr"].get<double>();
    if (j.contains("lr_period")) c.train.lr_period = j["lr_period"].get<std::size_t>();
    if (j.contains("weight_decay")) c.train.adam.weight_decay = j["weight_decay"].get<double>();
    if (j.contains("decoupled_weight_decay")) c.train.adam.decoupled = j["decoupled_weight_decay"].get<bool>();
    if (j.contains("shuffle")) c.train.shuffle = j["shuffle"].get<bool>();
    if (j.contains("seed")) c.train.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("trials")) c.trials = j["trials"].get<std::size_t>();
    if (j.contains("threads")) c.threads = j["threads"].get<std::size_t>();
    if (j.contains("bit_exact")) c.bit_exact = j["bit_exact"].get<bool>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::config, std::string("config value has the wrong type: ") + e.what());
  }
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["records"] = c.records;
  j["mar"] = c.mar;
  j["samples"] = c.samples;
  j["out_dir"] = c.out_dir;
  j["cell"] = std::string(to_string(c.model.cell));
  j["hidden"] = c.model.hidden;
  j["head"] = c.model.head;
  j["dropout"] = c.model.dropout;
  j["mask"] = c.model.mask.str();
  j["edge_mode"] = std::string(to_string(c.model.edge_mode));
  j["weight_cap"] = c.model.weight_cap;
  j["aggregation"] = std::string(to_string(c.model.aggregation));
  j["fanout"] = c.model.fanout ? nlohmann::json(*c.model.fanout) : nlohmann::json("all");
  j["gate_bias"] = c.model.gate_bias;
  j["head_bias"] = c.model.head_bias;
  j["epochs"] = c.train.epochs_for(c.model.cell);
  j["lr"] = c.train.lr0;
  j["lr_period"] = c.train.lr_period;
  j["weight_decay"] = c.train.adam.weight_decay;
  j["decoupled_weight_decay"] = c.train.adam.decoupled;
  j["shuffle"] = c.train.shuffle;
  j["seed"] = c.train.seed;
  j["trials"] = c.trials;
  j["threads"] = c.threads;
  j["bit_exact"] = c.bit_exact;
  j["label"] = c.effective_label();
  return j;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::io, "cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::config, "config '" + path + "' is not valid JSON: " + e.what());
  }
  ExperimentConfig c;
  apply_config_json(c, j);
  return c;
}

}  // namespace psage
