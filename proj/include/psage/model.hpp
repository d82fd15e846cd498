// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

#include "psage/dataset.hpp"
#include "psage/error.hpp"
#include "psage/geo_graph.hpp"
#include "psage/gnn_layers.hpp"
#include "psage/matrix.hpp"
#include "psage/ops.hpp"
#include "psage/rng.hpp"

namespace psage {

enum class CellKind { sage, gcn };

inline std::string_view to_string(CellKind k) noexcept { return k == CellKind::sage ? "sage" : "gcn"; }

inline CellKind parse_cell_kind(std::string_view s) {
  if (s == "sage") return CellKind::sage;
  if (s == "gcn") return CellKind::gcn;
  fail(ErrorKind::config, "unknown cell kind '" + std::string(s) + "' (expected sage or gcn)");
}

struct ModelConfig {
  CellKind cell = CellKind::sage;
  std::size_t in_channels = kFeatureCount;
  std::size_t hidden = 256;
  std::vector<std::size_t> head = {128, 64};  // hidden widths; a final 15-wide layer follows
  std::size_t out_channels = kTargetYears;
  double dropout = 0.2;
  FeatureMask mask;
  EdgeMode edge_mode = EdgeMode::as_written;
  double weight_cap = kDefaultWeightCap;
  Aggregation aggregation = Aggregation::mean;
  std::optional<std::size_t> fanout;  // empty = all neighbours
  bool gate_bias = true;
  bool head_bias = true;

  /// Toy graphs in the gradient suite use other shapes; the trainable
  /// pipeline always runs at 8 in / 15 out.
  void validate(bool allow_toy_shapes = false) const {
    mask.validate();
    if (!allow_toy_shapes) {
      require(in_channels == kFeatureCount, ErrorKind::config, "in_channels is fixed at 8");
      require(out_channels == kTargetYears, ErrorKind::config, "out_channels is fixed at 15");
    }
    require(in_channels >= 1 && out_channels >= 1, ErrorKind::config, "channel counts must be positive");
    require(hidden >= 1, ErrorKind::config, "hidden width must be positive");
    for (std::size_t w : head) require(w >= 1, ErrorKind::config, "head widths must be positive");
    require(dropout >= 0.0 && dropout < 1.0, ErrorKind::config, "dropout must be in [0, 1)");
    require(weight_cap > 0.0 && std::isfinite(weight_cap), ErrorKind::config, "weight_cap must be positive");
    require(!fanout || *fanout >= 1, ErrorKind::config, "fanout must be at least 1");
  }

  SampleOptions sample_options() const { return {mask, edge_mode, weight_cap}; }
};

inline nlohmann::json to_json(const ModelConfig& c) {
  nlohmann::json j;
  j["cell"] = std::string(to_string(c.cell));
  j["in_channels"] = c.in_channels;
  j["hidden"] = c.hidden;
  j["head"] = c.head;
  j["out_channels"] = c.out_channels;
  j["dropout"] = c.dropout;
  j["mask"] = c.mask.str();
  j["edge_mode"] = std::string(to_string(c.edge_mode));
  j["weight_cap"] = c.weight_cap;
  j["aggregation"] = std::string(to_string(c.aggregation));
  j["fanout"] = c.fanout ? nlohmann::json(*c.fanout) : nlohmann::json("all");
  j["gate_bias"] = c.gate_bias;
  j["head_bias"] = c.head_bias;
  return j;
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.cell = parse_cell_kind(j.at("cell").get<std::string>());
    c.in_channels = j.at("in_channels").get<std::size_t>();
    c.hidden = j.at("hidden").get<std::size_t>();
    c.head = j.at("head").get<std::vector<std::size_t>>();
    c.out_channels = j.at("out_channels").get<std::size_t>();
    c.dropout = j.at("dropout").get<double>();
    c.mask = FeatureMask::parse(j.at("mask").get<std::string>());
    c.edge_mode = parse_edge_mode(j.at("edge_mode").get<std::string>());
    c.weight_cap = j.at("weight_cap").get<double>();
    c.aggregation = parse_aggregation(j.at("aggregation").get<std::string>());
    const auto& f = j.at("fanout");
    if (f.is_string()) {
      require(f.get<std::string>() == "all", ErrorKind::config, "fanout must be 'all' or a positive integer");
      c.fanout.reset();
    } else {
      c.fanout = f.get<std::size_t>();
    }
    c.gate_bias = j.at("gate_bias").get<bool>();
    c.head_bias = j.at("head_bias").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::corrupt_manifest, std::string("model config: ") + e.what());
  }
  return c;
}

/// z-score statistics from the training split. Degenerate columns (std below
/// 1e-12, e.g. masked-off features) get std = 1.
struct NormStats {
  std::vector<double> feature_mean = std::vector<double>(kFeatureCount, 0.0);
  std::vector<double> feature_std = std::vector<double>(kFeatureCount, 1.0);
  std::vector<double> target_mean = std::vector<double>(kTargetYears, 0.0);
  std::vector<double> target_std = std::vector<double>(kTargetYears, 1.0);

  static NormStats identity(std::size_t features = kFeatureCount, std::size_t targets = kTargetYears) {
    NormStats s;
    s.feature_mean.assign(features, 0.0);
    s.feature_std.assign(features, 1.0);
    s.target_mean.assign(targets, 0.0);
    s.target_std.assign(targets, 1.0);
    return s;
  }

  friend bool operator==(const NormStats&, const NormStats&) = default;
};

namespace detail {

/// Two-pass column mean and population std over a set of row blocks.
template <class Blocks>
void column_stats(const Blocks& blocks, std::size_t width, std::vector<double>& mean, std::vector<double>& sd) {
  mean.assign(width, 0.0);
  sd.assign(width, 0.0);
  double count = 0;
  for (const Matrix* m : blocks) {
    require(m->cols() == width, ErrorKind::shape, "statistics block width mismatch");
    for (std::size_t i = 0; i < m->rows(); ++i)
      for (std::size_t c = 0; c < width; ++c) mean[c] += (*m)(i, c);
    count += static_cast<double>(m->rows());
  }
  for (double& v : mean) v /= count;
  for (const Matrix* m : blocks)
    for (std::size_t i = 0; i < m->rows(); ++i)
      for (std::size_t c = 0; c < width; ++c) {
        const double d = (*m)(i, c) - mean[c];
        sd[c] += d * d;
      }
  for (double& v : sd) {
    v = std::sqrt(v / count);
    if (!(v > 1e-12)) v = 1.0;
  }
}

}  // namespace detail

inline NormStats compute_norm_stats(const std::vector<TemporalSample>& train) {
  require(!train.empty(), ErrorKind::invalid_input, "normalisation statistics need at least one training sample");
  std::vector<const Matrix*> features, targets;
  for (const auto& smp : train) {
    for (const auto& g : smp.inputs) features.push_back(&g.node_features);
    targets.push_back(&smp.targets);
  }
  NormStats s;
  detail::column_stats(features, kFeatureCount, s.feature_mean, s.feature_std);
  detail::column_stats(targets, kTargetYears, s.target_mean, s.target_std);
  return s;
}

inline Matrix normalize_columns(const Matrix& m, const std::vector<double>& mean, const std::vector<double>& sd) {
  require(m.cols() == mean.size() && m.cols() == sd.size(), ErrorKind::shape, "normalisation width mismatch");
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t c = 0; c < m.cols(); ++c) out(i, c) = (m(i, c) - mean[c]) / sd[c];
  return out;
}

inline Matrix denormalize_columns(const Matrix& m, const std::vector<double>& mean, const std::vector<double>& sd) {
  require(m.cols() == mean.size() && m.cols() == sd.size(), ErrorKind::shape, "normalisation width mismatch");
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t c = 0; c < m.cols(); ++c) out(i, c) = m(i, c) * sd[c] + mean[c];
  return out;
}

/// Graph-side operators for one input graph, built once and reused.
struct PreparedGraph {
  std::shared_ptr<const Matrix> edges;
  std::optional<MeanAggregator> aggregator;  // fanout = all
  std::optional<GcnPropagator> propagator;
};

/// Normalised model inputs for one temporal sample, in chronological order.
struct PreparedSample {
  std::string id;
  std::vector<Matrix> features;
  std::vector<std::shared_ptr<const PreparedGraph>> graphs;
  Matrix targets;             // raw pixels
  Matrix normalized_targets;  // z-scored with the model's stats
};

/// Fully connected layer y = x W + b with W of shape in x out.
struct Linear {
  Parameter weight;
  std::optional<Parameter> bias;

  static Linear init(const std::string& name, std::size_t in, std::size_t out, bool with_bias, Rng& rng) {
    Linear l;
    l.weight = Parameter(name + ".weight", uniform_fan_in(in, out, rng));
    if (with_bias) l.bias = Parameter(name + ".bias", Matrix(1, out));
    return l;
  }

  Matrix forward(const Matrix& x) const {
    Matrix y = matmul(x, weight.value);
    if (bias) add_row_broadcast(y, bias->value);
    return y;
  }

  Matrix backward(const Matrix& x, const Matrix& d_y) {
    add_matmul_tn(weight.grad, x, d_y);
    if (bias) add_column_sums(bias->grad, d_y);
    Matrix dx(x.rows(), x.cols());
    add_matmul_nt(dx, d_y, weight.value);
    return dx;
  }

  void collect(std::vector<Parameter*>& out) {
    out.push_back(&weight);
    if (bias) out.push_back(&*bias);
  }
};

/// hardswish -> Linear -> hardswish -> dropout -> ... -> Linear(out).
/// Dropout sits between linear layers only; nothing follows the last one.
class HeadMlp {
 public:
  struct Cache {
    Matrix input;                         // cell output h
    std::vector<Matrix> layer_inputs;     // input to each linear layer
    std::vector<Matrix> pre_activations;  // output of each hidden linear layer
    std::vector<Dropout> dropouts;
  };

  HeadMlp() = default;
  HeadMlp(std::size_t in, const std::vector<std::size_t>& widths, std::size_t out, bool bias, Rng& rng) {
    std::size_t prev = in;
    for (std::size_t k = 0; k < widths.size(); ++k) {
      layers_.push_back(Linear::init("head." + std::to_string(k), prev, widths[k], bias, rng));
      prev = widths[k];
    }
    layers_.push_back(Linear::init("head." + std::to_string(widths.size()), prev, out, bias, rng));
  }

  std::vector<Linear>& layers() noexcept { return layers_; }

  Matrix forward(const Matrix& h, double dropout, bool training, Rng& rng, Cache* cache = nullptr) const {
    Cache local;
    Cache& c = cache ? *cache : local;
    c.input = h;
    c.layer_inputs.assign(layers_.size(), {});
    c.pre_activations.assign(layers_.size() - 1, {});
    c.dropouts.assign(layers_.size() - 1, {});
    Matrix a = psage::hardswish(h);
    for (std::size_t k = 0; k + 1 < layers_.size(); ++k) {
      c.layer_inputs[k] = a;
      c.pre_activations[k] = layers_[k].forward(a);
      a = c.dropouts[k].forward(psage::hardswish(c.pre_activations[k]), dropout, training, rng);
    }
    c.layer_inputs.back() = a;
    return layers_.back().forward(a);
  }

  /// Returns d h.
  Matrix backward(const Cache& c, const Matrix& d_out) {
    Matrix d = layers_.back().backward(c.layer_inputs.back(), d_out);
    for (std::size_t k = layers_.size() - 1; k-- > 0;) {
      d = hardswish_backward(c.pre_activations[k], c.dropouts[k].backward(d));
      d = layers_[k].backward(c.layer_inputs[k], d);
    }
    return hardswish_backward(c.input, d);
  }

  void collect(std::vector<Parameter*>& out) {
    for (auto& l : layers_) l.collect(out);
  }

 private:
  std::vector<Linear> layers_;
};

/// Recurrent graph cell over the five input graphs followed by the head MLP
/// on the final hidden state.
class Model {
 public:
  using Cell = std::variant<SageLstmCell, GcnLstmCell>;

  struct ForwardCache {
    std::variant<UnrollCache<SageOp>, UnrollCache<GcnOp>> unroll;
    std::vector<MeanAggregator> sampled;
    HeadMlp::Cache head;
  };

  Model() = default;

  Model(const ModelConfig& config, std::uint64_t init_seed, bool allow_toy_shapes = false) : config_(config) {
    config_.validate(allow_toy_shapes);
    Rng rng(init_seed);
    if (config_.cell == CellKind::sage)
      cell_.emplace<SageLstmCell>("cell", config_.in_channels, config_.hidden, config_.gate_bias, rng);
    else
      cell_.emplace<GcnLstmCell>("cell", config_.in_channels, config_.hidden, config_.gate_bias, rng);
    head_ = HeadMlp(config_.hidden, config_.head, config_.out_channels, config_.head_bias, rng);
  }

  const ModelConfig& config() const noexcept { return config_; }
  Cell& cell() noexcept { return cell_; }
  HeadMlp& head() noexcept { return head_; }

  const std::optional<NormStats>& stats() const noexcept { return stats_; }
  void set_stats(NormStats s) { stats_ = std::move(s); }

  /// Stable order: cell parameters (per gate: input path, hidden path, bias)
  /// then head layers.
  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    std::visit([&](auto& c) { c.collect(out); }, cell_);
    head_.collect(out);
    return out;
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (auto* p : parameters()) n += p->size();
    return n;
  }

  void zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
  }

  /// Builds graph operators once per distinct edge matrix.
  std::shared_ptr<const PreparedGraph> prepare_graph(std::shared_ptr<const Matrix> edges) const {
    require(edges != nullptr, ErrorKind::invalid_input, "graph without edge weights");
    auto g = std::make_shared<PreparedGraph>();
    g->edges = edges;
    const std::size_t n = edges->rows();
    if (config_.cell == CellKind::sage) {
      if (!config_.fanout || *config_.fanout >= n - 1) {
        Rng unused(0);
        g->aggregator = NeighborSampler{}.make(n, edges.get(), config_.aggregation, unused);
      }
    } else {
      g->propagator = GcnPropagator(*edges);
    }
    return g;
  }

  /// Normalises features and targets; inputs are ordered oldest year first.
  PreparedSample prepare(const TemporalSample& s) const {
    require(stats_.has_value(), ErrorKind::invalid_input, "model has no normalisation statistics");
    require(!s.inputs.empty(), ErrorKind::invalid_input, "sample " + s.id + " has no input graphs");
    std::vector<const LayerGraph*> order;
    for (const auto& g : s.inputs) order.push_back(&g);
    std::stable_sort(order.begin(), order.end(), [](const LayerGraph* a, const LayerGraph* b) { return a->year < b->year; });

    PreparedSample p;
    p.id = s.id;
    std::map<const Matrix*, std::shared_ptr<const PreparedGraph>> seen;
    for (const LayerGraph* g : order) {
      require(g->node_features.cols() == config_.in_channels, ErrorKind::shape,
              "sample " + s.id + " features have " + std::to_string(g->node_features.cols()) + " columns");
      auto& prepared = seen[g->edge_weights.get()];
      if (!prepared) prepared = prepare_graph(g->edge_weights);
      p.graphs.push_back(prepared);
      p.features.push_back(normalize_columns(g->node_features, stats_->feature_mean, stats_->feature_std));
    }
    p.targets = s.targets;
    if (!s.targets.empty())
      p.normalized_targets = normalize_columns(s.targets, stats_->target_mean, stats_->target_std);
    return p;
  }

  std::vector<PreparedSample> prepare(const std::vector<TemporalSample>& samples) const {
    std::vector<PreparedSample> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(prepare(s));
    return out;
  }

  /// N x out predictions in normalised target space.
  Matrix forward(const PreparedSample& s, bool training, Rng& rng, ForwardCache* cache = nullptr) const {
    require(!s.features.empty() && s.features.size() == s.graphs.size(), ErrorKind::shape,
            "prepared sample needs one graph per feature matrix");
    ForwardCache local;
    ForwardCache& c = cache ? *cache : local;
    Matrix h;
    if (const auto* sage = std::get_if<SageLstmCell>(&cell_)) {
      c.sampled.clear();
      c.sampled.reserve(s.features.size());
      std::vector<StepInput<SageOp>> seq;
      for (std::size_t t = 0; t < s.features.size(); ++t) {
        const PreparedGraph& g = *s.graphs[t];
        const MeanAggregator* agg = g.aggregator ? &*g.aggregator : nullptr;
        if (!agg) {
          c.sampled.push_back(NeighborSampler(config_.fanout).make(s.features[t].rows(), g.edges.get(),
                                                                   config_.aggregation, rng));
          agg = &c.sampled.back();
        }
        seq.push_back({&s.features[t], agg});
      }
      auto& uc = c.unroll.emplace<UnrollCache<SageOp>>();
      h = unroll<SageOp>(*sage, seq, &uc);
    } else {
      const auto& gcn = std::get<GcnLstmCell>(cell_);
      std::vector<StepInput<GcnOp>> seq;
      for (std::size_t t = 0; t < s.features.size(); ++t) {
        require(s.graphs[t]->propagator.has_value(), ErrorKind::invalid_input, "graph was not prepared for GCN");
        seq.push_back({&s.features[t], &*s.graphs[t]->propagator});
      }
      auto& uc = c.unroll.emplace<UnrollCache<GcnOp>>();
      h = unroll<GcnOp>(gcn, seq, &uc);
    }
    return head_.forward(h, config_.dropout, training, rng, &c.head);
  }

  /// Accumulates parameter grads for d(loss)/d(output).
  void backward(const ForwardCache& c, const Matrix& d_out) {
    Matrix d_h = head_.backward(c.head, d_out);
    if (auto* sage = std::get_if<SageLstmCell>(&cell_))
      unroll_backward<SageOp>(*sage, std::get<UnrollCache<SageOp>>(c.unroll), d_h);
    else
      unroll_backward<GcnOp>(std::get<GcnLstmCell>(cell_), std::get<UnrollCache<GcnOp>>(c.unroll), d_h);
  }

  /// Inference-mode predictions in pixels, clamped at zero.
  Matrix predict_denormalized(const PreparedSample& s) const {
    require(stats_.has_value(), ErrorKind::invalid_input, "model has no normalisation statistics");
    Rng rng(0);
    Matrix out = denormalize_columns(forward(s, false, rng), stats_->target_mean, stats_->target_std);
    for (double& v : out.values()) v = std::max(0.0, v);
    return out;
  }

  /// Snapshot / restore of parameter values (same order as parameters()).
  std::vector<Matrix> snapshot() {
    std::vector<Matrix> out;
    for (auto* p : parameters()) out.push_back(p->value);
    return out;
  }

  void restore(const std::vector<Matrix>& values) {
    auto ps = parameters();
    require(ps.size() == values.size(), ErrorKind::shape, "snapshot does not match the model");
    for (std::size_t i = 0; i < ps.size(); ++i) {
      require(ps[i]->value.same_shape(values[i]), ErrorKind::shape, "snapshot shape mismatch for " + ps[i]->name);
      ps[i]->value = values[i];
    }
  }

 private:
  ModelConfig config_;
  Cell cell_;
  HeadMlp head_;
  std::optional<NormStats> stats_;
};

/// Closed-form parameter count for a configuration.
inline std::size_t expected_parameter_count(const ModelConfig& c) {
  const std::size_t f = c.in_channels, h = c.hidden;
  std::size_t cell = c.cell == CellKind::sage ? 4 * (2 * f * h + 2 * h * h) : 4 * (f * h + h * h);
  if (c.gate_bias) cell += 4 * h;
  std::size_t head = 0, prev = h;
  for (std::size_t w : c.head) {
    head += prev * w + (c.head_bias ? w : 0);
    prev = w;
  }
  head += prev * c.out_channels + (c.head_bias ? c.out_channels : 0);
  return cell + head;
}

}  // namespace psage
