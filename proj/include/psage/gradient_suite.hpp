// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "psage/geo_graph.hpp"
#include "psage/gnn_layers.hpp"
#include "psage/grad_check.hpp"
#include "psage/matrix.hpp"
#include "psage/model.hpp"
#include "psage/ops.hpp"
#include "psage/rng.hpp"

namespace psage {

inline constexpr double kLayerGradTolerance = 1e-6;
inline constexpr double kDeepGradTolerance = 1e-5;
inline constexpr std::size_t kToyNodes = 8;

/// eps = 1e-4 rather than 1e-5: through five recurrent steps some gradient
/// coordinates sit near 1e-8, where the 1e-5 step's roundoff alone exceeds
/// the tolerance.
struct GradSuiteOptions {
  std::uint64_t seed = 0;
  double eps = 1e-4;
  std::size_t coords = 200;  // per check; everything when fewer exist
};

struct GradSuiteEntry {
  std::string name;
  double tolerance = 0.0;
  GradCheckResult result;
  double seconds = 0.0;
  bool passed() const noexcept { return result.max_rel_error <= tolerance; }
};

namespace gradsuite_detail {

inline Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (double& v : m.values()) v = rng.uniform(-scale, scale);
  return m;
}

/// sum(R .* Y): a linear readout whose cotangent is R itself.
inline double readout(const Matrix& y, const Matrix& r) {
  double s = 0.0;
  for (std::size_t k = 0; k < y.size(); ++k) s += y.data()[k] * r.data()[k];
  return s;
}

inline void accumulate(Parameter& p, const Matrix& g) { p.grad += g; }

/// Eight traces scattered over a few degrees, so edge weights stay moderate.
inline std::shared_ptr<const Matrix> toy_edges(Rng& rng, std::size_t n = kToyNodes) {
  std::vector<double> lat(n), lon(n);
  for (std::size_t i = 0; i < n; ++i) {
    lat[i] = rng.uniform(68.0, 74.0);
    lon[i] = rng.uniform(-48.0, -32.0);
  }
  return std::make_shared<const Matrix>(build_edge_weights(lat, lon, EdgeMode::as_written, kDefaultWeightCap));
}

template <class F>
GradSuiteEntry timed(std::string name, double tol, F&& body) {
  const auto t0 = std::chrono::steady_clock::now();
  GradSuiteEntry e;
  e.name = std::move(name);
  e.tolerance = tol;
  e.result = body();
  e.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return e;
}

inline GradCheckResult check_sage_layer(std::uint64_t seed, Aggregation agg, const GradSuiteOptions& o) {
  Rng rng(seed);
  auto edges = toy_edges(rng);
  auto layer = SageLayerParams::init("sage", 4, 3, true, rng);
  for (double& v : layer.bias->value.values()) v = rng.uniform(-0.5, 0.5);
  Parameter x("x", random_matrix(kToyNodes, 4, rng));
  const Matrix r = random_matrix(kToyNodes, 3, rng);
  const MeanAggregator op = NeighborSampler{}.make(kToyNodes, edges.get(), agg, rng);
  std::vector<Parameter*> ps;
  layer.collect(ps);
  ps.push_back(&x);
  auto f = [&](bool grads) {
    GraphLayerCache<SageOp> cache;
    const Matrix y = sage_forward(layer, x.value, op, &cache);
    if (grads) accumulate(x, graph_layer_backward<SageOp>(layer, cache, op, r));
    return readout(y, r);
  };
  return grad_check(f, ps, o.eps, o.coords, seed);
}

inline GradCheckResult check_gcn_layer(std::uint64_t seed, const GradSuiteOptions& o) {
  Rng rng(seed);
  auto edges = toy_edges(rng);
  auto layer = GcnLayerParams::init("gcn", 4, 3, true, rng);
  for (double& v : layer.bias->value.values()) v = rng.uniform(-0.5, 0.5);
  Parameter x("x", random_matrix(kToyNodes, 4, rng));
  const Matrix r = random_matrix(kToyNodes, 3, rng);
  const GcnPropagator op(*edges);
  std::vector<Parameter*> ps;
  layer.collect(ps);
  ps.push_back(&x);
  auto f = [&](bool grads) {
    GraphLayerCache<GcnOp> cache;
    const Matrix y = gcn_forward(layer, x.value, op, &cache);
    if (grads) accumulate(x, graph_layer_backward<GcnOp>(layer, cache, op, r));
    return readout(y, r);
  };
  return grad_check(f, ps, o.eps, o.coords, seed);
}

template <class Op>
GradCheckResult check_lstm_step(std::uint64_t seed, const typename Op::Operator& op, Rng& rng, const GradSuiteOptions& o) {
  const std::size_t in = 4, hidden = 5;
  GraphLstmCell<Op> cell("cell", in, hidden, true, rng);
  for (auto& b : cell.biases())
    for (double& v : b->value.values()) v = rng.uniform(-0.5, 0.5);
  Parameter x("x", random_matrix(kToyNodes, in, rng));
  Parameter h("h_prev", random_matrix(kToyNodes, hidden, rng, 0.8));
  Parameter c("c_prev", random_matrix(kToyNodes, hidden, rng, 1.5));
  const Matrix rh = random_matrix(kToyNodes, hidden, rng);
  const Matrix rc = random_matrix(kToyNodes, hidden, rng);
  std::vector<Parameter*> ps;
  cell.collect(ps);
  ps.push_back(&x);
  ps.push_back(&h);
  ps.push_back(&c);
  auto f = [&](bool grads) {
    typename GraphLstmCell<Op>::StepCache cache;
    const auto s = cell.step(x.value, h.value, c.value, op, &cache);
    if (grads) {
      auto g = cell.backward(cache, rh, rc);
      accumulate(x, g.d_x);
      accumulate(h, g.d_h_prev);
      accumulate(c, g.d_c_prev);
    }
    return readout(s.h, rh) + readout(s.c, rc);
  };
  return grad_check(f, ps, o.eps, o.coords, seed);
}

inline GradCheckResult check_sage_lstm_step(std::uint64_t seed, const GradSuiteOptions& o) {
  Rng rng(seed);
  const MeanAggregator op = MeanAggregator::complete(kToyNodes);
  return check_lstm_step<SageOp>(seed, op, rng, o);
}

inline GradCheckResult check_gcn_lstm_step(std::uint64_t seed, const GradSuiteOptions& o) {
  Rng rng(seed);
  auto edges = toy_edges(rng);
  const GcnPropagator op(*edges);
  return check_lstm_step<GcnOp>(seed, op, rng, o);
}

inline GradCheckResult check_head(std::uint64_t seed, const GradSuiteOptions& o) {
  Rng rng(seed);
  HeadMlp head(6, {5, 4}, 3, true, rng);
  for (auto& l : head.layers())
    for (double& v : l.bias->value.values()) v = rng.uniform(-0.5, 0.5);
  Parameter h("h", random_matrix(kToyNodes, 6, rng, 2.0));
  const Matrix r = random_matrix(kToyNodes, 3, rng);
  std::vector<Parameter*> ps;
  head.collect(ps);
  ps.push_back(&h);
  auto f = [&](bool grads) {
    Rng unused(0);
    HeadMlp::Cache cache;
    const Matrix y = head.forward(h.value, 0.0, false, unused, &cache);
    if (grads) accumulate(h, head.backward(cache, r));
    return readout(y, r);
  };
  return grad_check(f, ps, o.eps, o.coords, seed);
}

/// Full network on five toy graphs with MSE against random targets.
inline GradCheckResult check_model(std::uint64_t seed, CellKind cell, std::optional<std::size_t> fanout, Aggregation agg,
                                   const GradSuiteOptions& o) {
  Rng rng(seed);
  ModelConfig cfg;
  cfg.cell = cell;
  cfg.in_channels = kFeatureCount;
  cfg.hidden = 6;
  cfg.head = {5, 4};
  cfg.out_channels = 3;
  cfg.dropout = 0.0;
  cfg.mask = FeatureMask::all();
  cfg.fanout = fanout;
  cfg.aggregation = agg;
  Model model(cfg, seed, /*allow_toy_shapes=*/true);
  // Nonzero biases, and head weights scaled up: at toy widths the default
  // init attenuates the signal reaching the cell until its gradients sit
  // near the finite-difference noise floor.
  for (Parameter* p : model.parameters()) {
    if (p->value.rows() == 1)
      for (double& v : p->value.values()) v = rng.uniform(-0.3, 0.3);
    else if (p->name.starts_with("head."))
      p->value *= 3.0;
  }

  PreparedSample s;
  s.id = "toy";
  for (std::size_t t = 0; t < 5; ++t) {
    s.graphs.push_back(model.prepare_graph(toy_edges(rng)));
    s.features.push_back(random_matrix(kToyNodes, kFeatureCount, rng));
  }
  s.normalized_targets = random_matrix(kToyNodes, 3, rng);
  auto ps = model.parameters();
  auto f = [&](bool grads) {
    Rng sampler(seed + 17);  // same neighbour draw on every evaluation
    Model::ForwardCache cache;
    const Matrix y = model.forward(s, false, sampler, &cache);
    if (grads) model.backward(cache, mse_backward(y, s.normalized_targets));
    return mse_loss(y, s.normalized_targets);
  };
  return grad_check(f, ps, o.eps, o.coords, seed);
}

}  // namespace gradsuite_detail

/// Every layer and the full networks, each against central differences.
inline std::vector<GradSuiteEntry> run_gradient_suite(const GradSuiteOptions& o = {}) {
  using namespace gradsuite_detail;
  const std::uint64_t seed = o.seed;
  std::vector<GradSuiteEntry> out;
  out.push_back(timed("sage_layer", kLayerGradTolerance, [&] { return check_sage_layer(seed, Aggregation::mean, o); }));
  out.push_back(timed("sage_layer_weighted", kLayerGradTolerance,
                      [&] { return check_sage_layer(seed + 1, Aggregation::weighted_mean, o); }));
  out.push_back(timed("gcn_layer", kLayerGradTolerance, [&] { return check_gcn_layer(seed + 2, o); }));
  out.push_back(timed("sage_lstm_step", kDeepGradTolerance, [&] { return check_sage_lstm_step(seed + 3, o); }));
  out.push_back(timed("gcn_lstm_step", kDeepGradTolerance, [&] { return check_gcn_lstm_step(seed + 4, o); }));
  out.push_back(timed("head_mlp", kDeepGradTolerance, [&] { return check_head(seed + 5, o); }));
  out.push_back(timed("psage_lstm", kDeepGradTolerance,
                      [&] { return check_model(seed + 6, CellKind::sage, std::nullopt, Aggregation::mean, o); }));
  out.push_back(timed("psage_lstm_sampled", kDeepGradTolerance,
                      [&] { return check_model(seed + 7, CellKind::sage, 3, Aggregation::weighted_mean, o); }));
  out.push_back(timed("gcn_lstm", kDeepGradTolerance,
                      [&] { return check_model(seed + 8, CellKind::gcn, std::nullopt, Aggregation::mean, o); }));
  return out;
}

}  // namespace psage
