// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "psage/error.hpp"
#include "psage/matrix.hpp"
#include "psage/ops.hpp"
#include "psage/rng.hpp"

namespace psage {

enum class Aggregation { mean, weighted_mean };

inline std::string_view to_string(Aggregation a) noexcept { return a == Aggregation::mean ? "mean" : "weighted"; }

inline Aggregation parse_aggregation(std::string_view s) {
  if (s == "mean") return Aggregation::mean;
  if (s == "weighted" || s == "weighted_mean") return Aggregation::weighted_mean;
  fail(ErrorKind::config, "unknown aggregation '" + std::string(s) + "' (expected mean or weighted)");
}

/// Chooses N(i) for GraphSAGE: every other node (`fanout` empty) or a uniform
/// sample of `fanout` others drawn without replacement. Self is never a
/// neighbour; the root path carries x_i.
class NeighborSampler {
 public:
  NeighborSampler() = default;
  explicit NeighborSampler(std::optional<std::size_t> fanout) : fanout_(fanout) {
    require(!fanout || *fanout >= 1, ErrorKind::invalid_input, "neighbour fanout must be at least 1");
  }

  const std::optional<std::size_t>& fanout() const noexcept { return fanout_; }
  bool deterministic() const noexcept { return !fanout_; }

  /// `weights` is only consulted for weighted aggregation.
  MeanAggregator make(std::size_t n, const Matrix* weights, Aggregation agg, Rng& rng) const {
    const Matrix* w = agg == Aggregation::weighted_mean ? weights : nullptr;
    require(agg == Aggregation::mean || w, ErrorKind::invalid_input, "weighted aggregation needs edge weights");
    if (!fanout_ || *fanout_ >= n - 1) {
      if (!w) return MeanAggregator::complete(n);
      return MeanAggregator::complete_weighted(*w);
    }
    NeighborLists lists(n);
    std::vector<std::size_t> pool(n - 1);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0, k = 0; j < n; ++j)
        if (j != i) pool[k++] = j;
      for (std::size_t s = 0; s < *fanout_; ++s) std::swap(pool[s], pool[s + rng.below(pool.size() - s)]);
      lists[i].assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(*fanout_));
    }
    return MeanAggregator::from_lists(lists, w);
  }

 private:
  std::optional<std::size_t> fanout_;
};

/// D^-1/2 (A + I) D^-1/2 with A the off-diagonal edge weights and D the row
/// sums of A + I.
inline Matrix gcn_propagator(const Matrix& edge_weights) {
  const std::size_t n = edge_weights.rows();
  require(edge_weights.cols() == n, ErrorKind::shape, "edge weights must be square");
  Matrix a(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double w = i == j ? 1.0 : edge_weights(i, j);
      require(std::isfinite(w) && w >= 0.0, ErrorKind::invalid_graph, "edge weights must be finite and >= 0");
      a(i, j) = w;
    }
  std::vector<double> inv_sqrt(n);
  for (std::size_t i = 0; i < n; ++i) {
    double d = 0.0;
    for (std::size_t j = 0; j < n; ++j) d += a(i, j);
    inv_sqrt[i] = 1.0 / std::sqrt(d);
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) a(i, j) *= inv_sqrt[i] * inv_sqrt[j];
  return a;
}

// ---------------------------------------------------------------------------
// Single layers.

/// x'_i = W1 x_i + W2 mean_{j in N(i)} x_j (+ b). Rows of X are nodes, so the
/// products are written X W1 + M W2 with W of shape F_in x F_out.
struct SageLayerParams {
  Parameter root;
  Parameter neighbor;
  std::optional<Parameter> bias;

  static SageLayerParams init(const std::string& name, std::size_t in, std::size_t out, bool with_bias, Rng& rng) {
    SageLayerParams p;
    p.root = Parameter(name + ".root", uniform_fan_in(in, out, rng));
    p.neighbor = Parameter(name + ".neighbor", uniform_fan_in(in, out, rng));
    if (with_bias) p.bias = Parameter(name + ".bias", Matrix(1, out));
    return p;
  }

  std::size_t in_features() const noexcept { return root.value.rows(); }
  std::size_t out_features() const noexcept { return root.value.cols(); }

  void collect(std::vector<Parameter*>& out) {
    out.push_back(&root);
    out.push_back(&neighbor);
    if (bias) out.push_back(&*bias);
  }
};

struct GcnLayerParams {
  Parameter weight;
  std::optional<Parameter> bias;

  static GcnLayerParams init(const std::string& name, std::size_t in, std::size_t out, bool with_bias, Rng& rng) {
    GcnLayerParams p;
    p.weight = Parameter(name + ".weight", uniform_fan_in(in, out, rng));
    if (with_bias) p.bias = Parameter(name + ".bias", Matrix(1, out));
    return p;
  }

  std::size_t in_features() const noexcept { return weight.value.rows(); }
  std::size_t out_features() const noexcept { return weight.value.cols(); }

  void collect(std::vector<Parameter*>& out) {
    out.push_back(&weight);
    if (bias) out.push_back(&*bias);
  }
};

/// Graph-operator policies used by the layers and the generic LSTM cell.
/// Each precomputes a per-input "context" (the neighbour mean for SAGE, the
/// propagated features for GCN) that every gate then reuses.
struct SageOp {
  using Params = SageLayerParams;
  using Operator = MeanAggregator;

  static Matrix context(const Operator& agg, const Matrix& x) { return agg.forward(x); }

  static void project(const Params& p, const Matrix& x, const Matrix& ctx, Matrix& z) {
    add_matmul(z, x, p.root.value);
    add_matmul(z, ctx, p.neighbor.value);
    if (p.bias) add_row_broadcast(z, p.bias->value);
  }

  static void project_backward(Params& p, const Matrix& x, const Matrix& ctx, const Matrix& dz, Matrix& dx,
                               Matrix& dctx) {
    add_matmul_tn(p.root.grad, x, dz);
    add_matmul_tn(p.neighbor.grad, ctx, dz);
    if (p.bias) add_column_sums(p.bias->grad, dz);
    add_matmul_nt(dx, dz, p.root.value);
    add_matmul_nt(dctx, dz, p.neighbor.value);
  }

  static void context_backward(const Operator& agg, const Matrix& dctx, Matrix& dx) { agg.backward(dctx, dx); }

  static Params init(const std::string& name, std::size_t in, std::size_t out, bool bias, Rng& rng) {
    return Params::init(name, in, out, bias, rng);
  }
};

/// Symmetric-normalised propagator wrapper.
struct GcnPropagator {
  Matrix matrix;

  GcnPropagator() = default;
  explicit GcnPropagator(const Matrix& edge_weights) : matrix(gcn_propagator(edge_weights)) {}
  std::size_t nodes() const noexcept { return matrix.rows(); }
};

struct GcnOp {
  using Params = GcnLayerParams;
  using Operator = GcnPropagator;

  static Matrix context(const Operator& prop, const Matrix& x) {
    require(prop.matrix.rows() == x.rows(), ErrorKind::shape,
            "propagator over " + std::to_string(prop.nodes()) + " nodes given " + shape_string(x));
    return matmul(prop.matrix, x);
  }

  static void project(const Params& p, const Matrix& /*x*/, const Matrix& ctx, Matrix& z) {
    add_matmul(z, ctx, p.weight.value);
    if (p.bias) add_row_broadcast(z, p.bias->value);
  }

  static void project_backward(Params& p, const Matrix& /*x*/, const Matrix& ctx, const Matrix& dz, Matrix& /*dx*/,
                               Matrix& dctx) {
    add_matmul_tn(p.weight.grad, ctx, dz);
    if (p.bias) add_column_sums(p.bias->grad, dz);
    add_matmul_nt(dctx, dz, p.weight.value);
  }

  static void context_backward(const Operator& prop, const Matrix& dctx, Matrix& dx) {
    add_matmul_tn(dx, prop.matrix, dctx);
  }

  static Params init(const std::string& name, std::size_t in, std::size_t out, bool bias, Rng& rng) {
    return Params::init(name, in, out, bias, rng);
  }
};

template <class Op>
struct GraphLayerCache {
  Matrix input;
  Matrix context;
};

template <class Op>
Matrix graph_layer_forward(const typename Op::Params& p, const Matrix& x, const typename Op::Operator& op,
                           GraphLayerCache<Op>* cache = nullptr) {
  require(x.cols() == p.in_features(), ErrorKind::shape,
          "layer expects " + std::to_string(p.in_features()) + " input features, got " + shape_string(x));
  Matrix ctx = Op::context(op, x);
  Matrix z(x.rows(), p.out_features());
  Op::project(p, x, ctx, z);
  if (cache) {
    cache->input = x;
    cache->context = std::move(ctx);
  }
  return z;
}

/// Accumulates parameter grads; returns d x.
template <class Op>
Matrix graph_layer_backward(typename Op::Params& p, const GraphLayerCache<Op>& cache,
                            const typename Op::Operator& op, const Matrix& d_out) {
  Matrix dx(cache.input.rows(), cache.input.cols());
  Matrix dctx(cache.context.rows(), cache.context.cols());
  Op::project_backward(p, cache.input, cache.context, d_out, dx, dctx);
  Op::context_backward(op, dctx, dx);
  return dx;
}

inline Matrix sage_forward(const SageLayerParams& p, const Matrix& x, const MeanAggregator& agg,
                           GraphLayerCache<SageOp>* cache = nullptr) {
  return graph_layer_forward<SageOp>(p, x, agg, cache);
}

inline Matrix gcn_forward(const GcnLayerParams& p, const Matrix& x, const GcnPropagator& prop,
                          GraphLayerCache<GcnOp>* cache = nullptr) {
  return graph_layer_forward<GcnOp>(p, x, prop, cache);
}

// ---------------------------------------------------------------------------
// Recurrent cells.

enum Gate : std::size_t { kInputGate = 0, kForgetGate, kCellGate, kOutputGate };
inline constexpr std::array<std::string_view, 4> kGateNames = {"i", "f", "c", "o"};

/// LSTM cell whose weight-vector products are graph layers:
///   z_g = L_xg(x_t) + L_hg(h_{t-1}) + b_g
///   i, f, o = sigmoid(z), g = tanh(z_c)
///   c_t = f * c_{t-1} + i * g,  h_t = o * tanh(c_t)
/// No peephole terms. The graph layers themselves carry no bias; b_g plays
/// that role when `gate_bias` is on.
template <class Op>
class GraphLstmCell {
 public:
  using Params = typename Op::Params;
  using Operator = typename Op::Operator;

  struct StepCache {
    Matrix x, h_prev, c_prev;
    Matrix x_ctx, h_ctx;
    std::array<Matrix, 4> gate;  // post-activation
    Matrix c, tanh_c;
    const Operator* op = nullptr;
  };

  struct State {
    Matrix h, c;
  };

  GraphLstmCell() = default;

  GraphLstmCell(const std::string& name, std::size_t in, std::size_t hidden, bool gate_bias, Rng& rng)
      : hidden_(hidden) {
    require(in >= 1 && hidden >= 1, ErrorKind::invalid_input, "cell dimensions must be positive");
    for (std::size_t g = 0; g < 4; ++g) {
      const std::string gname(kGateNames[g]);
      input_path_[g] = Op::init(name + ".x." + gname, in, hidden, false, rng);
      hidden_path_[g] = Op::init(name + ".h." + gname, hidden, hidden, false, rng);
      if (gate_bias) bias_[g] = Parameter(name + ".bias." + gname, Matrix(1, hidden));
    }
  }

  std::size_t hidden() const noexcept { return hidden_; }
  std::size_t in_features() const noexcept { return input_path_[0].in_features(); }

  std::array<Params, 4>& input_path() noexcept { return input_path_; }
  std::array<Params, 4>& hidden_path() noexcept { return hidden_path_; }
  std::array<std::optional<Parameter>, 4>& biases() noexcept { return bias_; }

  void collect(std::vector<Parameter*>& out) {
    for (std::size_t g = 0; g < 4; ++g) {
      input_path_[g].collect(out);
      hidden_path_[g].collect(out);
      if (bias_[g]) out.push_back(&*bias_[g]);
    }
  }

  State step(const Matrix& x, const Matrix& h_prev, const Matrix& c_prev, const Operator& op,
             StepCache* cache = nullptr) const {
    const std::size_t n = x.rows();
    require(x.cols() == in_features(), ErrorKind::shape,
            "cell expects " + std::to_string(in_features()) + " input features, got " + shape_string(x));
    require(h_prev.rows() == n && h_prev.cols() == hidden_ && c_prev.same_shape(h_prev), ErrorKind::shape,
            "hidden/cell state must be " + std::to_string(n) + "x" + std::to_string(hidden_));
    Matrix x_ctx = Op::context(op, x);
    Matrix h_ctx = Op::context(op, h_prev);
    std::array<Matrix, 4> gate;
    for (std::size_t g = 0; g < 4; ++g) {
      Matrix z(n, hidden_);
      Op::project(input_path_[g], x, x_ctx, z);
      Op::project(hidden_path_[g], h_prev, h_ctx, z);
      if (bias_[g]) add_row_broadcast(z, bias_[g]->value);
      gate[g] = g == kCellGate ? psage::tanh(z) : psage::sigmoid(z);
    }
    State s{Matrix(n, hidden_), Matrix(n, hidden_)};
    Matrix tanh_c(n, hidden_);
    for (std::size_t k = 0; k < s.c.size(); ++k) {
      s.c.data()[k] = gate[kForgetGate].data()[k] * c_prev.data()[k] +
                      gate[kInputGate].data()[k] * gate[kCellGate].data()[k];
      tanh_c.data()[k] = std::tanh(s.c.data()[k]);
      s.h.data()[k] = gate[kOutputGate].data()[k] * tanh_c.data()[k];
    }
    if (cache) {
      cache->x = x;
      cache->h_prev = h_prev;
      cache->c_prev = c_prev;
      cache->x_ctx = std::move(x_ctx);
      cache->h_ctx = std::move(h_ctx);
      cache->gate = std::move(gate);
      cache->c = s.c;
      cache->tanh_c = std::move(tanh_c);
      cache->op = &op;
    }
    return s;
  }

  struct StepGrads {
    Matrix d_x, d_h_prev, d_c_prev;
  };

  /// Given dL/dh_t and dL/dc_t, accumulates parameter grads and returns the
  /// cotangents of the step's inputs.
  StepGrads backward(const StepCache& c, const Matrix& d_h, const Matrix& d_c_in) {
    const std::size_t n = c.x.rows();
    std::array<Matrix, 4> dz;
    for (auto& m : dz) m = Matrix(n, hidden_);
    StepGrads out{Matrix(n, c.x.cols()), Matrix(n, hidden_), Matrix(n, hidden_)};
    for (std::size_t k = 0; k < c.c.size(); ++k) {
      const double i = c.gate[kInputGate].data()[k], f = c.gate[kForgetGate].data()[k];
      const double g = c.gate[kCellGate].data()[k], o = c.gate[kOutputGate].data()[k];
      const double tc = c.tanh_c.data()[k];
      const double dh = d_h.data()[k];
      const double dc = d_c_in.data()[k] + dh * o * tanh_grad_from_output(tc);
      dz[kOutputGate].data()[k] = dh * tc * sigmoid_grad_from_output(o);
      dz[kInputGate].data()[k] = dc * g * sigmoid_grad_from_output(i);
      dz[kForgetGate].data()[k] = dc * c.c_prev.data()[k] * sigmoid_grad_from_output(f);
      dz[kCellGate].data()[k] = dc * i * tanh_grad_from_output(g);
      out.d_c_prev.data()[k] = dc * f;
    }
    Matrix dx_ctx(c.x_ctx.rows(), c.x_ctx.cols());
    Matrix dh_ctx(c.h_ctx.rows(), c.h_ctx.cols());
    for (std::size_t g = 0; g < 4; ++g) {
      Op::project_backward(input_path_[g], c.x, c.x_ctx, dz[g], out.d_x, dx_ctx);
      Op::project_backward(hidden_path_[g], c.h_prev, c.h_ctx, dz[g], out.d_h_prev, dh_ctx);
      if (bias_[g]) add_column_sums(bias_[g]->grad, dz[g]);
    }
    Op::context_backward(*c.op, dx_ctx, out.d_x);
    Op::context_backward(*c.op, dh_ctx, out.d_h_prev);
    return out;
  }

  std::size_t parameter_count() {
    std::vector<Parameter*> ps;
    collect(ps);
    std::size_t total = 0;
    for (auto* p : ps) total += p->size();
    return total;
  }

 private:
  std::size_t hidden_ = 0;
  std::array<Params, 4> input_path_;
  std::array<Params, 4> hidden_path_;
  std::array<std::optional<Parameter>, 4> bias_;
};

using SageLstmCell = GraphLstmCell<SageOp>;
using GcnLstmCell = GraphLstmCell<GcnOp>;

template <class Op>
struct StepInput {
  const Matrix* features = nullptr;
  const typename Op::Operator* op = nullptr;
};

template <class Op>
struct UnrollCache {
  std::vector<typename GraphLstmCell<Op>::StepCache> steps;
};

/// h_0 = c_0 = 0; steps run in the given (chronological) order; returns h_T.
template <class Op>
Matrix unroll(const GraphLstmCell<Op>& cell, std::span<const StepInput<Op>> sequence,
              UnrollCache<Op>* cache = nullptr) {
  require(!sequence.empty(), ErrorKind::invalid_input, "unroll needs at least one graph");
  const std::size_t n = sequence.front().features->rows();
  Matrix h(n, cell.hidden()), c(n, cell.hidden());
  if (cache) cache->steps.assign(sequence.size(), {});
  for (std::size_t t = 0; t < sequence.size(); ++t) {
    require(sequence[t].features->rows() == n, ErrorKind::shape, "all graphs in a sequence need the same node count");
    auto s = cell.step(*sequence[t].features, h, c, *sequence[t].op, cache ? &cache->steps[t] : nullptr);
    h = std::move(s.h);
    c = std::move(s.c);
  }
  return h;
}

/// Back-propagates dL/dh_T through time. Returns dL/dx_t per step.
template <class Op>
std::vector<Matrix> unroll_backward(GraphLstmCell<Op>& cell, const UnrollCache<Op>& cache, const Matrix& d_h_last) {
  std::vector<Matrix> d_inputs(cache.steps.size());
  Matrix d_h = d_h_last;
  Matrix d_c(d_h.rows(), d_h.cols());
  for (std::size_t t = cache.steps.size(); t-- > 0;) {
    auto g = cell.backward(cache.steps[t], d_h, d_c);
    d_inputs[t] = std::move(g.d_x);
    d_h = std::move(g.d_h_prev);
    d_c = std::move(g.d_c_prev);
  }
  return d_inputs;
}

}  // namespace psage
