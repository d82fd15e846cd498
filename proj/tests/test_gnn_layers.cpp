// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <memory>

#include "oracles.hpp"
#include "psage/geo_graph.hpp"
#include "psage/gnn_layers.hpp"
#include "psage/gradient_suite.hpp"

using namespace psage;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  Matrix m(r, c);
  for (double& v : m.values()) v = rng.uniform(-scale, scale);
  return m;
}

Matrix random_edges(std::size_t n, Rng& rng) {
  std::vector<double> lat(n), lon(n);
  for (std::size_t i = 0; i < n; ++i) lat[i] = rng.uniform(68, 74), lon[i] = rng.uniform(-48, -32);
  return build_edge_weights(lat, lon);
}

double max_abs(const Matrix& a, const oracle::Mat& b) {
  double worst = 0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) worst = std::max(worst, std::abs(a(i, j) - b[i][j]));
  return worst;
}

template <class Op>
void zero_parameters(GraphLstmCell<Op>& cell) {
  std::vector<Parameter*> ps;
  cell.collect(ps);
  for (auto* p : ps) p->value.set_zero();
}

}  // namespace

// ---------------------------------------------------------------------------
// GraphSAGE layer

TEST(SageLayer, IdentityConfiguration) {
  Rng rng(1);
  auto p = SageLayerParams::init("s", 3, 3, false, rng);
  p.root.value = Matrix::identity(3);
  p.neighbor.value.set_zero();
  const Matrix x = random_matrix(6, 3, rng);
  EXPECT_EQ(sage_forward(p, x, MeanAggregator::complete(6)), x);
}

TEST(SageLayer, TwoNodeHandEvaluation) {
  Rng rng(2);
  auto p = SageLayerParams::init("s", 1, 1, false, rng);
  p.root.value = {{2.0}};
  p.neighbor.value = {{1.0}};
  const Matrix want = {{5.0}, {7.0}};
  EXPECT_EQ(sage_forward(p, {{1.0}, {3.0}}, MeanAggregator::complete(2)), want);
}

TEST(SageLayer, ConstantRows) {
  Rng rng(3);
  auto p = SageLayerParams::init("s", 4, 2, false, rng);
  Matrix x(9, 4);
  const std::vector<double> xbar = {0.3, -1.0, 2.0, 0.5};
  for (std::size_t i = 0; i < 9; ++i)
    for (std::size_t c = 0; c < 4; ++c) x(i, c) = xbar[c];
  const Matrix y = sage_forward(p, x, MeanAggregator::complete(9));
  const Matrix w = p.root.value + p.neighbor.value;
  for (std::size_t i = 0; i < 9; ++i)
    for (std::size_t k = 0; k < 2; ++k) {
      double want = 0;
      for (std::size_t c = 0; c < 4; ++c) want += xbar[c] * w(c, k);
      EXPECT_NEAR(y(i, k), want, 1e-14);
    }
}

TEST(SageLayer, MatchesEquationWithOracleAggregation) {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 3 + rng.below(10);
    auto p = SageLayerParams::init("s", 4, 3, true, rng);
    for (double& v : p.bias->value.values()) v = rng.uniform(-1, 1);
    const Matrix x = random_matrix(n, 4, rng);
    const auto X = oracle::to_mat(x);
    const auto M = oracle::mean_aggregate(X, oracle::all_others(n), nullptr);
    const auto want = oracle::add_row(
        oracle::add(oracle::matmul(X, oracle::to_mat(p.root.value)), oracle::matmul(M, oracle::to_mat(p.neighbor.value))),
        oracle::to_mat(p.bias->value)[0]);
    EXPECT_LT(max_abs(sage_forward(p, x, MeanAggregator::complete(n)), want), 1e-12);
  }
}

TEST(SageLayer, SamplerDrawsWithoutReplacementAndExcludesSelf) {
  Rng rng(5);
  const std::size_t n = 20;
  const Matrix edges = random_edges(n, rng);
  const auto agg = NeighborSampler(5).make(n, &edges, Aggregation::mean, rng);
  const Matrix c = agg.coefficients();
  for (std::size_t i = 0; i < n; ++i) {
    EXPECT_EQ(c(i, i), 0.0);
    std::size_t nz = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (c(i, j) != 0.0) {
        ++nz;
        EXPECT_DOUBLE_EQ(c(i, j), 0.2);
      }
    EXPECT_EQ(nz, 5u);
  }
  EXPECT_THROW(NeighborSampler(0), Error);
}

TEST(SageLayer, FanoutAtLeastNeighbourCountMeansAll) {
  Rng rng(6);
  const Matrix edges = random_edges(6, rng);
  const Matrix x = random_matrix(6, 2, rng);
  EXPECT_EQ(NeighborSampler(5).make(6, &edges, Aggregation::mean, rng).forward(x),
            MeanAggregator::complete(6).forward(x));
}

TEST(SageLayer, WeightedAggregationUsesEdgeWeights) {
  Rng rng(7);
  const std::size_t n = 7;
  const Matrix edges = random_edges(n, rng);
  const Matrix x = random_matrix(n, 3, rng);
  const auto agg = NeighborSampler{}.make(n, &edges, Aggregation::weighted_mean, rng);
  const auto E = oracle::to_mat(edges);
  EXPECT_LT(max_abs(agg.forward(x), oracle::mean_aggregate(oracle::to_mat(x), oracle::all_others(n), &E)), 1e-12);
}

TEST(SageLayer, ShapeMismatch) {
  Rng rng(8);
  auto p = SageLayerParams::init("s", 4, 3, false, rng);
  EXPECT_THROW(sage_forward(p, Matrix(5, 3), MeanAggregator::complete(5)), Error);
}

// ---------------------------------------------------------------------------
// GCN layer

TEST(GcnLayer, SingleNodeIsPlainLinear) {
  Rng rng(9);
  auto p = GcnLayerParams::init("g", 3, 2, true, rng);
  p.bias->value = {{0.5, -0.25}};
  const Matrix x = random_matrix(1, 3, rng);
  const GcnPropagator prop(Matrix(1, 1, kDefaultWeightCap));
  Matrix want = matmul(x, p.weight.value);
  add_row_broadcast(want, p.bias->value);
  EXPECT_EQ(gcn_forward(p, x, prop), want);
}

TEST(GcnLayer, EqualWeightsConstantInputGiveEqualRows) {
  Rng rng(10);
  auto p = GcnLayerParams::init("g", 2, 3, false, rng);
  Matrix edges(6, 6, 0.7);
  Matrix x(6, 2);
  for (std::size_t i = 0; i < 6; ++i) x(i, 0) = 1.5, x(i, 1) = -0.5;
  const Matrix y = gcn_forward(p, x, GcnPropagator(edges));
  for (std::size_t i = 1; i < 6; ++i)
    for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(y(i, k), y(0, k), 1e-14);
}

TEST(GcnLayer, MatchesDenseNormalisationOracle) {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.below(12);
    Matrix edges(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i; j < n; ++j) edges(i, j) = edges(j, i) = rng.uniform(0.01, 5.0);
    const auto E = oracle::to_mat(edges);
    const auto norm = oracle::gcn_normalized(E);
    EXPECT_LT(max_abs(gcn_propagator(edges), norm), 1e-12);
    auto p = GcnLayerParams::init("g", 3, 2, false, rng);
    const Matrix x = random_matrix(n, 3, rng);
    const auto want = oracle::matmul(oracle::matmul(norm, oracle::to_mat(x)), oracle::to_mat(p.weight.value));
    EXPECT_LT(max_abs(gcn_forward(p, x, GcnPropagator(edges)), want), 1e-12);
  }
}

// ---------------------------------------------------------------------------
// Recurrent cells

template <class Op>
class LstmCellTest : public ::testing::Test {};
using CellOps = ::testing::Types<SageOp, GcnOp>;
TYPED_TEST_SUITE(LstmCellTest, CellOps);

template <class Op>
typename Op::Operator make_operator(std::size_t n, Rng& rng);
template <>
MeanAggregator make_operator<SageOp>(std::size_t n, Rng&) {
  return MeanAggregator::complete(n);
}
template <>
GcnPropagator make_operator<GcnOp>(std::size_t n, Rng& rng) {
  return GcnPropagator(random_edges(n, rng));
}

TYPED_TEST(LstmCellTest, ZeroParametersClosedForm) {
  Rng rng(12);
  GraphLstmCell<TypeParam> cell("c", 3, 4, true, rng);
  zero_parameters(cell);
  const auto op = make_operator<TypeParam>(6, rng);
  const Matrix x = random_matrix(6, 3, rng), h = random_matrix(6, 4, rng), c = random_matrix(6, 4, rng, 2.0);
  const auto s = cell.step(x, h, c, op);
  for (std::size_t k = 0; k < c.size(); ++k) {
    EXPECT_DOUBLE_EQ(s.c.data()[k], 0.5 * c.data()[k]);
    EXPECT_DOUBLE_EQ(s.h.data()[k], 0.5 * std::tanh(0.5 * c.data()[k]));
  }
  const auto z = cell.step(x, Matrix(6, 4), Matrix(6, 4), op);
  for (double v : z.h.values()) EXPECT_EQ(v, 0.0);
}

TYPED_TEST(LstmCellTest, GatesStayInRange) {
  Rng rng(13);
  GraphLstmCell<TypeParam> cell("c", 3, 5, true, rng);
  std::vector<Parameter*> ps;
  cell.collect(ps);
  for (auto* p : ps)
    for (double& v : p->value.values()) v = rng.uniform(-3, 3);
  const auto op = make_operator<TypeParam>(8, rng);
  typename GraphLstmCell<TypeParam>::StepCache cache;
  cell.step(random_matrix(8, 3, rng, 5.0), random_matrix(8, 5, rng), random_matrix(8, 5, rng, 3.0), op, &cache);
  for (std::size_t g = 0; g < 4; ++g)
    for (double v : cache.gate[g].values()) {
      if (g == kCellGate) EXPECT_TRUE(v > -1.0 && v < 1.0);
      else EXPECT_TRUE(v > 0.0 && v < 1.0);
    }
}

TYPED_TEST(LstmCellTest, MatchesScalarGateOracle) {
  Rng rng(14);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 4 + rng.below(5);
    GraphLstmCell<TypeParam> cell("c", 3, 4, true, rng);
    for (auto& b : cell.biases()) b->value = random_matrix(1, 4, rng);
    const auto op = make_operator<TypeParam>(n, rng);
    const Matrix x = random_matrix(n, 3, rng), h = random_matrix(n, 4, rng), c = random_matrix(n, 4, rng);
    // Pre-activations from single graph layers, assembled independently.
    std::array<oracle::Mat, 4> pre;
    for (std::size_t g = 0; g < 4; ++g) {
      Matrix zx, zh;
      if constexpr (std::is_same_v<TypeParam, SageOp>) {
        zx = sage_forward(cell.input_path()[g], x, op);
        zh = sage_forward(cell.hidden_path()[g], h, op);
      } else {
        zx = gcn_forward(cell.input_path()[g], x, op);
        zh = gcn_forward(cell.hidden_path()[g], h, op);
      }
      pre[g] = oracle::add_row(oracle::add(oracle::to_mat(zx), oracle::to_mat(zh)),
                               oracle::to_mat(cell.biases()[g]->value)[0]);
    }
    const auto want = oracle::lstm_from_preacts(pre, oracle::to_mat(c));
    const auto s = cell.step(x, h, c, op);
    EXPECT_LT(max_abs(s.h, want.h), 1e-12);
    EXPECT_LT(max_abs(s.c, want.c), 1e-12);
  }
}

TYPED_TEST(LstmCellTest, UnrollOfOneIsOneStep) {
  Rng rng(15);
  GraphLstmCell<TypeParam> cell("c", 3, 4, true, rng);
  const auto op = make_operator<TypeParam>(6, rng);
  const Matrix x = random_matrix(6, 3, rng);
  std::vector<StepInput<TypeParam>> seq = {{&x, &op}};
  EXPECT_EQ(unroll<TypeParam>(cell, seq), cell.step(x, Matrix(6, 4), Matrix(6, 4), op).h);
}

TYPED_TEST(LstmCellTest, ZeroParameterUnrollStaysAtZero) {
  Rng rng(16);
  GraphLstmCell<TypeParam> cell("c", 3, 4, true, rng);
  zero_parameters(cell);
  const auto op = make_operator<TypeParam>(6, rng);
  std::vector<Matrix> xs;
  for (int t = 0; t < 5; ++t) xs.push_back(random_matrix(6, 3, rng));
  std::vector<StepInput<TypeParam>> seq;
  for (const auto& x : xs) seq.push_back({&x, &op});
  // c_t = c_{t-1} / 2 from c_0 = 0, so every iterate is exactly zero.
  const Matrix h = unroll<TypeParam>(cell, seq);
  for (double v : h.values()) EXPECT_EQ(v, 0.0);
}

TYPED_TEST(LstmCellTest, UnrollIsPermutationEquivariant) {
  Rng rng(17);
  const std::size_t n = 10;
  GraphLstmCell<TypeParam> cell("c", 3, 4, true, rng);
  for (auto& b : cell.biases()) b->value = random_matrix(1, 4, rng);
  const Matrix edges = random_edges(n, rng);
  const auto perm = rng.permutation(n);
  const Matrix pedges = permute_symmetric(edges, perm);
  std::vector<Matrix> xs, pxs;
  for (int t = 0; t < 5; ++t) {
    xs.push_back(random_matrix(n, 3, rng));
    pxs.push_back(permute_rows(xs.back(), perm));
  }
  auto run = [&](const Matrix& e, const std::vector<Matrix>& feats) {
    typename TypeParam::Operator op;
    if constexpr (std::is_same_v<TypeParam, SageOp>) op = MeanAggregator::complete(n);
    else op = GcnPropagator(e);
    std::vector<StepInput<TypeParam>> seq;
    for (const auto& x : feats) seq.push_back({&x, &op});
    return unroll<TypeParam>(cell, seq);
  };
  EXPECT_LE(max_abs_diff(run(pedges, pxs), permute_rows(run(edges, xs), perm)), 1e-12);
}

TYPED_TEST(LstmCellTest, BackwardIsAdditive) {
  Rng rng(18);
  GraphLstmCell<TypeParam> cell("c", 3, 4, true, rng);
  const auto op = make_operator<TypeParam>(6, rng);
  typename GraphLstmCell<TypeParam>::StepCache cache;
  cell.step(random_matrix(6, 3, rng), random_matrix(6, 4, rng), random_matrix(6, 4, rng), op, &cache);
  const Matrix dh = random_matrix(6, 4, rng), dc = random_matrix(6, 4, rng);
  std::vector<Parameter*> ps;
  cell.collect(ps);
  cell.backward(cache, dh, dc);
  std::vector<Matrix> once;
  for (auto* p : ps) once.push_back(p->grad);
  cell.backward(cache, dh, dc);
  for (std::size_t i = 0; i < ps.size(); ++i) EXPECT_LE(max_abs_diff(ps[i]->grad, once[i] * 2.0), 1e-12) << ps[i]->name;
}

TEST(GcnLstmCell, SingleNodeIsAPlainLstm) {
  Rng rng(19);
  GcnLstmCell cell("c", 3, 4, true, rng);
  for (auto& b : cell.biases()) b->value = random_matrix(1, 4, rng);
  const GcnPropagator op(Matrix(1, 1, 1.0));
  const Matrix x = random_matrix(1, 3, rng), h = random_matrix(1, 4, rng), c = random_matrix(1, 4, rng);
  std::array<oracle::Mat, 4> pre;
  for (std::size_t g = 0; g < 4; ++g) {
    const auto zx = oracle::matmul(oracle::to_mat(x), oracle::to_mat(cell.input_path()[g].weight.value));
    const auto zh = oracle::matmul(oracle::to_mat(h), oracle::to_mat(cell.hidden_path()[g].weight.value));
    pre[g] = oracle::add_row(oracle::add(zx, zh), oracle::to_mat(cell.biases()[g]->value)[0]);
  }
  const auto want = oracle::lstm_from_preacts(pre, oracle::to_mat(c));
  const auto s = cell.step(x, h, c, op);
  EXPECT_LT(max_abs(s.h, want.h), 1e-12);
  EXPECT_LT(max_abs(s.c, want.c), 1e-12);
}

TEST(Cells, ParameterLayout) {
  Rng rng(20);
  SageLstmCell sage("c", 8, 16, true, rng);
  EXPECT_EQ(sage.parameter_count(), 4 * (2 * 8 * 16 + 2 * 16 * 16) + 4 * 16);
  GcnLstmCell gcn("c", 8, 16, false, rng);
  EXPECT_EQ(gcn.parameter_count(), 4 * (8 * 16 + 16 * 16));
}

TEST(Cells, EmptySequenceRejected) {
  Rng rng(21);
  SageLstmCell cell("c", 3, 4, true, rng);
  std::vector<StepInput<SageOp>> seq;
  EXPECT_THROW(unroll<SageOp>(cell, seq), Error);
}

// ---------------------------------------------------------------------------
// Permutation equivariance of the single layers

TEST(Equivariance, SageAndGcnLayers) {
  Rng rng(22);
  const std::size_t n = 12;
  const Matrix edges = random_edges(n, rng);
  const auto perm = rng.permutation(n);
  const Matrix pedges = permute_symmetric(edges, perm);
  const Matrix x = random_matrix(n, 4, rng), px = permute_rows(x, perm);
  auto sage = SageLayerParams::init("s", 4, 3, true, rng);
  auto gcn = GcnLayerParams::init("g", 4, 3, true, rng);
  EXPECT_LE(max_abs_diff(sage_forward(sage, px, MeanAggregator::complete(n)),
                         permute_rows(sage_forward(sage, x, MeanAggregator::complete(n)), perm)),
            1e-12);
  EXPECT_LE(max_abs_diff(sage_forward(sage, px, MeanAggregator::complete_weighted(pedges)),
                         permute_rows(sage_forward(sage, x, MeanAggregator::complete_weighted(edges)), perm)),
            1e-12);
  EXPECT_LE(max_abs_diff(gcn_forward(gcn, px, GcnPropagator(pedges)),
                         permute_rows(gcn_forward(gcn, x, GcnPropagator(edges)), perm)),
            1e-12);
}

// ---------------------------------------------------------------------------
// Gradient checks on toy graphs

TEST(LayerGradients, SingleLayersWithinOneInAMillion) {
  GradSuiteOptions o;
  using namespace gradsuite_detail;
  EXPECT_LE(check_sage_layer(0, Aggregation::mean, o).max_rel_error, kLayerGradTolerance);
  EXPECT_LE(check_sage_layer(1, Aggregation::weighted_mean, o).max_rel_error, kLayerGradTolerance);
  EXPECT_LE(check_gcn_layer(2, o).max_rel_error, kLayerGradTolerance);
}

TEST(LayerGradients, CellStepsAndHead) {
  GradSuiteOptions o;
  using namespace gradsuite_detail;
  EXPECT_LE(check_sage_lstm_step(3, o).max_rel_error, kDeepGradTolerance);
  EXPECT_LE(check_gcn_lstm_step(4, o).max_rel_error, kDeepGradTolerance);
  EXPECT_LE(check_head(5, o).max_rel_error, kDeepGradTolerance);
}
