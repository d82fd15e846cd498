// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <cstring>

#include "oracles.hpp"
#include "psage/synth.hpp"
#include "psage/training.hpp"

using namespace psage;

namespace {

ModelConfig tiny_config(CellKind cell = CellKind::sage) {
  ModelConfig c;
  c.cell = cell;
  c.hidden = 4;
  c.head = {4, 4};
  c.mask = FeatureMask::all();
  return c;
}

std::vector<TemporalSample> synth_samples(std::size_t n, std::uint64_t seed = 1) {
  SynthParams p;
  p.seed = seed;
  p.n_records = n;
  const auto out = synth_generate(p);
  return build_samples(out.records, &*out.mar, {FeatureMask::all()});
}

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

}  // namespace

// ---------------------------------------------------------------------------
// Schedule

TEST(Schedule, InitialRate) { EXPECT_EQ(lr_at(0), 0.01); }

TEST(Schedule, HalvesEverySeventyFiveEpochs) {
  EXPECT_EQ(lr_at(74), 0.01);
  EXPECT_EQ(lr_at(75), 0.005);
  EXPECT_EQ(lr_at(150), 0.0025);
  EXPECT_EQ(lr_at(449), 0.01 / 32);
}

TEST(Schedule, ExactPowerOfTwoFormula) {
  for (std::size_t e = 0; e < 3000; ++e) {
    const double want = 0.01 * std::pow(0.5, static_cast<double>(e / 75));
    EXPECT_EQ(lr_at(e), want) << e;
  }
}

TEST(Schedule, NonIncreasingPiecewiseConstant) {
  for (std::size_t e = 1; e < 2000; ++e) {
    EXPECT_LE(lr_at(e), lr_at(e - 1));
    if (e % 75 != 0) {
      EXPECT_EQ(lr_at(e), lr_at(e - 1));
    }
  }
  EXPECT_THROW(lr_at(3, 0.01, 0), Error);
}

// ---------------------------------------------------------------------------
// Adam

TEST(Adam, ZeroGradientNoDecayLeavesParametersAlone) {
  Parameter p("p", Matrix(2, 3, 0.7));
  AdamConfig cfg;
  cfg.weight_decay = 0.0;
  Adam adam({&p}, cfg);
  for (int k = 0; k < 10; ++k) adam.step(0.01);
  for (double v : p.value.values()) EXPECT_EQ(v, 0.7);
  EXPECT_EQ(adam.steps(), 10u);
}

TEST(Adam, ScalarQuadraticMatchesReferenceRun) {
  Parameter p("theta", Matrix(1, 1, 1.0));
  Adam adam({&p});
  // The same update written out with scalars.
  double theta = 1.0, m = 0.0, v = 0.0;
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8, wd = 1e-4, lr = 0.01;
  for (int t = 1; t <= 500; ++t) {
    p.grad(0, 0) = 2.0 * p.value(0, 0);
    adam.step(lr);
    const double g = 2.0 * theta + wd * theta;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mh = m / (1 - std::pow(b1, t)), vh = v / (1 - std::pow(b2, t));
    theta -= lr * mh / (std::sqrt(vh) + eps);
    ASSERT_NEAR(p.value(0, 0), theta, 1e-12) << t;
    EXPECT_EQ(p.grad(0, 0), 0.0);
  }
  EXPECT_LT(std::abs(theta), 0.1);
  EXPECT_LT(std::abs(p.value(0, 0)), 0.1);
}

TEST(Adam, DecoupledDecay) {
  Parameter p("p", Matrix(1, 1, 2.0));
  AdamConfig cfg;
  cfg.decoupled = true;
  cfg.weight_decay = 0.1;
  Adam adam({&p}, cfg);
  adam.step(0.5);  // zero gradient: only the decay acts
  EXPECT_DOUBLE_EQ(p.value(0, 0), 2.0 - 0.5 * 0.1 * 2.0);
}

TEST(Adam, MomentsKeepShapeAndSecondMomentIsNonnegative) {
  Rng rng(1);
  Parameter a("a", Matrix(3, 4)), b("b", Matrix(1, 4));
  Adam adam({&a, &b});
  for (int k = 0; k < 20; ++k) {
    for (double& g : a.grad.values()) g = rng.uniform(-1, 1);
    for (double& g : b.grad.values()) g = rng.uniform(-1, 1);
    adam.step(0.01);
  }
  EXPECT_TRUE(adam.first_moments()[0].same_shape(a.value));
  EXPECT_TRUE(adam.second_moments()[1].same_shape(b.value));
  for (const auto& v : adam.second_moments())
    for (double x : v.values()) EXPECT_GE(x, 0.0);
}

TEST(Adam, NonFiniteGradientAbortsWithoutTouchingParameters) {
  Parameter a("a", Matrix(1, 2, 1.0)), b("b", Matrix(1, 2, 1.0));
  Adam adam({&a, &b});
  a.grad(0, 0) = 0.5;
  b.grad(0, 1) = NAN;
  try {
    adam.step(0.01);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::numeric_failure);
  }
  EXPECT_EQ(a.value, Matrix(1, 2, 1.0));
  EXPECT_EQ(b.value, Matrix(1, 2, 1.0));
  EXPECT_EQ(adam.steps(), 0u);
}

TEST(Adam, IdenticalRunsAreBitIdentical) {
  auto run = [] {
    Rng rng(2);
    Parameter p("p", Matrix(4, 4));
    for (double& v : p.value.values()) v = rng.uniform(-1, 1);
    Adam adam({&p});
    for (int k = 0; k < 50; ++k) {
      for (std::size_t i = 0; i < p.size(); ++i) p.grad.data()[i] = std::sin(p.value.data()[i] * 3.0);
      adam.step(lr_at(static_cast<std::size_t>(k), 0.01, 10));
    }
    return p.value;
  };
  const Matrix a = run(), b = run();
  EXPECT_EQ(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)), 0);
}

// ---------------------------------------------------------------------------
// Training loop

TEST(Train, OneEpochOneSampleIsOneStep) {
  const auto samples = synth_samples(1);
  Model m(tiny_config(), 1);
  m.set_stats(compute_norm_stats(samples));
  const auto prep = m.prepare(samples);
  const auto before = m.snapshot();
  TrainConfig tc;
  tc.epochs = 1;
  const auto r = train(m, prep, {}, tc);
  EXPECT_EQ(r.optimizer_steps, 1u);
  ASSERT_EQ(r.history.size(), 1u);
  EXPECT_EQ(r.history[0].lr, 0.01);
  const auto after = m.snapshot();
  std::size_t changed = 0;
  for (std::size_t i = 0; i < before.size(); ++i) changed += before[i] != after[i];
  EXPECT_GT(changed, 0u);
}

TEST(Train, SameSeedSameHistoryBitExact) {
  const auto samples = synth_samples(5);
  auto run = [&] {
    Model m(tiny_config(), 3);
    m.set_stats(compute_norm_stats(samples));
    const auto prep = m.prepare(samples);
    TrainConfig tc;
    tc.epochs = 4;
    tc.seed = 9;
    const auto r = train(m, std::span(prep).subspan(0, 3), std::span(prep).subspan(3), tc);
    return std::make_pair(r, m.snapshot());
  };
  const auto [a, pa] = run();
  const auto [b, pb] = run();
  ASSERT_EQ(a.history.size(), b.history.size());
  for (std::size_t e = 0; e < a.history.size(); ++e) {
    EXPECT_TRUE(same_bits(a.history[e].train_loss, b.history[e].train_loss));
    EXPECT_TRUE(same_bits(a.history[e].val_rmse, b.history[e].val_rmse));
    EXPECT_TRUE(std::isfinite(a.history[e].train_loss));
  }
  EXPECT_EQ(pa, pb);
  EXPECT_EQ(a.best_epoch, b.best_epoch);
}

TEST(Train, SamplesAreNotModified) {
  const auto samples = synth_samples(3);
  Model m(tiny_config(), 3);
  m.set_stats(compute_norm_stats(samples));
  const auto prep = m.prepare(samples);
  const auto copy = prep;
  TrainConfig tc;
  tc.epochs = 2;
  train(m, prep, prep, tc);
  for (std::size_t i = 0; i < prep.size(); ++i) {
    EXPECT_EQ(prep[i].normalized_targets, copy[i].normalized_targets);
    EXPECT_EQ(prep[i].targets, copy[i].targets);
    for (std::size_t t = 0; t < prep[i].features.size(); ++t) EXPECT_EQ(prep[i].features[t], copy[i].features[t]);
  }
}

TEST(Train, BestValidationSnapshotIsRestored) {
  const auto samples = synth_samples(4);
  Model m(tiny_config(), 5);
  m.set_stats(compute_norm_stats(samples));
  const auto prep = m.prepare(samples);
  TrainConfig tc;
  tc.epochs = 6;
  const auto r = train(m, std::span(prep).subspan(0, 3), std::span(prep).subspan(3), tc);
  ASSERT_TRUE(r.best_epoch.has_value());
  double best = INFINITY;
  for (const auto& e : r.history) best = std::min(best, e.val_rmse);
  EXPECT_EQ(r.best_val_rmse, best);
  EXPECT_EQ(evaluate_rmse(m, std::span(prep).subspan(3)).rmse, best);
}

TEST(Train, NumericFailureRestoresLastCompletedEpoch) {
  const auto samples = synth_samples(2);
  Model m(tiny_config(), 5);
  NormStats s = compute_norm_stats(samples);
  m.set_stats(s);
  auto prep = m.prepare(samples);
  prep[1].normalized_targets(0, 0) = INFINITY;  // gradient becomes non-finite on this sample
  const auto before = m.snapshot();
  TrainConfig tc;
  tc.epochs = 3;
  tc.shuffle = false;
  try {
    train(m, prep, {}, tc);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::numeric_failure);
  }
  for (const auto& v : m.snapshot()) EXPECT_TRUE(v.all_finite());
  EXPECT_EQ(m.snapshot(), before);  // the failure came in epoch 0
}

TEST(Train, ConfigValidation) {
  TrainConfig tc;
  EXPECT_EQ(tc.epochs_for(CellKind::sage), 450u);
  EXPECT_EQ(tc.epochs_for(CellKind::gcn), 300u);
  EXPECT_EQ(tc.lr0, 0.01);
  EXPECT_EQ(tc.lr_period, 75u);
  EXPECT_EQ(tc.adam.weight_decay, 1e-4);
  tc.epochs = 0;
  EXPECT_THROW(tc.validate(), Error);
  tc = {};
  tc.lr_period = 0;
  EXPECT_THROW(tc.validate(), Error);
}

TEST(Train, EmptyTrainingSetRejected) {
  Model m(tiny_config(), 5);
  m.set_stats(NormStats::identity());
  EXPECT_THROW(train(m, {}, {}, {}), Error);
}

// ---------------------------------------------------------------------------
// Evaluation

TEST(Evaluate, PerfectPredictionsScoreZero) {
  const auto samples = synth_samples(3);
  Model m(tiny_config(), 2);
  m.set_stats(compute_norm_stats(samples));
  auto prep = m.prepare(samples);
  for (auto& p : prep) p.targets = m.predict_denormalized(p);
  const auto r = evaluate_rmse(m, prep);
  EXPECT_EQ(r.rmse, 0.0);
  for (double v : r.per_year) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(r.count, 3 * kTraceCount * kTargetYears);
}

TEST(Evaluate, ConstantErrorOfTwoPixels) {
  const auto samples = synth_samples(2);
  Model m(tiny_config(), 2);
  m.set_stats(compute_norm_stats(samples));
  auto prep = m.prepare(samples);
  for (auto& p : prep) {
    p.targets = m.predict_denormalized(p);
    for (double& v : p.targets.values()) v += 2.0;
  }
  const auto r = evaluate_rmse(m, prep);
  EXPECT_NEAR(r.rmse, 2.0, 1e-12);
  ASSERT_EQ(r.per_year.size(), kTargetYears);
  for (double v : r.per_year) EXPECT_NEAR(v, 2.0, 1e-12);
}

TEST(Evaluate, MatchesScalarOracle) {
  const auto samples = synth_samples(4);
  Model m(tiny_config(), 2);
  m.set_stats(compute_norm_stats(samples));
  const auto prep = m.prepare(samples);
  std::vector<oracle::Mat> preds, targets;
  for (const auto& p : prep) {
    preds.push_back(oracle::to_mat(m.predict_denormalized(p)));
    targets.push_back(oracle::to_mat(p.targets));
  }
  const double want = oracle::rmse(preds, targets);
  EXPECT_LT(std::abs(evaluate_rmse(m, prep).rmse - want) / want, 1e-12);
}

TEST(Evaluate, EmptySetRejected) {
  Model m(tiny_config(), 2);
  EXPECT_THROW(evaluate_rmse(m, {}), Error);
}

// ---------------------------------------------------------------------------
// Trials and reports

TEST(Report, MeanStdFormat) {
  EXPECT_EQ(format_mean_std(2.8526, 0.0748), "2.8526 \xC2\xB1 0.0748");
  EXPECT_EQ(format_mean_std(3.18716, 0.05114), "3.1872 \xC2\xB1 0.0511");
}

TEST(Report, MeanAndSampleStd) {
  TrialReport r;
  for (double v : {1.0, 2.0, 3.0, 4.0, 5.0}) {
    TrialOutcome t;
    t.test_rmse = v;
    r.trials.push_back(t);
  }
  TrialOutcome failed;
  failed.failed = true;
  r.trials.push_back(failed);
  summarize(r);
  EXPECT_DOUBLE_EQ(r.mean, 3.0);
  EXPECT_DOUBLE_EQ(r.std, std::sqrt(2.5));
  EXPECT_TRUE(r.std_defined);
}

TEST(Report, SingleTrialStdIsFlagged) {
  TrialReport r;
  TrialOutcome t;
  t.test_rmse = 1.25;
  r.trials.push_back(t);
  summarize(r);
  EXPECT_EQ(r.mean, 1.25);
  EXPECT_EQ(r.std, 0.0);
  EXPECT_FALSE(r.std_defined);
}

TEST(Report, JsonRoundTrip) {
  TrialReport r;
  r.label = "PSAGE-LSTM";
  r.config = {{"hidden", 4}};
  for (double v : {2.5, 2.75}) {
    TrialOutcome t;
    t.test_rmse = v;
    t.per_year.assign(kTargetYears, v);
    t.history.push_back({0, 0.01, 0.5, v});
    r.trials.push_back(t);
  }
  summarize(r);
  const auto back = trial_report_from_json(to_json(r));
  EXPECT_EQ(back.label, r.label);
  EXPECT_EQ(back.mean, r.mean);
  EXPECT_EQ(back.std, r.std);
  EXPECT_EQ(back.std_defined, r.std_defined);
  ASSERT_EQ(back.trials.size(), 2u);
  EXPECT_EQ(back.trials[1].test_rmse, 2.75);
  EXPECT_EQ(to_json(back).dump(), to_json(r).dump());
}

TEST(Report, ComparisonTableRows) {
  TrialReport a, b;
  a.label = "PSAGE-LSTM";
  b.label = "GCN-LSTM";
  for (double v : {1.0, 1.5}) {
    TrialOutcome t;
    t.test_rmse = v;
    a.trials.push_back(t);
    t.test_rmse = v + 1;
    b.trials.push_back(t);
  }
  summarize(a);
  summarize(b);
  const auto t = comparison_table({a, b});
  std::size_t lines = 0;
  for (char c : t.csv) lines += c == '\n';
  EXPECT_EQ(lines, 3u);
  EXPECT_NE(t.text.find("PSAGE-LSTM  1.2500 \xC2\xB1 0.3536"), std::string::npos);
  EXPECT_NE(t.text.find("GCN-LSTM    2.2500 \xC2\xB1 0.3536"), std::string::npos);
  EXPECT_EQ(t.csv.substr(0, t.csv.find('\n')), "model,mean_rmse,std_rmse,std_defined,trials,failed");
}

TEST(Trials, SingleTrialAndSplitSeeds) {
  const auto samples = synth_samples(10);
  TrialSettings s;
  s.model = tiny_config();
  s.train.epochs = 2;
  s.train.seed = 40;
  s.n_trials = 1;
  const auto r = run_trials(samples, s);
  ASSERT_EQ(r.trials.size(), 1u);
  EXPECT_FALSE(r.trials[0].failed) << r.trials[0].error;
  EXPECT_EQ(r.trials[0].split_seed, 40u);
  EXPECT_EQ(r.trials[0].train_size, 6u);
  EXPECT_EQ(r.trials[0].val_size, 2u);
  EXPECT_EQ(r.trials[0].test_size, 2u);
  EXPECT_EQ(r.mean, r.trials[0].test_rmse);
  EXPECT_FALSE(r.std_defined);
  EXPECT_EQ(r.trials[0].per_year.size(), kTargetYears);
  EXPECT_FALSE(r.wall_time_s.has_value());
}

TEST(Trials, IdenticalTrialsHaveZeroStd) {
  const auto samples = synth_samples(6);
  TrialSettings s;
  s.model = tiny_config();
  s.train.epochs = 2;
  s.train.seed = 8;
  s.n_trials = 1;
  TrialReport r;
  for (int k = 0; k < 5; ++k) r.trials.push_back(run_trials(samples, s).trials[0]);
  summarize(r);
  EXPECT_FALSE(r.trials[0].failed) << r.trials[0].error;
  for (const auto& t : r.trials) EXPECT_EQ(t.test_rmse, r.trials[0].test_rmse);
  // The mean of five equal values is off by at most an ulp or two.
  EXPECT_LE(r.std, 1e-14);
  EXPECT_TRUE(r.std_defined);
  EXPECT_DOUBLE_EQ(r.mean, r.trials[0].test_rmse);
}

TEST(Trials, ThreadedRunMatchesSequential) {
  const auto samples = synth_samples(6);
  TrialSettings s;
  s.model = tiny_config(CellKind::gcn);
  s.train.epochs = 2;
  s.n_trials = 3;
  const auto seq = run_trials(samples, s);
  s.threads = 3;
  const auto par = run_trials(samples, s);
  EXPECT_EQ(to_json(seq).dump(), to_json(par).dump());
}

TEST(Trials, FailuresAreRecordedPerTrial) {
  const auto samples = synth_samples(4);  // too few to split
  TrialSettings s;
  s.model = tiny_config();
  s.train.epochs = 1;
  s.n_trials = 2;
  const auto r = run_trials(samples, s);
  for (const auto& t : r.trials) {
    EXPECT_TRUE(t.failed);
    EXPECT_FALSE(t.error.empty());
  }
  EXPECT_TRUE(std::isnan(r.mean));
}
