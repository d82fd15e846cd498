// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "psage/dataset.hpp"
#include "psage/error.hpp"
#include "psage/matrix.hpp"
#include "psage/model.hpp"
#include "psage/ops.hpp"
#include "psage/rng.hpp"

namespace psage {

/// lr0 * 0.5^floor(epoch / period). Halving is exact in binary floating point.
inline double lr_at(std::size_t epoch, double lr0 = 0.01, std::size_t period = 75) {
  require(period >= 1, ErrorKind::invalid_input, "schedule period must be at least 1");
  const auto halvings = epoch / period;
  if (halvings > 2000) return 0.0;
  return std::ldexp(lr0, -static_cast<int>(halvings));
}

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
  bool decoupled = false;  // false: g += wd * theta before the moments
};

class Adam {
 public:
  Adam(std::vector<Parameter*> params, AdamConfig config = {}) : params_(std::move(params)), config_(config) {
    for (Parameter* p : params_) {
      m_.emplace_back(p->value.rows(), p->value.cols());
      v_.emplace_back(p->value.rows(), p->value.cols());
    }
  }

  std::size_t steps() const noexcept { return t_; }
  const std::vector<Matrix>& first_moments() const noexcept { return m_; }
  const std::vector<Matrix>& second_moments() const noexcept { return v_; }

  /// One update at learning rate `lr`; grads are zeroed afterwards. A
  /// non-finite gradient aborts the step before anything is modified.
  void step(double lr) {
    for (Parameter* p : params_)
      require(p->grad.all_finite(), ErrorKind::numeric_failure, "non-finite gradient in '" + p->name + "'");
    ++t_;
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Parameter& p = *params_[k];
      double* theta = p.value.data();
      const double* grad = p.grad.data();
      double* m = m_[k].data();
      double* v = v_[k].data();
      for (std::size_t i = 0; i < p.size(); ++i) {
        double g = grad[i];
        if (!config_.decoupled) g += config_.weight_decay * theta[i];
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        const double m_hat = m[i] / c1;
        const double v_hat = v[i] / c2;
        if (config_.decoupled) theta[i] -= lr * config_.weight_decay * theta[i];
        theta[i] -= lr * m_hat / (std::sqrt(v_hat) + config_.eps);
      }
      p.zero_grad();
    }
  }

 private:
  std::vector<Parameter*> params_;
  AdamConfig config_;
  std::vector<Matrix> m_, v_;
  std::size_t t_ = 0;
};

inline std::size_t default_epochs(CellKind cell) { return cell == CellKind::sage ? 450 : 300; }

struct TrainConfig {
  std::optional<std::size_t> epochs;  // default by cell kind
  double lr0 = 0.01;
  std::size_t lr_period = 75;
  AdamConfig adam;
  std::uint64_t seed = 0;
  bool shuffle = true;

  std::size_t epochs_for(CellKind cell) const { return epochs.value_or(default_epochs(cell)); }

  void validate() const {
    require(!epochs || *epochs >= 1, ErrorKind::config, "epochs must be at least 1");
    require(lr_period >= 1, ErrorKind::config, "lr_period must be at least 1");
    require(lr0 > 0.0 && std::isfinite(lr0), ErrorKind::config, "learning rate must be positive");
    require(adam.weight_decay >= 0.0, ErrorKind::config, "weight decay must be >= 0");
  }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;  // mean normalised MSE over the epoch's steps
  double val_rmse = std::numeric_limits<double>::quiet_NaN();
};

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t optimizer_steps = 0;
  std::optional<std::size_t> best_epoch;  // epoch whose weights were kept
  double best_val_rmse = std::numeric_limits<double>::quiet_NaN();
};

struct RmseReport {
  double rmse = 0.0;
  std::vector<double> per_year;
  std::size_t count = 0;
};

/// RMSE in pixels over nodes x years x samples, plus one value per target year.
inline RmseReport evaluate_rmse(const Model& model, std::span<const PreparedSample> samples) {
  require(!samples.empty(), ErrorKind::invalid_input, "evaluation needs at least one sample");
  const std::size_t years = samples.front().targets.cols();
  std::vector<double> sq(years, 0.0);
  std::size_t rows = 0;
  for (const auto& s : samples) {
    const Matrix pred = model.predict_denormalized(s);
    require(pred.same_shape(s.targets), ErrorKind::shape, "prediction/target shape mismatch for " + s.id);
    for (std::size_t i = 0; i < pred.rows(); ++i)
      for (std::size_t c = 0; c < years; ++c) {
        const double d = pred(i, c) - s.targets(i, c);
        sq[c] += d * d;
      }
    rows += pred.rows();
  }
  RmseReport r;
  r.count = rows * years;
  double total = 0.0;
  for (std::size_t c = 0; c < years; ++c) {
    total += sq[c];
    r.per_year.push_back(std::sqrt(sq[c] / static_cast<double>(rows)));
  }
  r.rmse = std::sqrt(total / static_cast<double>(r.count));
  return r;
}

/// Mean normalised-space MSE in inference mode.
inline double evaluate_mse(const Model& model, std::span<const PreparedSample> samples) {
  require(!samples.empty(), ErrorKind::invalid_input, "evaluation needs at least one sample");
  double total = 0.0;
  Rng rng(0);
  for (const auto& s : samples) total += mse_loss(model.forward(s, false, rng), s.normalized_targets);
  return total / static_cast<double>(samples.size());
}

using EpochCallback = std::function<void(const EpochRecord&)>;

/// One temporal sample per optimizer step. With a validation set, the weights
/// of the best validation epoch are restored at the end. A numeric failure
/// restores the last completed epoch and rethrows.
inline TrainResult train(Model& model, std::span<const PreparedSample> train_set,
                         std::span<const PreparedSample> val_set, const TrainConfig& config,
                         const EpochCallback& on_epoch = {}) {
  config.validate();
  require(!train_set.empty(), ErrorKind::invalid_input, "training set is empty");
  const std::size_t epochs = config.epochs_for(model.config().cell);

  Rng root(config.seed);
  Rng order_rng = root.fork(11);
  Rng dropout_rng = root.fork(12);
  Adam adam(model.parameters(), config.adam);
  model.zero_grad();

  TrainResult result;
  std::vector<Matrix> last_good = model.snapshot();
  std::vector<Matrix> best;
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Model::ForwardCache cache;

  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    const double lr = lr_at(epoch, config.lr0, config.lr_period);
    if (config.shuffle) order_rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    try {
      for (std::size_t idx : order) {
        const PreparedSample& s = train_set[idx];
        const Matrix pred = model.forward(s, true, dropout_rng, &cache);
        const double loss = mse_loss(pred, s.normalized_targets);
        require(std::isfinite(loss), ErrorKind::numeric_failure,
                "non-finite training loss at epoch " + std::to_string(epoch));
        loss_sum += loss;
        model.backward(cache, mse_backward(pred, s.normalized_targets));
        adam.step(lr);
        ++result.optimizer_steps;
      }
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::numeric_failure) throw;
      model.restore(last_good);
      model.zero_grad();
      fail(ErrorKind::numeric_failure, std::string(e.what()) + " (epoch " + std::to_string(epoch) +
                                           "; weights restored to the last completed epoch)");
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = loss_sum / static_cast<double>(train_set.size());
    if (!val_set.empty()) {
      rec.val_rmse = evaluate_rmse(model, val_set).rmse;
      if (!result.best_epoch || rec.val_rmse < result.best_val_rmse) {
        result.best_epoch = epoch;
        result.best_val_rmse = rec.val_rmse;
        best = model.snapshot();
      }
    }
    last_good = model.snapshot();
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  if (!best.empty()) model.restore(best);
  return result;
}

// ---------------------------------------------------------------------------
// Reports and the repeated-trial protocol.

/// "2.8526 ± 0.0748"
inline std::string format_mean_std(double mean, double sd, int decimals = 4) {
  char buf[96];
  std::snprintf(buf, sizeof buf, "%.*f \xC2\xB1 %.*f", decimals, mean, decimals, sd);
  return buf;
}

struct TrialOutcome {
  std::size_t index = 0;
  std::uint64_t split_seed = 0;
  bool failed = false;
  std::string error;
  double test_rmse = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> per_year;
  std::optional<std::size_t> best_epoch;
  double best_val_rmse = std::numeric_limits<double>::quiet_NaN();
  std::size_t train_size = 0, val_size = 0, test_size = 0;
  std::vector<EpochRecord> history;
};

struct TrialReport {
  std::string label;
  nlohmann::json config;
  std::vector<TrialOutcome> trials;
  double mean = std::numeric_limits<double>::quiet_NaN();
  double std = 0.0;
  bool std_defined = false;
  std::optional<double> wall_time_s;

  std::string summary() const { return format_mean_std(mean, std); }
};

/// Mean and sample standard deviation over the trials that completed; with a
/// single completed trial the std is reported as 0 and flagged undefined.
inline void summarize(TrialReport& r) {
  std::vector<double> ok;
  for (const auto& t : r.trials)
    if (!t.failed) ok.push_back(t.test_rmse);
  r.std = 0.0;
  r.std_defined = ok.size() >= 2;
  if (ok.empty()) {
    r.mean = std::numeric_limits<double>::quiet_NaN();
    return;
  }
  double s = 0.0;
  for (double v : ok) s += v;
  r.mean = s / static_cast<double>(ok.size());
  if (r.std_defined) {
    double q = 0.0;
    for (double v : ok) q += (v - r.mean) * (v - r.mean);
    r.std = std::sqrt(q / static_cast<double>(ok.size() - 1));
  }
}

inline nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

inline double number_from(const nlohmann::json& j) {
  return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

inline nlohmann::json history_to_json(const std::vector<EpochRecord>& history) {
  auto a = nlohmann::json::array();
  for (const auto& e : history)
    a.push_back({{"epoch", e.epoch}, {"lr", e.lr}, {"train_loss", number_or_null(e.train_loss)},
                 {"val_rmse", number_or_null(e.val_rmse)}});
  return a;
}

inline nlohmann::json to_json(const TrialReport& r) {
  nlohmann::json j;
  j["label"] = r.label;
  j["config"] = r.config;
  auto trials = nlohmann::json::array();
  for (const auto& t : r.trials) {
    nlohmann::json tj;
    tj["trial"] = t.index;
    tj["split_seed"] = t.split_seed;
    tj["failed"] = t.failed;
    if (t.failed) tj["error"] = t.error;
    tj["test_rmse"] = number_or_null(t.test_rmse);
    auto py = nlohmann::json::array();
    for (double v : t.per_year) py.push_back(number_or_null(v));
    tj["per_year_rmse"] = std::move(py);
    tj["best_epoch"] = t.best_epoch ? nlohmann::json(*t.best_epoch) : nlohmann::json(nullptr);
    tj["best_val_rmse"] = number_or_null(t.best_val_rmse);
    tj["sizes"] = {{"train", t.train_size}, {"val", t.val_size}, {"test", t.test_size}};
    tj["history"] = history_to_json(t.history);
    trials.push_back(std::move(tj));
  }
  j["trials"] = std::move(trials);
  j["mean_rmse"] = number_or_null(r.mean);
  j["std_rmse"] = r.std;
  j["std_defined"] = r.std_defined;
  j["summary"] = r.summary();
  if (r.wall_time_s) j["wall_time_s"] = *r.wall_time_s;
  return j;
}

inline TrialReport trial_report_from_json(const nlohmann::json& j) {
  TrialReport r;
  try {
    r.label = j.at("label").get<std::string>();
    r.config = j.value("config", nlohmann::json::object());
    for (const auto& tj : j.at("trials")) {
      TrialOutcome t;
      t.index = tj.at("trial").get<std::size_t>();
      t.split_seed = tj.at("split_seed").get<std::uint64_t>();
      t.failed = tj.at("failed").get<bool>();
      t.error = tj.value("error", std::string());
      t.test_rmse = number_from(tj.at("test_rmse"));
      for (const auto& v : tj.at("per_year_rmse")) t.per_year.push_back(number_from(v));
      if (tj.contains("best_epoch") && !tj["best_epoch"].is_null()) t.best_epoch = tj["best_epoch"].get<std::size_t>();
      if (tj.contains("best_val_rmse")) t.best_val_rmse = number_from(tj["best_val_rmse"]);
      if (tj.contains("sizes")) {
        t.train_size = tj["sizes"].at("train").get<std::size_t>();
        t.val_size = tj["sizes"].at("val").get<std::size_t>();
        t.test_size = tj["sizes"].at("test").get<std::size_t>();
      }
      for (const auto& h : tj.value("history", nlohmann::json::array())) {
        EpochRecord e;
        e.epoch = h.at("epoch").get<std::size_t>();
        e.lr = h.at("lr").get<double>();
        e.train_loss = number_from(h.at("train_loss"));
        e.val_rmse = number_from(h.at("val_rmse"));
        t.history.push_back(e);
      }
      r.trials.push_back(std::move(t));
    }
    summarize(r);
    if (j.contains("wall_time_s")) r.wall_time_s = j["wall_time_s"].get<double>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::malformed_record, std::string("trial report: ") + e.what());
  }
  return r;
}

struct TrialSettings {
  ModelConfig model;
  TrainConfig train;
  std::size_t n_trials = 5;
  std::size_t threads = 1;
  std::string label;
  bool record_wall_time = false;  // off in bit-exact mode so reports are reproducible
};

/// Trial k: split seed = base seed + k, fresh model initialised from the same
/// seed, statistics from that trial's training split, test RMSE reported.
/// Trials are independent, so running them on several threads does not change
/// any number.
inline TrialReport run_trials(const std::vector<TemporalSample>& samples, const TrialSettings& settings) {
  require(settings.n_trials >= 1, ErrorKind::config, "at least one trial is required");
  settings.model.validate();
  settings.train.validate();
  const auto started = std::chrono::steady_clock::now();

  TrialReport report;
  report.label = settings.label;
  report.trials.resize(settings.n_trials);

  auto run_one = [&](std::size_t k) {
    TrialOutcome& t = report.trials[k];
    t.index = k;
    t.split_seed = settings.train.seed + k;
    try {
      const auto parts = split(samples, SplitSpec{t.split_seed});
      t.train_size = parts.train.size();
      t.val_size = parts.val.size();
      t.test_size = parts.test.size();
      Model model(settings.model, t.split_seed);
      model.set_stats(compute_norm_stats(parts.train));
      const auto train_p = model.prepare(parts.train);
      const auto val_p = model.prepare(parts.val);
      const auto test_p = model.prepare(parts.test);
      TrainConfig tc = settings.train;
      tc.seed = t.split_seed;
      const auto res = train(model, train_p, val_p, tc);
      t.history = res.history;
      t.best_epoch = res.best_epoch;
      t.best_val_rmse = res.best_val_rmse;
      const auto rep = evaluate_rmse(model, test_p);
      t.test_rmse = rep.rmse;
      t.per_year = rep.per_year;
    } catch (const Error& e) {
      t.failed = true;
      t.error = e.what();
    }
  };

  const std::size_t threads = std::max<std::size_t>(1, std::min(settings.threads, settings.n_trials));
  if (threads == 1) {
    for (std::size_t k = 0; k < settings.n_trials; ++k) run_one(k);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < threads; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t k = w; k < settings.n_trials; k += threads) run_one(k);
      });
    for (auto& th : pool) th.join();
  }

  summarize(report);
  if (settings.record_wall_time)
    report.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

/// Table of label / mean ± std / trials, plus a delimited rendering.
struct ComparisonTable {
  std::string text;
  std::string csv;
};

inline ComparisonTable comparison_table(const std::vector<TrialReport>& reports) {
  std::size_t width = 5;
  for (const auto& r : reports) width = std::max(width, r.label.size());
  ComparisonTable t;
  auto pad = [](std::string s, std::size_t w) {
    s.resize(std::max(w, s.size()), ' ');
    return s;
  };
  t.text = pad("Model", width) + "  Result\n";
  t.text += std::string(width, '-') + "  " + std::string(17, '-') + "\n";
  t.csv = "model,mean_rmse,std_rmse,std_defined,trials,failed\n";
  for (const auto& r : reports) {
    std::size_t failed = 0;
    for (const auto& tr : r.trials) failed += tr.failed;
    t.text += pad(r.label, width) + "  " + r.summary() + "\n";
    char buf[160];
    std::snprintf(buf, sizeof buf, ",%.17g,%.17g,%s,%zu,%zu\n", r.mean, r.std, r.std_defined ? "true" : "false",
                  r.trials.size(), failed);
    t.csv += r.label + buf;
  }
  return t;
}

}  // namespace psage
