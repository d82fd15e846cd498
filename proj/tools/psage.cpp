// SPDX-License-Identifier: Apache-2.0
//
// psage: synthetic data, sample building, training, evaluation, the repeated
// trial protocol, gradient checks and report merging.
//
// Exit codes: 0 ok, 1 check failed / internal, 2 config or usage, 3 data,
// 4 numeric failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "psage/psage.hpp"

namespace fs = std::filesystem;
using namespace psage;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

int exit_code_for(ErrorKind k) {
  switch (k) {
    case ErrorKind::config:
      return kExitConfig;
    case ErrorKind::numeric_failure:
      return kExitNumeric;
    case ErrorKind::contract:
      return kExitCheckFailed;
    default:
      return kExitData;
  }
}

void write_text(const std::string& path, const std::string& text) {
  if (const auto dir = fs::path(path).parent_path(); !dir.empty()) fs::create_directories(dir);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorKind::io, "cannot open '" + path + "' for writing");
  out << text;
  require(out.good(), ErrorKind::io, "failed writing '" + path + "'");
}

void write_json(const std::string& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), ErrorKind::io, "cannot open '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::malformed_record, "'" + path + "' is not valid JSON: " + e.what());
  }
}

/// Flags shared by train and trials; each overrides the config file value.
struct ExperimentFlags {
  std::string config_path;
  std::optional<std::string> records, mar, samples, out_dir, cell, mask, edge_mode, aggregation, fanout, label;
  std::optional<std::size_t> hidden, epochs, lr_period, trials, threads;
  std::optional<std::vector<std::size_t>> head;
  std::optional<double> dropout, weight_cap, lr, weight_decay;
  std::optional<std::uint64_t> seed;
  CLI::Option *gate_bias = nullptr, *no_gate_bias = nullptr, *head_bias = nullptr, *no_head_bias = nullptr;
  CLI::Option *decoupled = nullptr, *no_shuffle = nullptr, *bit_exact = nullptr, *no_bit_exact = nullptr;

  void attach(CLI::App* app, bool with_trials) {
    app->add_option("-c,--config", config_path, "JSON config file (flat keys; flags override it)")
        ->check(CLI::ExistingFile);
    app->add_option("--records", records, "records file (JSON lines)");
    app->add_option("--mar", mar, "MAR samples file (CSV)");
    app->add_option("--samples", samples, "samples file built by `psage build` (used instead of --records)");
    app->add_option("--out-dir", out_dir, "output directory");
    app->add_option("--cell", cell, "recurrent cell: sage | gcn");
    app->add_option("--hidden", hidden, "hidden width of the recurrent cell");
    app->add_option("--head", head, "hidden widths of the head MLP, e.g. --head 128 64");
    app->add_option("--dropout", dropout, "dropout probability in the head");
    app->add_option("--mask", mask, "feature mask, 8 characters of 0/1 (lat lon thick smb temp refreeze melt snow)");
    app->add_option("--edge-mode", edge_mode, "edge weight formula: as-written | sqrt");
    app->add_option("--weight-cap", weight_cap, "upper bound on edge weights");
    app->add_option("--aggregation", aggregation, "GraphSAGE neighbour aggregation: mean | weighted");
    app->add_option("--fanout", fanout, "neighbours sampled per node: all | integer");
    gate_bias = app->add_flag("--gate-bias", "enable LSTM gate biases");
    no_gate_bias = app->add_flag("--no-gate-bias", "disable LSTM gate biases");
    head_bias = app->add_flag("--head-bias", "enable head biases");
    no_head_bias = app->add_flag("--no-head-bias", "disable head biases");
    app->add_option("--epochs", epochs, "training epochs (default 450 sage, 300 gcn)");
    app->add_option("--lr", lr, "initial learning rate");
    app->add_option("--lr-period", lr_period, "epochs between learning-rate halvings");
    app->add_option("--weight-decay", weight_decay, "weight decay coefficient");
    decoupled = app->add_flag("--decoupled-weight-decay", "apply weight decay to the weights directly");
    no_shuffle = app->add_flag("--no-shuffle", "keep the training order fixed");
    app->add_option("--seed", seed, "base seed (split, init, shuffling, dropout)");
    if (with_trials) {
      app->add_option("--trials", trials, "number of trials");
      app->add_option("--threads", threads, "trials run concurrently");
    }
    bit_exact = app->add_flag("--bit-exact", "reproducible reports (no wall time)");
    no_bit_exact = app->add_flag("--no-bit-exact", "record wall time in reports");
    app->add_option("--label", label, "row label in comparison tables");
  }

  ExperimentConfig resolve() const {
    ExperimentConfig c = config_path.empty() ? ExperimentConfig{} : load_experiment_config(config_path);
    nlohmann::json j = nlohmann::json::object();
    auto put = [&](const char* key, const auto& opt) {
      if (opt) j[key] = *opt;
    };
    put("records", records);
    put("mar", mar);
    put("samples", samples);
    put("out_dir", out_dir);
    put("cell", cell);
    put("mask", mask);
    put("edge_mode", edge_mode);
    put("aggregation", aggregation);
    put("label", label);
    put("hidden", hidden);
    put("head", head);
    put("dropout", dropout);
    put("weight_cap", weight_cap);
    put("epochs", epochs);
    put("lr", lr);
    put("lr_period", lr_period);
    put("weight_decay", weight_decay);
    put("seed", seed);
    put("trials", trials);
    put("threads", threads);
    if (fanout) {
      if (*fanout == "all") {
        j["fanout"] = "all";
      } else {
        try {
          j["fanout"] = std::stoull(*fanout);
        } catch (const std::exception&) {
          fail(ErrorKind::config, "--fanout must be 'all' or a positive integer");
        }
      }
    }
    auto both = [](CLI::Option* on, CLI::Option* off, const char* name) {
      require(!(on->count() && off->count()), ErrorKind::config, std::string("--") + name + " and --no-" + name +
                                                                       " are mutually exclusive");
    };
    both(gate_bias, no_gate_bias, "gate-bias");
    both(head_bias, no_head_bias, "head-bias");
    both(bit_exact, no_bit_exact, "bit-exact");
    if (gate_bias->count() || no_gate_bias->count()) j["gate_bias"] = gate_bias->count() > 0;
    if (head_bias->count() || no_head_bias->count()) j["head_bias"] = head_bias->count() > 0;
    if (bit_exact->count() || no_bit_exact->count()) j["bit_exact"] = bit_exact->count() > 0;
    if (decoupled->count()) j["decoupled_weight_decay"] = true;
    if (no_shuffle->count()) j["shuffle"] = false;
    apply_config_json(c, j);
    c.validate();
    return c;
  }
};

/// Samples from a samples file (checked against the configuration) or built
/// from records plus optional MAR data.
std::vector<TemporalSample> load_samples(const ExperimentConfig& cfg) {
  const auto& m = cfg.model;
  if (!cfg.samples.empty()) {
    cfg.require_paths({&cfg.samples});
    SampleOptions built;
    auto samples = read_samples(cfg.samples, &built);
    require(!samples.empty(), ErrorKind::invalid_input, "samples file '" + cfg.samples + "' is empty");
    require(built.edge_mode == m.edge_mode && built.weight_cap == m.weight_cap, ErrorKind::config,
            "samples were built with edge mode " + std::string(to_string(built.edge_mode)) +
                "; rebuild them or pass the same --edge-mode/--weight-cap");
    for (std::size_t k = 0; k < kFeatureCount; ++k)
      require(!m.mask[k] || built.mask[k], ErrorKind::config,
              "mask " + m.mask.str() + " enables columns missing from the samples (built with " +
                  built.mask.str() + ")");
    if (!(built.mask == m.mask))
      for (auto& s : samples)
        for (auto& g : s.inputs) {
          apply_mask(g.node_features, m.mask);
          g.mask = m.mask;
        }
    return samples;
  }
  require(!cfg.records.empty(), ErrorKind::config, "set --samples or --records (or the config keys)");
  cfg.require_paths({&cfg.records});
  require(!m.mask.any_physical() || !cfg.mar.empty(), ErrorKind::config,
          "mask " + m.mask.str() + " enables physical features but no MAR file is given (--mar)");
  std::optional<MarSampleSet> mar;
  if (!cfg.mar.empty()) {
    cfg.require_paths({&cfg.mar});
    mar = read_mar(cfg.mar);
  }
  const auto records = filter_valid(read_records(cfg.records));
  require(!records.empty(), ErrorKind::invalid_input, "no record in '" + cfg.records + "' has 20 complete layers");
  return build_samples(records, mar ? &*mar : nullptr, m.sample_options());
}

nlohmann::json rmse_json(const RmseReport& r) {
  return {{"rmse", r.rmse}, {"per_year_rmse", r.per_year}, {"count", r.count}};
}

// ---------------------------------------------------------------------------

int cmd_synth(const SynthParams& p, const std::string& records_out, const std::string& mar_out) {
  SynthParams params = p;
  params.emit_mar = !mar_out.empty();
  const auto out = synth_generate(params);
  write_records(records_out, out.records);
  if (out.mar) write_mar(mar_out, *out.mar);
  std::printf("wrote %zu records to %s", out.records.size(), records_out.c_str());
  if (out.mar) std::printf(" and MAR samples to %s", mar_out.c_str());
  if (std::isfinite(out.channel_target_correlation))
    std::printf(" (channel/target correlation %.4f)", out.channel_target_correlation);
  std::printf("\n");
  return kExitOk;
}

int cmd_build(const std::string& records_path, const std::string& mar_path, const std::string& mask,
              const std::string& edge_mode, double cap, const std::string& out_path) {
  SampleOptions opts{FeatureMask::parse(mask), parse_edge_mode(edge_mode), cap};
  require(cap > 0.0 && std::isfinite(cap), ErrorKind::config, "--weight-cap must be positive");
  require(!opts.mask.any_physical() || !mar_path.empty(), ErrorKind::config,
          "mask " + mask + " enables physical features but no MAR file is given (--mar)");
  const auto all = read_records(records_path);
  const auto records = filter_valid(all);
  std::optional<MarSampleSet> mar;
  if (!mar_path.empty()) mar = read_mar(mar_path);
  const auto samples = build_samples(records, mar ? &*mar : nullptr, opts);
  write_samples(out_path, samples, opts);
  std::printf("kept %zu of %zu records; wrote %zu samples to %s\n", records.size(), all.size(), samples.size(),
              out_path.c_str());
  return kExitOk;
}

int cmd_train(const ExperimentConfig& cfg, std::size_t log_every) {
  const auto samples = load_samples(cfg);
  const auto parts = split(samples, SplitSpec{cfg.train.seed});
  Model model(cfg.model, cfg.train.seed);
  model.set_stats(compute_norm_stats(parts.train));
  const auto train_p = model.prepare(parts.train);
  const auto val_p = model.prepare(parts.val);
  const auto test_p = model.prepare(parts.test);

  auto log = [&](const EpochRecord& e) {
    if (log_every && (e.epoch % log_every == 0))
      std::printf("epoch %zu  lr %.6g  train_mse %.6g  val_rmse %.6g\n", e.epoch, e.lr, e.train_loss, e.val_rmse);
  };
  const auto t0 = std::chrono::steady_clock::now();
  const auto result = train(model, train_p, val_p, cfg.train, log);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const auto val = evaluate_rmse(model, val_p);
  const auto test = evaluate_rmse(model, test_p);

  fs::create_directories(cfg.out_dir);
  const std::string ckpt = (fs::path(cfg.out_dir) / "model.ckpt").string();
  save_checkpoint(model, ckpt, {cfg.train.seed, result.best_epoch.value_or(result.history.size() - 1)});
  nlohmann::json report;
  report["config"] = to_json(cfg);
  report["sizes"] = {{"train", parts.train.size()}, {"val", parts.val.size()}, {"test", parts.test.size()}};
  report["optimizer_steps"] = result.optimizer_steps;
  report["best_epoch"] = result.best_epoch ? nlohmann::json(*result.best_epoch) : nlohmann::json(nullptr);
  report["val"] = rmse_json(val);
  report["test"] = rmse_json(test);
  report["history"] = history_to_json(result.history);
  if (!cfg.bit_exact) report["wall_time_s"] = seconds;
  const std::string hist = (fs::path(cfg.out_dir) / "history.json").string();
  write_json(hist, report);
  std::printf("best epoch %zu  val RMSE %.4f  test RMSE %.4f px\nwrote %s and %s\n",
              result.best_epoch.value_or(0), val.rmse, test.rmse, ckpt.c_str(), hist.c_str());
  return kExitOk;
}

int cmd_eval(const std::string& ckpt_path, const std::string& samples_path, const std::string& records_path,
             const std::string& mar_path, const std::string& out_path) {
  auto loaded = load_checkpoint(ckpt_path);
  require(loaded.model.stats().has_value(), ErrorKind::invalid_input, "checkpoint carries no normalisation statistics");
  ExperimentConfig cfg;
  cfg.model = loaded.model.config();
  cfg.samples = samples_path;
  cfg.records = records_path;
  cfg.mar = mar_path;
  const auto samples = load_samples(cfg);
  const auto prepared = loaded.model.prepare(samples);
  const auto r = evaluate_rmse(loaded.model, prepared);
  std::printf("samples %zu  RMSE %.4f px\nper year:", samples.size(), r.rmse);
  for (double v : r.per_year) std::printf(" %.4f", v);
  std::printf("\n");
  if (!out_path.empty()) {
    auto j = rmse_json(r);
    j["checkpoint"] = ckpt_path;
    j["samples"] = samples.size();
    write_json(out_path, j);
  }
  return kExitOk;
}

int cmd_trials(const ExperimentConfig& cfg, const std::string& out_path) {
  const auto samples = load_samples(cfg);
  auto report = run_trials(samples, cfg.trial_settings());
  report.config = to_json(cfg);
  const std::string path = out_path.empty() ? (fs::path(cfg.out_dir) / "trials.json").string() : out_path;
  write_json(path, to_json(report));
  std::size_t failed = 0;
  for (const auto& t : report.trials) {
    if (t.failed) {
      ++failed;
      std::printf("trial %zu  FAILED: %s\n", t.index, t.error.c_str());
    } else {
      std::printf("trial %zu  split seed %llu  test RMSE %.4f px\n", t.index,
                  static_cast<unsigned long long>(t.split_seed), t.test_rmse);
    }
  }
  std::printf("%s: %s%s\nwrote %s\n", report.label.c_str(), report.summary().c_str(),
              report.std_defined ? "" : " (std undefined for one trial)", path.c_str());
  return failed == report.trials.size() ? kExitNumeric : kExitOk;
}

int cmd_gradcheck(const GradSuiteOptions& opts) {
  const auto entries = run_gradient_suite(opts);
  bool ok = true;
  for (const auto& e : entries) {
    std::printf("%-20s max rel error %.3e  (tol %.0e, %zu coords, %.2fs)  %s\n", e.name.c_str(),
                e.result.max_rel_error, e.tolerance, e.result.coords_checked, e.seconds, e.passed() ? "ok" : "FAIL");
    if (!e.passed()) {
      ok = false;
      std::printf("  worst: %s[%zu] analytic %.6e numeric %.6e\n", e.result.worst_parameter.c_str(),
                  e.result.worst_index, e.result.worst_analytic, e.result.worst_numeric);
    }
  }
  return ok ? kExitOk : kExitCheckFailed;
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& out_path, const std::string& csv_path) {
  std::vector<TrialReport> reports;
  for (const auto& p : inputs) reports.push_back(trial_report_from_json(read_json(p)));
  const auto table = comparison_table(reports);
  std::fputs(table.text.c_str(), stdout);
  if (!out_path.empty()) write_text(out_path, table.text);
  if (!csv_path.empty()) write_text(csv_path, table.csv);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PSAGE-LSTM: physics-informed graph recurrent networks for ice-layer thickness"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "help for every subcommand");

  SynthParams synth;
  std::string synth_records, synth_mar;
  auto* s = app.add_subcommand("synth", "write synthetic records (and optionally MAR samples)");
  s->add_option("--seed", synth.seed, "generator seed")->capture_default_str();
  s->add_option("-n,--n", synth.n_records, "number of records")->capture_default_str();
  s->add_option("--out", synth_records, "records output path")->required();
  s->add_option("--mar-out", synth_mar, "MAR output path (omit to skip MAR samples)");
  s->add_option("--layers", synth.layers, "thickness layers per record")->capture_default_str();
  s->add_option("--noise", synth.noise_std, "per-pixel thickness noise std")->capture_default_str();
  s->add_option("--amplitude", synth.smooth_amplitude, "relative along-track variation")->capture_default_str();
  s->add_option("--deep-spread", synth.deep_spread, "spread of the per-record deep-layer factor")
      ->capture_default_str();
  s->add_option("--year", synth.acquisition_year, "acquisition year")->capture_default_str();
  bool synth_uninformative = false;
  s->add_flag("--uninformative", synth_uninformative, "make the MAR smb channel independent of the targets");

  std::string b_records, b_mar, b_out, b_mask = "11100000", b_edge = "as-written";
  double b_cap = kDefaultWeightCap;
  auto* b = app.add_subcommand("build", "turn records (+ MAR samples) into a samples file");
  b->add_option("--records", b_records, "records file")->required()->check(CLI::ExistingFile);
  b->add_option("--mar", b_mar, "MAR samples file")->check(CLI::ExistingFile);
  b->add_option("--mask", b_mask, "feature mask, 8 characters of 0/1")->capture_default_str();
  b->add_option("--edge-mode", b_edge, "as-written | sqrt")->capture_default_str();
  b->add_option("--weight-cap", b_cap, "upper bound on edge weights")->capture_default_str();
  b->add_option("--out", b_out, "samples output path")->required();

  ExperimentFlags train_flags;
  std::size_t log_every = 25;
  auto* t = app.add_subcommand("train", "train one model on the first split; writes model.ckpt and history.json");
  train_flags.attach(t, false);
  t->add_option("--log-every", log_every, "print every k-th epoch (0 = silent)")->capture_default_str();

  std::string e_ckpt, e_samples, e_records, e_mar, e_out;
  auto* e = app.add_subcommand("eval", "RMSE of a checkpoint on a samples or records file");
  e->add_option("--checkpoint", e_ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  e->add_option("--samples", e_samples, "samples file")->check(CLI::ExistingFile);
  e->add_option("--records", e_records, "records file (alternative to --samples)")->check(CLI::ExistingFile);
  e->add_option("--mar", e_mar, "MAR samples file used with --records")->check(CLI::ExistingFile);
  e->add_option("--out", e_out, "write the RMSE report here");

  ExperimentFlags trial_flags;
  std::string trials_out;
  auto* r = app.add_subcommand("trials", "repeated-split protocol; writes a trial report");
  trial_flags.attach(r, true);
  r->add_option("--out", trials_out, "report path (default <out-dir>/trials.json)");

  GradSuiteOptions g_opts;
  std::string g_config;
  auto* g = app.add_subcommand("gradcheck", "finite-difference checks of every layer and the full networks");
  g->add_option("-c,--config", g_config, "config file; its seed is used unless --seed is given")
      ->check(CLI::ExistingFile);
  auto* g_seed_opt = g->add_option("--seed", g_opts.seed, "seed of the toy instances")->capture_default_str();
  g->add_option("--eps", g_opts.eps, "finite-difference step")->capture_default_str();
  g->add_option("--coords", g_opts.coords, "coordinates sampled per check")->capture_default_str();

  std::vector<std::string> rep_inputs;
  std::string rep_out, rep_csv;
  auto* p = app.add_subcommand("report", "merge trial reports into a comparison table");
  p->add_option("reports", rep_inputs, "trial report files")->required()->check(CLI::ExistingFile);
  p->add_option("--out", rep_out, "write the text table here");
  p->add_option("--csv", rep_csv, "write the delimited table here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    std::fprintf(stderr, "psage: %s (see --help)\n", ex.what());
    return kExitConfig;
  }

  try {
    if (*s) {
      synth.informative_channel = !synth_uninformative;
      return cmd_synth(synth, synth_records, synth_mar);
    }
    if (*b) return cmd_build(b_records, b_mar, b_mask, b_edge, b_cap, b_out);
    if (*t) return cmd_train(train_flags.resolve(), log_every);
    if (*e) {
      require(e_samples.empty() != e_records.empty(), ErrorKind::config, "give exactly one of --samples or --records");
      return cmd_eval(e_ckpt, e_samples, e_records, e_mar, e_out);
    }
    if (*r) return cmd_trials(trial_flags.resolve(), trials_out);
    if (*g) {
      if (!g_config.empty() && !g_seed_opt->count()) g_opts.seed = load_experiment_config(g_config).train.seed;
      return cmd_gradcheck(g_opts);
    }
    if (*p) return cmd_report(rep_inputs, rep_out, rep_csv);
  } catch (const Error& ex) {
    std::fprintf(stderr, "psage: %s error: %s\n", std::string(to_string(ex.kind())).c_str(), ex.what());
    return exit_code_for(ex.kind());
  } catch (const std::exception& ex) {
    std::fprintf(stderr, "psage: %s\n", ex.what());
    return kExitCheckFailed;
  }
  return kExitCheckFailed;
}
