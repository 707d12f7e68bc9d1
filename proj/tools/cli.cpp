#include "cli.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>

#include "dukf/checkpoint.hpp"
#include "dukf/pipeline.hpp"
#include "dukf/text.hpp"
#include "dukf/training.hpp"

namespace dukf::cli {

namespace {

// Missing required input that CLI11 cannot see (e.g. a path that may come
// from the config file instead of a flag).
class UsageError : public Error {
 public:
  using Error::Error;
};

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> workers;
};

RunConfig build_config(const Common& c, const std::map<std::string, std::string>& env) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_config(c.config);
  apply_env_overrides(cfg, env);
  for (const auto& s : c.sets) apply_override(cfg, s);
  if (c.seed) {
    cfg.model.seed = *c.seed;
    cfg.train.seed = *c.seed;
    cfg.sim.seed = *c.seed;
  }
  if (c.workers) cfg.train.workers = *c.workers;
  cfg.validate();
  return cfg;
}

std::string require_path(const std::string& flag_value, const std::string& config_value,
                         const std::string& flag, const std::string& key) {
  const std::string& p = flag_value.empty() ? config_value : flag_value;
  if (p.empty()) throw UsageError(flag + " is required (or set " + key + ")");
  if (!std::filesystem::exists(p) && (flag == "--data" || flag == "--checkpoint"))
    throw UsageError(flag + ": file not found: " + p);
  return p;
}

std::string stem(const std::string& path) {
  return std::filesystem::path(path).stem().string();
}

SyncedDataset pick_split(const SyncedDataset& ds, const std::string& which,
                         const DataConfig& cfg) {
  if (which == "all") return ds;
  const DatasetSplit s = split_for(ds, cfg);
  if (which == "train") return s.train;
  if (which == "val") return s.val;
  return s.test;
}

std::string fmt(double v) {
  std::ostringstream o;
  o << std::setprecision(6) << v;
  return o.str();
}

void write_text(const std::string& path, const std::string& text, std::ostream& out) {
  if (path.empty() || path == "-") {
    out << text;
    return;
  }
  std::ofstream f(path);
  if (!f) throw DataError("cannot write '" + path + "'");
  f << text;
  if (!f) throw DataError("failed writing '" + path + "'");
}

CheckpointMeta meta_for(const RunConfig& cfg, const std::string& phase, std::size_t epoch,
                        double val) {
  return {{"phase", phase},
          {"epoch", std::to_string(epoch)},
          {"val_loss", format_double(val)},
          {"config", dump_config(cfg)}};
}

void train_phase(Phase phase, const ModelBundle& start, const SyncedDataset& ds,
                 const RunConfig& cfg, const std::string& ckpt, const std::string& log_path,
                 std::ostream& out, std::ostream& err) {
  const DatasetSplit split = split_for(ds, cfg.data);
  std::optional<TrainingLog> log;
  if (!log_path.empty()) log.emplace(log_path);
  const std::size_t total =
      phase == Phase::pretrain ? cfg.train.pretrain_epochs : cfg.train.finetune_epochs;
  const std::string name = to_string(phase);

  const EpochCallback on_epoch = [&](const EpochRecord& r, const ad::ParameterSet& p) {
    if (log) log->append(r);
    err << name << " epoch " << r.epoch << "/" << total << " loss " << fmt(r.train_loss);
    if (!std::isnan(r.val_loss)) err << " val " << fmt(r.val_loss);
    if (r.diverged) err << " diverged " << r.diverged;
    err << " (" << std::fixed << std::setprecision(2) << r.wall_time << " s)\n"
        << std::defaultfloat;
    if (cfg.train.checkpoint_every && r.epoch % cfg.train.checkpoint_every == 0) {
      ModelBundle b = start;
      b.params = p;
      std::ostringstream tag;
      tag << "epoch" << std::setw(5) << std::setfill('0') << r.epoch;
      save_checkpoint(b, tagged_path(ckpt, tag.str()), meta_for(cfg, name, r.epoch, r.val_loss));
    }
  };

  const TrainResult r =
      phase == Phase::pretrain
          ? one_step_pretrain(start, split.train, split.val, cfg.train, cfg.ukf, on_epoch)
          : ukf_finetune(start, split.train, split.val, cfg.train, cfg.ukf, cfg.init, on_epoch);

  ModelBundle final_bundle = start;
  final_bundle.params = r.final_params;
  const std::size_t last = r.log.empty() ? 0 : r.log.back().epoch;
  const double last_val = r.log.empty() ? std::nan("") : r.log.back().val_loss;
  ModelBundle best = start;
  best.params = r.best_epoch > 0 ? r.best_params : r.final_params;
  save_checkpoint(best, ckpt,
                  meta_for(cfg, name, r.best_epoch > 0 ? r.best_epoch : last,
                           r.best_epoch > 0 ? r.best_val : last_val));
  const std::string final_path = tagged_path(ckpt, "final");
  save_checkpoint(final_bundle, final_path, meta_for(cfg, name, last, last_val));
  out << name << ": " << r.log.size() << " epochs; best validation " << fmt(r.best_val)
      << " at epoch " << r.best_epoch << "\n"
      << "wrote " << ckpt << " and " << final_path << "\n";
}

}  // namespace

int dispatch(const std::vector<std::string>& args,
             const std::map<std::string, std::string>& env, std::ostream& out,
             std::ostream& err) {
  CLI::App app{"Differentiable unscented Kalman filter for vehicle state estimation", "dukf"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  app.add_option("--config", common.config, "TOML run configuration")
      ->check(CLI::ExistingFile);
  app.add_option("--set", common.sets, "Override a key: section.key=value (repeatable)");
  app.add_option("--seed", common.seed, "Seed for model init, training and simulation");
  app.add_option("--workers", common.workers, "Parallel sequence rollouts in training")
      ->check(CLI::PositiveNumber);

  std::string data, out_path, checkpoint, log_path, report, format, estimates, split = "test";
  std::vector<std::string> checkpoints;
  std::optional<double> duration, mu;
  std::optional<std::string> model_kind, noise_mode;
  std::size_t steps = 50;
  bool run_filter = false;
  std::vector<std::size_t> lengths{8, 32, 128, 500, 1000};
  const auto splits = CLI::IsMember({"train", "val", "test", "all"});

  auto* simulate = app.add_subcommand("simulate", "Simulate a synthetic driving dataset");
  simulate->add_option("--out", out_path, "Dataset CSV to write (default paths.dataset)");
  simulate->add_option("--duration", duration, "Seconds to simulate")
      ->check(CLI::PositiveNumber);
  simulate->add_option("--mu", mu, "Constant friction coefficient")
      ->check(CLI::PositiveNumber);

  auto* pretrain = app.add_subcommand("pretrain", "Train dynamics on one-step prediction");
  pretrain->add_option("--data", data, "Dataset (default paths.dataset)");
  pretrain->add_option("--out", out_path, "Best checkpoint (default paths.checkpoint)");
  pretrain->add_option("--log", log_path, "Training log CSV (default paths.log)");

  auto* finetune = app.add_subcommand("finetune", "Train through the filter");
  finetune->add_option("--data", data, "Dataset (default paths.dataset)");
  finetune->add_option("--checkpoint", checkpoint, "Starting checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  finetune->add_option("--out", out_path, "Best checkpoint (default paths.checkpoint)");
  finetune->add_option("--log", log_path, "Training log CSV (default paths.log)");

  auto* estimate = app.add_subcommand("estimate", "Run the filter over a dataset");
  estimate->add_option("--data", data, "Dataset (default paths.dataset)");
  estimate->add_option("--checkpoint", checkpoint, "Model checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  estimate->add_option("--split", split, "Rows to use")->check(splits);
  estimate->add_option("--out", out_path, "Estimates CSV")->required();

  auto* evaluate = app.add_subcommand("evaluate", "Score estimates against ground truth");
  evaluate->add_option("--checkpoint", checkpoint, "Model checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  evaluate->add_option("--data", data, "Dataset (default paths.dataset)");
  evaluate->add_option("--split", split, "Rows to use")->check(splits);
  auto* est_opt = evaluate->add_option("--estimates", estimates, "Estimates CSV from `estimate`")
                      ->check(CLI::ExistingFile);
  auto* run_opt = evaluate->add_flag("--run-filter", run_filter, "Run the filter first");
  est_opt->excludes(run_opt);
  evaluate->add_option("--report", report, "Report path, .csv or .json (default stdout)");
  evaluate->add_option("--format", format, "Report format")->check(CLI::IsMember({"csv", "json"}));

  auto* gradcheck = app.add_subcommand("gradcheck", "Check filter-rollout gradients");
  gradcheck->add_option("--model", model_kind, "Model kind")
      ->check(CLI::IsMember({"pc", "pcr", "nn", "nnt", "nntf"}));
  gradcheck->add_option("--noise", noise_mode, "Noise mode")
      ->check(CLI::IsMember({"homoscedastic", "heteroscedastic"}));
  gradcheck->add_option("--steps", steps, "Rollout length")->check(CLI::Range(2, 100000));
  gradcheck->add_option("--data", data, "Dataset (default: a fresh simulation)")
      ->check(CLI::ExistingFile);

  auto* ablate = app.add_subcommand("ablate-mixed", "Cross predict and update models");
  ablate->add_option("--checkpoint", checkpoints, "Model checkpoints (repeatable)")
      ->required()
      ->check(CLI::ExistingFile);
  ablate->add_option("--data", data, "Dataset (default paths.dataset)");
  ablate->add_option("--split", split, "Rows to use")->check(splits);
  ablate->add_option("--report", report, "Report path, .csv or .json (default stdout)");

  auto* sweep = app.add_subcommand("sweep-seqlen", "Fine-tune at several sequence lengths");
  sweep->add_option("--checkpoint", checkpoint, "Starting (pretrained) checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  sweep->add_option("--data", data, "Dataset (default paths.dataset)");
  sweep->add_option("--lengths", lengths, "Sequence lengths")->delimiter(',');
  sweep->add_option("--out", out_path, "Sweep CSV (default stdout)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  try {
    const RunConfig cfg = build_config(common, env);
    const PathsConfig& paths = cfg.paths;

    if (simulate->parsed()) {
      SimConfig sim = cfg.sim;
      if (duration) sim.duration = *duration;
      if (mu) sim.friction = {{0.0, *mu}};
      const std::string path = require_path(out_path, paths.dataset, "--out", "paths.dataset");
      SlipSummary slip;
      const SyncedDataset ds = simulate_dataset(sim, &slip);
      write_dataset_csv(ds, path);
      out << "wrote " << ds.size() << " rows to " << path << "; max rear slip "
          << fmt(slip.max_rear_slip_deg) << " deg, " << fmt(100 * slip.frac_rear_slip_over_20)
          << "% of rows above 20 deg\n";
      return kExitOk;
    }

    if (pretrain->parsed() || finetune->parsed()) {
      const std::string dpath = require_path(data, paths.dataset, "--data", "paths.dataset");
      const std::string ckpt =
          require_path(out_path, paths.checkpoint, "--out", "paths.checkpoint");
      const SyncedDataset ds = load_dataset(dpath, cfg.data);
      const bool pre = pretrain->parsed();
      const ModelBundle start = pre ? cfg.make_bundle() : load_checkpoint(checkpoint);
      train_phase(pre ? Phase::pretrain : Phase::finetune, start, ds, cfg, ckpt,
                  log_path.empty() ? paths.log : log_path, out, err);
      return kExitOk;
    }

    if (estimate->parsed()) {
      const std::string dpath = require_path(data, paths.dataset, "--data", "paths.dataset");
      const ModelBundle bundle = load_checkpoint(checkpoint);
      const SyncedDataset ds = pick_split(load_dataset(dpath, cfg.data), split, cfg.data);
      EstimateOptions opts;
      opts.sequence_rows = cfg.eval.sequence_rows;
      const auto est = estimate_sequences(bundle, ds, cfg.ukf, cfg.init, opts);
      write_estimates_csv(ds, est, out_path);
      const auto diverged = std::count_if(est.begin(), est.end(),
                                          [](const auto& e) { return e.diverged; });
      out << "wrote " << est.size() << " sequences to " << out_path;
      if (diverged) out << " (" << diverged << " diverged)";
      out << "\n";
      return kExitOk;
    }

    if (evaluate->parsed()) {
      if (estimates.empty() && !run_filter)
        throw UsageError("evaluate needs --estimates FILE or --run-filter");
      const std::string dpath = require_path(data, paths.dataset, "--data", "paths.dataset");
      const ModelBundle bundle = load_checkpoint(checkpoint);
      const SyncedDataset ds = pick_split(load_dataset(dpath, cfg.data), split, cfg.data);
      std::vector<SequenceEstimate> est;
      if (run_filter) {
        EstimateOptions opts;
        opts.sequence_rows = cfg.eval.sequence_rows;
        est = estimate_sequences(bundle, ds, cfg.ukf, cfg.init, opts);
      } else {
        est = read_estimates_csv(estimates);
      }
      const auto diverged = std::count_if(est.begin(), est.end(),
                                          [](const auto& e) { return e.diverged; });
      if (diverged == static_cast<std::ptrdiff_t>(est.size()))
        throw FilterDivergence(0, "every sequence diverged");
      if (diverged)
        err << "warning: " << diverged << " of " << est.size()
            << " sequences diverged and are excluded\n";
      MetricsReport r =
          evaluate_estimates(ds, est, {cfg.eval.weights, cfg.eval.burn_in}, false);
      r.model_id = stem(checkpoint);
      r.dataset_id = stem(dpath) + ":" + split;
      const std::string dest = report.empty() ? paths.report : report;
      const ReportFormat f = !format.empty()    ? parse_report_format(format)
                             : dest.empty()     ? ReportFormat::csv
                                                : format_from_path(dest);
      write_text(dest, render_report({r}, f), out);
      return kExitOk;
    }

    if (gradcheck->parsed()) {
      RunConfig gc = cfg;
      if (model_kind) {
        gc.model.kind = parse_model_kind(*model_kind);
        gc.model.augmented = gc.model.kind == ModelKind::nntf || gc.model.kind == ModelKind::pc;
      }
      if (noise_mode) gc.noise.mode = parse_noise_mode(*noise_mode);
      const ModelBundle bundle = gc.make_bundle();
      SyncedDataset ds;
      if (data.empty()) {
        SimConfig sim = gc.sim;
        sim.duration = static_cast<double>(steps + 1) / sim.record_hz;
        ds = simulate_dataset(sim);
      } else {
        ds = load_dataset(data, gc.data);
      }
      ad::GradCheckOptions opts;
      opts.seed = gc.train.seed;
      const ad::GradCheckResult r = rollout_grad_check(bundle, ds, steps, gc.train.state_weights,
                                                       gc.ukf, gc.init, opts);
      const bool ok = r.max_rel_error < 1e-4;
      out << "max relative gradient error " << format_double(r.max_rel_error) << " over "
          << r.coordinates << " coordinates (worst " << r.worst << "): "
          << (ok ? "ok" : "above 1e-4") << "\n";
      return ok ? kExitOk : kExitFailure;
    }

    if (ablate->parsed()) {
      const std::string dpath = require_path(data, paths.dataset, "--data", "paths.dataset");
      const SyncedDataset ds = pick_split(load_dataset(dpath, cfg.data), split, cfg.data);
      std::vector<NamedBundle> models;
      for (std::size_t i = 0; i < checkpoints.size(); ++i) {
        std::string name = stem(checkpoints[i]);
        for (const auto& m : models)
          if (m.first == name) name += "#" + std::to_string(i);
        models.emplace_back(name, load_checkpoint(checkpoints[i]));
      }
      const auto reports = ablate_mixed(models, ds, cfg, stem(dpath) + ":" + split);
      const std::string dest = report.empty() ? paths.report : report;
      write_text(dest,
                 render_report(reports, dest.empty() ? ReportFormat::csv : format_from_path(dest)),
                 out);
      return kExitOk;
    }

    if (sweep->parsed()) {
      const std::string dpath = require_path(data, paths.dataset, "--data", "paths.dataset");
      for (std::size_t len : lengths)
        if (len < 2) throw UsageError("--lengths entries must be at least 2");
      const SyncedDataset ds = load_dataset(dpath, cfg.data);
      const auto rows =
          sweep_sequence_length(load_checkpoint(checkpoint), split_for(ds, cfg.data), lengths, cfg);
      write_text(out_path, render_sweep_csv(rows), out);
      return kExitOk;
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace dukf::cli
