#include "dukf/pipeline.hpp"

#include <algorithm>
#include <limits>
#include <sstream>

#include "dukf/text.hpp"
#include "dukf/training.hpp"

namespace dukf {

SyncedDataset load_dataset(const std::string& path, const DataConfig& cfg) {
  const RawLog log = load_log(path);
  const bool synced = std::all_of(kTruthColumns.begin(), kTruthColumns.end(),
                                  [&](const auto& c) { return log.has(c); });
  if (synced) return read_dataset_csv(path);
  SyncedDataset ds = resample_sync(log, cfg.rate_hz);
  if (!ds.pose.empty()) attach_pose_ground_truth(ds, cfg.savgol_window, cfg.savgol_order);
  return ds;
}

DatasetSplit split_for(const SyncedDataset& ds, const DataConfig& cfg) {
  return split_dataset(ds, cfg.split);
}

Evaluation evaluate_bundle(const ModelBundle& bundle, const SyncedDataset& ds,
                           const UkfConfig& ukf, const InitConfig& init,
                           const EvalConfig& eval, std::size_t workers,
                           bool audit_noise) {
  Evaluation out;
  EstimateOptions opts;
  opts.sequence_rows = eval.sequence_rows;
  opts.workers = workers;
  opts.audit_noise = audit_noise;
  out.estimates = estimate_sequences(bundle, ds, ukf, init, opts,
                                     audit_noise ? &out.audit : nullptr);
  out.diverged = static_cast<std::size_t>(std::count_if(
      out.estimates.begin(), out.estimates.end(), [](const auto& e) { return e.diverged; }));
  if (out.diverged < out.estimates.size())
    out.report = evaluate_estimates(ds, out.estimates, {eval.weights, eval.burn_in}, false);
  return out;
}

ad::GradCheckResult rollout_grad_check(const ModelBundle& bundle,
                                       const SyncedDataset& ds, std::size_t steps,
                                       const StateWeights& weights,
                                       const UkfConfig& ukf, const InitConfig& init,
                                       const ad::GradCheckOptions& options) {
  if (steps < 2 || steps > ds.size())
    throw DataError("gradient check needs between 2 and " + std::to_string(ds.size()) +
                    " steps, got " + std::to_string(steps));
  if (!ds.has_truth()) throw DataError("gradient check needs ground truth");
  const SyncedDataset window = ds.slice(0, steps);
  const GaussianBelief b0 = initial_belief(window.y[0], init, bundle, ukf);
  const ad::Tensor truth = truth_matrix(window.truth);
  const ad::LossFn loss = [&](const ad::ParameterSet& params) {
    const Trajectory tr = run_sequence(b0, window.u, window.y,
                                       make_filter_model(bundle, params, ukf), ukf);
    return weighted_state_loss(stack_rows(tr.means), truth, weights);
  };
  return ad::grad_check(loss, bundle.params, options);
}

std::vector<SweepRow> sweep_sequence_length(const ModelBundle& start,
                                            const DatasetSplit& split,
                                            const std::vector<std::size_t>& lengths,
                                            const RunConfig& cfg) {
  std::vector<SweepRow> rows;
  for (std::size_t len : lengths) {
    TrainConfig train = cfg.train;
    train.seq_len = len;
    const TrainResult r =
        ukf_finetune(start, split.train, split.val, train, cfg.ukf, cfg.init);
    ModelBundle tuned = start;
    tuned.params = r.best_epoch > 0 ? r.best_params : r.final_params;

    SweepRow row;
    row.seq_len = len;
    row.epochs = r.log.size();
    row.best_val = r.best_val;
    double wall = 0.0;
    for (const auto& rec : r.log) wall += rec.wall_time;
    if (!r.log.empty()) {
      row.final_train_loss = r.log.back().train_loss;
      row.mean_epoch_time = wall / static_cast<double>(r.log.size());
    }
    const Evaluation ev =
        evaluate_bundle(tuned, split.test, cfg.ukf, cfg.init, cfg.eval, train.workers);
    row.test_diverged = ev.diverged;
    row.test_mse = ev.report.sequences ? ev.report.mse : std::numeric_limits<double>::infinity();
    row.test_mae = ev.report.sequences ? ev.report.mae : std::numeric_limits<double>::infinity();
    rows.push_back(row);
  }
  return rows;
}

std::string render_sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out << "seq_len,epochs,final_train_loss,best_val,test_mse,test_mae,test_diverged,"
         "mean_epoch_time\n";
  for (const auto& r : rows)
    out << r.seq_len << ',' << r.epochs << ',' << format_double(r.final_train_loss) << ','
        << format_double(r.best_val) << ',' << format_double(r.test_mse) << ','
        << format_double(r.test_mae) << ',' << r.test_diverged << ','
        << format_double(r.mean_epoch_time) << '\n';
  return out.str();
}

std::vector<MetricsReport> ablate_mixed(const std::vector<NamedBundle>& models,
                                        const SyncedDataset& ds, const RunConfig& cfg,
                                        const std::string& dataset_id) {
  std::vector<MetricsReport> out;
  for (const auto& [pname, predict] : models) {
    for (const auto& [uname, update] : models) {
      const ModelBundle b = &predict == &update ? predict : mix_bundles(predict, update);
      const Evaluation ev = evaluate_bundle(b, ds, cfg.ukf, cfg.init, cfg.eval);
      if (ev.diverged == ev.estimates.size())
        throw FilterDivergence(0, "every window diverged for " + pname + "+" + uname);
      MetricsReport r = ev.report;
      r.model_id = pname + "+" + uname;
      r.dataset_id = dataset_id;
      out.push_back(r);
    }
  }
  return out;
}

std::string tagged_path(const std::string& path, const std::string& tag) {
  const auto slash = path.find_last_of('/');
  const auto dot = path.find_last_of('.');
  if (dot == std::string::npos || (slash != std::string::npos && dot < slash) ||
      dot == (slash == std::string::npos ? 0 : slash + 1))
    return path + "." + tag;
  return path.substr(0, dot) + "." + tag + path.substr(dot);
}

}  // namespace dukf
