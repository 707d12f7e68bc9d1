#pragma once

// End-to-end workflows shared by the command-line tool and the acceptance
// suite: dataset loading, evaluation, gradient checks and training studies.

#include <string>
#include <utility>
#include <vector>

#include "dukf/config.hpp"
#include "dukf/estimate.hpp"

namespace dukf {

// A synced dataset CSV (with gt_* columns) is read as is; any other log is
// resampled to data.rate_hz and gets ground truth from its pose channels.
SyncedDataset load_dataset(const std::string& path, const DataConfig& cfg);

DatasetSplit split_for(const SyncedDataset& ds, const DataConfig& cfg);

struct Evaluation {
  MetricsReport report;  // over the non-diverged windows
  std::vector<SequenceEstimate> estimates;
  std::size_t diverged = 0;
  NoiseAudit audit;
};

// Filters every eval window of `ds` and scores the estimates. The report is
// empty (sequences = 0) when every window diverged.
Evaluation evaluate_bundle(const ModelBundle& bundle, const SyncedDataset& ds,
                           const UkfConfig& ukf, const InitConfig& init,
                           const EvalConfig& eval, std::size_t workers = 1,
                           bool audit_noise = false);

// Finite-difference check of the weighted state loss of one filter rollout
// over the first `steps` rows of `ds`.
ad::GradCheckResult rollout_grad_check(const ModelBundle& bundle,
                                       const SyncedDataset& ds, std::size_t steps,
                                       const StateWeights& weights,
                                       const UkfConfig& ukf, const InitConfig& init,
                                       const ad::GradCheckOptions& options = {});

struct SweepRow {
  std::size_t seq_len = 0;
  std::size_t epochs = 0;
  double final_train_loss = 0.0;
  double best_val = 0.0;
  double test_mse = 0.0;
  double test_mae = 0.0;
  std::size_t test_diverged = 0;
  double mean_epoch_time = 0.0;  // seconds, training only
};

// Fine-tunes `start` once per sequence length (same seed and settings
// otherwise) and scores the best-validation parameters on the test split.
std::vector<SweepRow> sweep_sequence_length(const ModelBundle& start,
                                            const DatasetSplit& split,
                                            const std::vector<std::size_t>& lengths,
                                            const RunConfig& cfg);
std::string render_sweep_csv(const std::vector<SweepRow>& rows);

using NamedBundle = std::pair<std::string, ModelBundle>;

// Every predict/update pairing of `models` scored on `ds`; model ids read
// "<predict>+<update>".
std::vector<MetricsReport> ablate_mixed(const std::vector<NamedBundle>& models,
                                        const SyncedDataset& ds, const RunConfig& cfg,
                                        const std::string& dataset_id);

// "dir/run.json" + "final" -> "dir/run.final.json".
std::string tagged_path(const std::string& path, const std::string& tag);

}  // namespace dukf
