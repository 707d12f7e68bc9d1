#pragma once

// One-step pretraining and fine-tuning through the filter with Adam.

#include <cstdint>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "dukf/data.hpp"
#include "dukf/estimate.hpp"
#include "dukf/evaluation.hpp"
#include "dukf/ukf.hpp"

namespace dukf {

struct TrainConfig {
  double lr = 5e-4;
  std::size_t pretrain_epochs = 1000;
  std::size_t finetune_epochs = 1000;
  std::size_t seq_len = 500;
  std::size_t batch_size = 256;       // sequences per fine-tuning step
  std::size_t pretrain_batch = 512;   // state pairs per pretraining step
  StateWeights state_weights = kTrainWeights;
  double grad_clip = 10.0;
  double max_divergence = 0.1;        // tolerated diverged fraction of a batch
  bool freeze_noise = false;
  bool freeze_dynamics = false;
  std::size_t workers = 1;
  std::size_t val_every = 1;          // epochs between validation passes
  std::size_t val_sequences = 0;      // 0 = every validation window
  std::size_t checkpoint_every = 0;   // 0 = only best and final
  std::uint64_t seed = 1;

  void validate() const;
};

// Mean over time and the four physical states of w_i (xhat_i - x_i)^2.
// `estimates` rows may carry extra trailing states, which are ignored.
ad::Tensor weighted_state_loss(const ad::Tensor& estimates,
                               const ad::Tensor& truths,
                               const StateWeights& weights);
double weighted_state_loss(const StateSeries& estimates,
                           const StateSeries& truths,
                           const StateWeights& weights);

// Stacks posterior means into a T x n tensor (recorded on their tape).
ad::Tensor stack_rows(const std::vector<ad::Tensor>& rows);
ad::Tensor truth_matrix(std::span<const StateRow> rows);

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::size_t step = 0;
  ad::ParameterSet m, v;
};

// Bias-corrected Adam update of every tensor in `params`.
void adam_step(ad::ParameterSet& params, const ad::ParameterSet& grads,
               AdamState& state, double lr);

// Scales `grads` in place so their global norm is at most `max_norm`;
// returns the norm before clipping.
double clip_global_norm(ad::ParameterSet& grads, double max_norm);

enum class Phase { pretrain, finetune };
std::string to_string(Phase p);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based within the phase
  Phase phase = Phase::pretrain;
  double train_loss = 0.0;
  double val_loss = 0.0;  // NaN when not evaluated this epoch
  double wall_time = 0.0; // seconds spent in this epoch
  std::size_t diverged = 0;
};

// Counts of the data each phase consumed; lets callers check that the
// phases stay separate.
struct PhaseCounters {
  std::size_t one_step_batches = 0;
  std::size_t filter_rollouts = 0;
};

struct TrainResult {
  ad::ParameterSet final_params;
  ad::ParameterSet best_params;
  double best_val = 0.0;
  std::size_t best_epoch = 0;
  std::vector<EpochRecord> log;
  PhaseCounters counters;
};

using EpochCallback =
    std::function<void(const EpochRecord&, const ad::ParameterSet& current)>;

// Ground-truth state pairs (x_k, x_{k+1}); the friction column of augmented
// models comes from the tire labels.
struct OneStepData {
  ad::Tensor x;       // N x n
  ad::Tensor x_next;  // N x 4
  std::vector<ControlInput> u;
};
OneStepData one_step_pairs(const SyncedDataset& ds, const ModelBundle& bundle);

double one_step_loss(const ModelBundle& bundle, const OneStepData& data,
                     const StateWeights& weights, double ts);

TrainResult one_step_pretrain(const ModelBundle& bundle,
                              const SyncedDataset& train,
                              const SyncedDataset& val, const TrainConfig& cfg,
                              const UkfConfig& ukf,
                              const EpochCallback& on_epoch = {});

TrainResult ukf_finetune(const ModelBundle& bundle, const SyncedDataset& train,
                         const SyncedDataset& val, const TrainConfig& cfg,
                         const UkfConfig& ukf, const InitConfig& init,
                         const EpochCallback& on_epoch = {});

// Mean filter loss over the validation windows; +inf if any diverges.
double filter_validation_loss(const ModelBundle& bundle, const SyncedDataset& val,
                              std::size_t seq_len, std::size_t max_sequences,
                              const StateWeights& weights, const UkfConfig& ukf,
                              const InitConfig& init, std::size_t workers);

// Appends epoch rows to a CSV file, writing the header on creation.
class TrainingLog {
 public:
  explicit TrainingLog(const std::string& path);
  void append(const EpochRecord& r);

 private:
  std::ofstream out_;
};

}  // namespace dukf
