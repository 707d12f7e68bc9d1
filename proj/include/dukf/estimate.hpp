#pragma once

// Running a trained filter over datasets sequence by sequence.

#include <limits>
#include <string>
#include <vector>

#include "dukf/data.hpp"
#include "dukf/evaluation.hpp"
#include "dukf/ukf.hpp"

namespace dukf {

struct SequenceEstimate {
  std::size_t start = 0;  // first dataset row
  StateSeries means;
  std::vector<double> mu;  // friction estimate per step, empty without the state
  bool diverged = false;
  std::string error;
};

// Smallest eigenvalues of R and Q seen at the posterior means.
struct NoiseAudit {
  double min_eig_r = std::numeric_limits<double>::infinity();
  double min_eig_q = std::numeric_limits<double>::infinity();
  double max_asymmetry = 0.0;
  std::size_t evaluations = 0;

  void merge(const NoiseAudit& o);
};

struct EstimateOptions {
  std::size_t sequence_rows = kEvalSequenceRows;
  std::size_t workers = 1;
  bool audit_noise = false;
};

// Splits `ds` into consecutive windows of `sequence_rows` and filters each
// from a fresh initial belief. Diverged windows are reported, not thrown.
std::vector<SequenceEstimate> estimate_sequences(const ModelBundle& bundle,
                                                 const SyncedDataset& ds,
                                                 const UkfConfig& ukf,
                                                 const InitConfig& init,
                                                 const EstimateOptions& opts = {},
                                                 NoiseAudit* audit = nullptr);

// Ground-truth windows matching the estimates.
std::vector<StateSeries> truth_windows(const SyncedDataset& ds,
                                       const std::vector<SequenceEstimate>& est);

// Metrics over the non-diverged windows; throws FilterDivergence naming the
// first diverged window when `require_all` is set.
MetricsReport evaluate_estimates(const SyncedDataset& ds,
                                 const std::vector<SequenceEstimate>& est,
                                 const MetricsOptions& opts,
                                 bool require_all = true);

void write_estimates_csv(const SyncedDataset& ds,
                         const std::vector<SequenceEstimate>& est,
                         const std::string& path);
std::vector<SequenceEstimate> read_estimates_csv(const std::string& path);

}  // namespace dukf
