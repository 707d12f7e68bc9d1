#pragma once

// Weighted estimation metrics over sets of sequences and CSV/JSON reports.

#include <array>
#include <string>
#include <vector>

#include "dukf/data.hpp"

namespace dukf {

using StateWeights = std::array<double, kStateDim>;

inline constexpr StateWeights kTrainWeights{0.223, 0.506, 0.157, 0.114};
inline constexpr StateWeights kEvalWeights{0.223, 0.506, 0.157, 0.0};

using StateSeries = std::vector<StateRow>;

struct MetricsReport {
  std::string model_id;
  std::string dataset_id;
  std::size_t sequences = 0;
  std::size_t samples = 0;
  double mse = 0.0;
  double mae = 0.0;
  double ae99 = 0.0;
  StateRow state_mse{};  // unweighted, per state
  StateRow state_mae{};
};

struct MetricsOptions {
  StateWeights weights = kEvalWeights;
  std::size_t burn_in = 0;  // leading samples dropped from every sequence
};

// Per timestep e = xhat - x: MSE = mean of sum_i w_i e_i^2, MAE = mean of
// sum_i w_i |e_i|, 99%-AE = linear-interpolated 0.99 quantile of the latter.
MetricsReport compute_metrics(const std::vector<StateSeries>& estimates,
                              const std::vector<StateSeries>& truths,
                              const MetricsOptions& opts = {});

// Quantile with linear interpolation between order statistics (q in [0, 1]).
double quantile(std::vector<double> values, double q);

enum class ReportFormat { csv, json };

ReportFormat parse_report_format(const std::string& name);
ReportFormat format_from_path(const std::string& path);

std::string render_report(const std::vector<MetricsReport>& reports,
                          ReportFormat format);
void emit_report(const std::vector<MetricsReport>& reports,
                 const std::string& path, ReportFormat format);
std::vector<MetricsReport> read_report_json(const std::string& path);

}  // namespace dukf
