#include "dukf/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "dukf/text.hpp"

namespace dukf {

namespace {

const std::array<const char*, kStateDim> kStateNames{"vx", "vy", "r", "omega_s"};

}  // namespace

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw DataError("quantile of an empty set");
  if (!(q >= 0.0 && q <= 1.0)) throw DataError("quantile level outside [0, 1]");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

MetricsReport compute_metrics(const std::vector<StateSeries>& estimates,
                              const std::vector<StateSeries>& truths,
                              const MetricsOptions& opts) {
  if (estimates.empty()) throw DataError("no sequences to evaluate");
  if (estimates.size() != truths.size())
    throw DataError("got " + std::to_string(estimates.size()) +
                    " estimate sequences for " + std::to_string(truths.size()) +
                    " ground-truth sequences");
  for (double w : opts.weights)
    if (!(w >= 0.0)) throw DataError("state weights must be non-negative");

  std::vector<double> abs_err;
  double sq_sum = 0.0;
  StateRow state_sq{}, state_abs{};
  for (std::size_t s = 0; s < estimates.size(); ++s) {
    const StateSeries& e = estimates[s];
    const StateSeries& x = truths[s];
    if (e.size() != x.size())
      throw DataError("sequence " + std::to_string(s) + ": " +
                      std::to_string(e.size()) + " estimates vs " +
                      std::to_string(x.size()) + " truth rows");
    for (std::size_t k = opts.burn_in; k < e.size(); ++k) {
      double sq = 0.0, ab = 0.0;
      for (std::size_t i = 0; i < kStateDim; ++i) {
        const double d = e[k][i] - x[k][i];
        if (!std::isfinite(d))
          throw NumericError("non-finite estimate error in sequence " +
                             std::to_string(s) + " at step " + std::to_string(k));
        sq += opts.weights[i] * d * d;
        ab += opts.weights[i] * std::fabs(d);
        state_sq[i] += d * d;
        state_abs[i] += std::fabs(d);
      }
      sq_sum += sq;
      abs_err.push_back(ab);
    }
  }
  if (abs_err.empty()) throw DataError("no samples left after burn-in");

  MetricsReport r;
  r.sequences = estimates.size();
  r.samples = abs_err.size();
  const double n = static_cast<double>(abs_err.size());
  r.mse = sq_sum / n;
  double ab_sum = 0.0;
  for (double a : abs_err) ab_sum += a;
  r.mae = ab_sum / n;
  r.ae99 = quantile(std::move(abs_err), 0.99);
  for (std::size_t i = 0; i < kStateDim; ++i) {
    r.state_mse[i] = state_sq[i] / n;
    r.state_mae[i] = state_abs[i] / n;
  }
  return r;
}

ReportFormat parse_report_format(const std::string& name) {
  if (name == "csv") return ReportFormat::csv;
  if (name == "json") return ReportFormat::json;
  throw ConfigError("report.format", "expected csv or json, got '" + name + "'");
}

ReportFormat format_from_path(const std::string& path) {
  const auto dot = path.rfind('.');
  if (dot != std::string::npos && path.substr(dot) == ".json") return ReportFormat::json;
  return ReportFormat::csv;
}

std::string render_report(const std::vector<MetricsReport>& reports,
                          ReportFormat format) {
  if (reports.empty()) throw DataError("no reports to write");
  std::ostringstream out;
  if (format == ReportFormat::csv) {
    out << "model,dataset,sequences,samples,mse,mae,ae99";
    for (const char* s : kStateNames) out << ",mse_" << s;
    for (const char* s : kStateNames) out << ",mae_" << s;
    out << '\n';
    for (const auto& r : reports) {
      out << r.model_id << ',' << r.dataset_id << ',' << r.sequences << ','
          << r.samples << ',' << format_double(r.mse) << ','
          << format_double(r.mae) << ',' << format_double(r.ae99);
      for (double v : r.state_mse) out << ',' << format_double(v);
      for (double v : r.state_mae) out << ',' << format_double(v);
      out << '\n';
    }
    return out.str();
  }
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& r : reports) {
    nlohmann::ordered_json j;
    j["model"] = r.model_id;
    j["dataset"] = r.dataset_id;
    j["sequences"] = r.sequences;
    j["samples"] = r.samples;
    j["mse"] = r.mse;
    j["mae"] = r.mae;
    j["ae99"] = r.ae99;
    for (std::size_t i = 0; i < kStateDim; ++i) {
      j["state_mse"][kStateNames[i]] = r.state_mse[i];
      j["state_mae"][kStateNames[i]] = r.state_mae[i];
    }
    arr.push_back(std::move(j));
  }
  return arr.dump(2) + "\n";
}

void emit_report(const std::vector<MetricsReport>& reports,
                 const std::string& path, ReportFormat format) {
  const std::string body = render_report(reports, format);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write report '" + path + "'");
  out << body;
  if (!out) throw DataError("failed writing report '" + path + "'");
}

std::vector<MetricsReport> read_report_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open report '" + path + "'");
  std::vector<MetricsReport> out;
  try {
    const nlohmann::json arr = nlohmann::json::parse(in);
    for (const auto& j : arr) {
      MetricsReport r;
      r.model_id = j.at("model").get<std::string>();
      r.dataset_id = j.at("dataset").get<std::string>();
      r.sequences = j.at("sequences").get<std::size_t>();
      r.samples = j.at("samples").get<std::size_t>();
      r.mse = j.at("mse").get<double>();
      r.mae = j.at("mae").get<double>();
      r.ae99 = j.at("ae99").get<double>();
      for (std::size_t i = 0; i < kStateDim; ++i) {
        r.state_mse[i] = j.at("state_mse").at(kStateNames[i]).get<double>();
        r.state_mae[i] = j.at("state_mae").at(kStateNames[i]).get<double>();
      }
      out.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("report '" + path + "': " + e.what());
  }
  return out;
}

}  // namespace dukf
