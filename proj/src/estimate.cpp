#include "dukf/estimate.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <fstream>
#include <map>
#include <thread>

#include "dukf/text.hpp"

namespace dukf {

namespace {

void audit_covariance(const ad::Tensor& c, double& min_eig, double& asym) {
  const std::size_t n = c.shape().rows();
  Eigen::MatrixXd m(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      m(i, j) = c.at(i, j);
      asym = std::max(asym, std::fabs(c.at(i, j) - c.at(j, i)));
    }
  min_eig = std::min(
      min_eig, Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(m, Eigen::EigenvaluesOnly)
                   .eigenvalues()
                   .minCoeff());
}

SequenceEstimate run_window(const ModelBundle& bundle, const FilterModel& model,
                            const SyncedDataset& ds, std::size_t start,
                            std::size_t rows, const UkfConfig& ukf,
                            const InitConfig& init, NoiseAudit* audit) {
  SequenceEstimate out;
  out.start = start;
  const std::span<const ControlInput> u(ds.u.data() + start, rows);
  const std::span<const Measurement> y(ds.y.data() + start, rows);
  try {
    const GaussianBelief b0 = initial_belief(y[0], init, bundle, ukf);
    const Trajectory tr = run_sequence(b0, u, y, model, ukf);
    out.means.reserve(rows);
    for (const ad::Tensor& m : tr.means) {
      out.means.push_back({m[0], m[1], m[2], m[3]});
      if (m.size() > kStateDim) out.mu.push_back(m[kStateDim]);
      if (audit) {
        audit_covariance(model.process_cov(m), audit->min_eig_r, audit->max_asymmetry);
        audit_covariance(model.measurement_cov(m), audit->min_eig_q,
                         audit->max_asymmetry);
        ++audit->evaluations;
      }
    }
  } catch (const FilterDivergence& e) {
    out.means.clear();
    out.mu.clear();
    out.diverged = true;
    out.error = e.what();
  }
  return out;
}

}  // namespace

void NoiseAudit::merge(const NoiseAudit& o) {
  min_eig_r = std::min(min_eig_r, o.min_eig_r);
  min_eig_q = std::min(min_eig_q, o.min_eig_q);
  max_asymmetry = std::max(max_asymmetry, o.max_asymmetry);
  evaluations += o.evaluations;
}

std::vector<SequenceEstimate> estimate_sequences(const ModelBundle& bundle,
                                                 const SyncedDataset& ds,
                                                 const UkfConfig& ukf,
                                                 const InitConfig& init,
                                                 const EstimateOptions& opts,
                                                 NoiseAudit* audit) {
  if (opts.sequence_rows < 2) throw ConfigError("eval.sequence_rows", "must be at least 2");
  if (opts.workers == 0) throw ConfigError("workers", "must be at least 1");
  if (ds.size() < opts.sequence_rows)
    throw DataError("dataset of " + std::to_string(ds.size()) +
                    " rows is shorter than one " +
                    std::to_string(opts.sequence_rows) + "-row sequence");
  const FilterModel model = make_filter_model(bundle, bundle.params, ukf);
  const std::size_t count = ds.size() / opts.sequence_rows;
  std::vector<SequenceEstimate> out(count);
  std::vector<NoiseAudit> audits(count);
  auto job = [&](std::size_t w) {
    for (std::size_t i = w; i < count; i += opts.workers)
      out[i] = run_window(bundle, model, ds, i * opts.sequence_rows,
                          opts.sequence_rows, ukf, init,
                          audit ? &audits[i] : nullptr);
  };
  if (opts.workers == 1) {
    job(0);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < opts.workers; ++w) pool.emplace_back(job, w);
  }
  if (audit)
    for (const auto& a : audits) audit->merge(a);
  return out;
}

std::vector<StateSeries> truth_windows(const SyncedDataset& ds,
                                       const std::vector<SequenceEstimate>& est) {
  if (!ds.has_truth()) throw DataError("dataset has no ground truth");
  std::vector<StateSeries> out;
  for (const auto& e : est) {
    if (e.diverged) continue;
    if (e.start + e.means.size() > ds.size())
      throw DataError("estimate window beyond the end of the dataset");
    out.emplace_back(ds.truth.begin() + e.start,
                     ds.truth.begin() + e.start + e.means.size());
  }
  return out;
}

MetricsReport evaluate_estimates(const SyncedDataset& ds,
                                 const std::vector<SequenceEstimate>& est,
                                 const MetricsOptions& opts, bool require_all) {
  std::vector<StateSeries> means;
  for (std::size_t i = 0; i < est.size(); ++i) {
    if (est[i].diverged) {
      if (require_all)
        throw FilterDivergence(est[i].start, "sequence " + std::to_string(i) +
                                                 ": " + est[i].error);
      continue;
    }
    means.push_back(est[i].means);
  }
  return compute_metrics(means, truth_windows(ds, est), opts);
}

void write_estimates_csv(const SyncedDataset& ds,
                         const std::vector<SequenceEstimate>& est,
                         const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << "sequence,row,t,vx,vy,r,omega_s,mu,status\n";
  for (std::size_t s = 0; s < est.size(); ++s) {
    const SequenceEstimate& e = est[s];
    if (e.diverged) {
      out << s << ',' << e.start << ',' << format_double(ds.t[e.start])
          << ",nan,nan,nan,nan,nan,diverged\n";
      continue;
    }
    for (std::size_t k = 0; k < e.means.size(); ++k) {
      out << s << ',' << e.start + k << ',' << format_double(ds.t[e.start + k]);
      for (double v : e.means[k]) out << ',' << format_double(v);
      out << ',' << (e.mu.empty() ? std::string("nan") : format_double(e.mu[k]))
          << ",ok\n";
    }
  }
  if (!out) throw DataError("failed writing '" + path + "'");
}

std::vector<SequenceEstimate> read_estimates_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open estimates '" + path + "'");
  std::string line;
  std::getline(in, line);
  if (trim(line) != "sequence,row,t,vx,vy,r,omega_s,mu,status")
    throw DataError("'" + path + "' is not an estimates file");
  std::map<std::size_t, SequenceEstimate> seqs;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 9)
      throw DataError("line " + std::to_string(line_no) + ": expected 9 fields");
    try {
      const auto s = static_cast<std::size_t>(std::stoull(cells[0]));
      const auto row = static_cast<std::size_t>(std::stoull(cells[1]));
      auto [it, fresh] = seqs.try_emplace(s);
      SequenceEstimate& e = it->second;
      if (fresh) e.start = row;
      if (cells[8] == "diverged") {
        e.diverged = true;
        e.error = "diverged during estimation";
        continue;
      }
      if (row != e.start + e.means.size())
        throw DataError("line " + std::to_string(line_no) + ": rows not contiguous");
      e.means.push_back({parse_double(cells[3]), parse_double(cells[4]),
                         parse_double(cells[5]), parse_double(cells[6])});
      const double mu = parse_double(cells[7]);
      if (!std::isnan(mu)) e.mu.push_back(mu);
    } catch (const std::invalid_argument& ex) {
      throw DataError("line " + std::to_string(line_no) + ": " + ex.what());
    }
  }
  std::vector<SequenceEstimate> out;
  for (auto& [s, e] : seqs) out.push_back(std::move(e));
  return out;
}

}  // namespace dukf
