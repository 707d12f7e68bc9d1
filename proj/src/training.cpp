#include "dukf/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <limits>
#include <numeric>
#include <random>
#include <thread>

#include "dukf/text.hpp"

namespace dukf {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

bool all_finite(const ad::ParameterSet& p) {
  for (const auto& [name, t] : p)
    for (double v : t.values())
      if (!std::isfinite(v)) return false;
  return true;
}

ad::Tensor column(const std::vector<double>& v) {
  return ad::Tensor::matrix(v.size(), 1, v);
}

// Zeroes the gradients of parameter groups excluded from training.
void apply_freeze(ad::ParameterSet& grads, const TrainConfig& cfg) {
  for (const auto& [name, g] : ad::ParameterSet(grads)) {
    const bool is_noise = name.rfind("noise.", 0) == 0;
    if ((is_noise && cfg.freeze_noise) || (!is_noise && cfg.freeze_dynamics))
      grads.set(name, ad::Tensor::zeros(g.shape()));
  }
}

ad::ParameterSet scaled(const ad::ParameterSet& a, double s) {
  ad::ParameterSet out;
  for (const auto& [name, t] : a) {
    std::vector<double> v(t.values().begin(), t.values().end());
    for (double& e : v) e *= s;
    out.add(name, ad::Tensor(t.shape(), std::move(v)));
  }
  return out;
}

void accumulate(std::vector<double>& acc, const ad::ParameterSet& g) {
  const std::vector<double> flat = g.flat();
  if (acc.empty()) acc.assign(flat.size(), 0.0);
  for (std::size_t i = 0; i < flat.size(); ++i) acc[i] += flat[i];
}

ModelBundle with_params(const ModelBundle& bundle, const ad::ParameterSet& p) {
  ModelBundle b = bundle;
  b.params = p;
  return b;
}

// Runs `job(i)` for i in [0, n) on `workers` threads, interleaved by index.
template <class Job>
void parallel_for(std::size_t n, std::size_t workers, Job job) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) job(i);
    return;
  }
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < n; i += workers) job(i);
    });
}

}  // namespace

void TrainConfig::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("train.lr", "must be positive");
  if (seq_len < 2) throw ConfigError("train.seq_len", "must be at least 2");
  if (batch_size == 0) throw ConfigError("train.batch_size", "must be positive");
  if (pretrain_batch == 0) throw ConfigError("train.pretrain_batch", "must be positive");
  for (double w : state_weights)
    if (!(w >= 0.0)) throw ConfigError("train.state_weights", "weights must be non-negative");
  if (!(grad_clip > 0.0)) throw ConfigError("train.grad_clip", "must be positive");
  if (!(max_divergence >= 0.0 && max_divergence <= 1.0))
    throw ConfigError("train.max_divergence", "must lie in [0, 1]");
  if (workers == 0) throw ConfigError("train.workers", "must be at least 1");
  if (val_every == 0) throw ConfigError("train.val_every", "must be at least 1");
}

ad::Tensor weighted_state_loss(const ad::Tensor& estimates,
                               const ad::Tensor& truths,
                               const StateWeights& weights) {
  if (estimates.shape().rank != 2 || truths.shape().rank != 2)
    throw ShapeError("state loss expects T x n matrices");
  if (estimates.shape().rows() != truths.shape().rows())
    throw ShapeError("state loss: " + std::to_string(estimates.shape().rows()) +
                     " estimates vs " + std::to_string(truths.shape().rows()) +
                     " truth rows");
  if (estimates.shape().cols() < kStateDim || truths.shape().cols() != kStateDim)
    throw ShapeError("state loss needs at least four estimate columns and four truth columns");
  for (double w : weights)
    if (!(w >= 0.0)) throw ConfigError("train.state_weights", "weights must be non-negative");
  const ad::Tensor e = ad::slice(estimates, 1, 0, kStateDim) - truths;
  const ad::Tensor w = ad::Tensor::vector({weights.begin(), weights.end()});
  return ad::mean(ad::square(e) * w);
}

double weighted_state_loss(const StateSeries& estimates, const StateSeries& truths,
                           const StateWeights& weights) {
  if (estimates.size() != truths.size())
    throw ShapeError("state loss: " + std::to_string(estimates.size()) +
                     " estimates vs " + std::to_string(truths.size()) + " truth rows");
  if (estimates.empty()) throw ShapeError("state loss of an empty sequence");
  double acc = 0.0;
  for (std::size_t k = 0; k < estimates.size(); ++k)
    for (std::size_t i = 0; i < kStateDim; ++i) {
      const double d = estimates[k][i] - truths[k][i];
      acc += weights[i] * d * d;
    }
  return acc / static_cast<double>(estimates.size() * kStateDim);
}

ad::Tensor stack_rows(const std::vector<ad::Tensor>& rows) {
  if (rows.empty()) throw ShapeError("no rows to stack");
  const std::size_t n = rows.front().size();
  return ad::reshape(ad::concat(std::span<const ad::Tensor>(rows), 0),
                     ad::Shape::matrix(rows.size(), n));
}

ad::Tensor truth_matrix(std::span<const StateRow> rows) {
  std::vector<double> v;
  v.reserve(rows.size() * kStateDim);
  for (const auto& r : rows) v.insert(v.end(), r.begin(), r.end());
  return ad::Tensor::matrix(rows.size(), kStateDim, std::move(v));
}

void adam_step(ad::ParameterSet& params, const ad::ParameterSet& grads,
               AdamState& state, double lr) {
  if (grads.size() != params.size())
    throw ShapeError("gradient set has " + std::to_string(grads.size()) +
                     " tensors for " + std::to_string(params.size()) + " parameters");
  for (const auto& [name, p] : params) {
    if (!grads.contains(name)) throw ShapeError("no gradient for '" + name + "'");
    if (!(grads.at(name).shape() == p.shape()))
      throw ShapeError("gradient of '" + name + "' has shape " +
                       grads.at(name).shape().str() + ", parameter " + p.shape().str());
  }
  if (state.step == 0) {
    state.m = params.zeros_like();
    state.v = params.zeros_like();
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (const auto& [name, p] : ad::ParameterSet(params)) {
    const auto g = grads.at(name).values();
    std::vector<double> m(state.m.at(name).values().begin(), state.m.at(name).values().end());
    std::vector<double> v(state.v.at(name).values().begin(), state.v.at(name).values().end());
    std::vector<double> x(p.values().begin(), p.values().end());
    for (std::size_t i = 0; i < x.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      x[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + state.eps);
    }
    state.m.set(name, ad::Tensor(p.shape(), std::move(m)));
    state.v.set(name, ad::Tensor(p.shape(), std::move(v)));
    params.set(name, ad::Tensor(p.shape(), std::move(x)));
  }
}

double clip_global_norm(ad::ParameterSet& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, g] : grads)
    for (double v : g.values()) sq += v * v;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) grads = scaled(grads, max_norm / norm);
  return norm;
}

std::string to_string(Phase p) {
  return p == Phase::pretrain ? "pretrain" : "finetune";
}

// ---- pretraining -------------------------------------------------------------------

OneStepData one_step_pairs(const SyncedDataset& ds, const ModelBundle& bundle) {
  if (!ds.has_truth()) throw DataError("pretraining needs ground-truth states");
  if (ds.size() < 2) throw DataError("pretraining needs at least two rows");
  const bool augmented = bundle.dynamics.augmented;
  if (augmented && ds.labels.empty())
    throw DataError("friction-augmented pretraining needs tire labels");
  const std::size_t n = ds.size() - 1, dim = bundle.state_dim();
  std::vector<double> x, next;
  x.reserve(n * dim);
  next.reserve(n * kStateDim);
  OneStepData out;
  for (std::size_t k = 0; k < n; ++k) {
    x.insert(x.end(), ds.truth[k].begin(), ds.truth[k].end());
    if (augmented) x.push_back(friction_for_label(ds.labels[k]));
    next.insert(next.end(), ds.truth[k + 1].begin(), ds.truth[k + 1].end());
    out.u.push_back(ds.u[k]);
  }
  out.x = ad::Tensor::matrix(n, dim, std::move(x));
  out.x_next = ad::Tensor::matrix(n, kStateDim, std::move(next));
  return out;
}

namespace {

ad::Tensor one_step_batch_loss(const ModelBundle& bundle,
                               const ad::ParameterSet& params,
                               const ad::Tensor& x, const ad::Tensor& x_next,
                               const std::vector<ControlInput>& u,
                               const StateWeights& weights, double ts) {
  const BoundDynamics dyn(bundle.dynamics, params);
  std::vector<double> delta(u.size()), iq(u.size());
  for (std::size_t i = 0; i < u.size(); ++i) {
    delta[i] = u[i].delta;
    iq[i] = u[i].iq;
  }
  const Control uc{column(delta), column(iq)};
  const ad::Tensor pred = rk4_step(
      [&](const ad::Tensor& s) { return dyn.derivative(s, uc); }, x, ts);
  return weighted_state_loss(pred, x_next, weights);
}

ad::Tensor gather_rows(const ad::Tensor& m, std::span<const std::size_t> idx) {
  const std::size_t cols = m.shape().cols();
  std::vector<double> v;
  v.reserve(idx.size() * cols);
  for (std::size_t i : idx)
    for (std::size_t c = 0; c < cols; ++c) v.push_back(m.at(i, c));
  return ad::Tensor::matrix(idx.size(), cols, std::move(v));
}

}  // namespace

double one_step_loss(const ModelBundle& bundle, const OneStepData& data,
                     const StateWeights& weights, double ts) {
  return one_step_batch_loss(bundle, bundle.params, data.x, data.x_next, data.u,
                             weights, ts)
      .item();
}

TrainResult one_step_pretrain(const ModelBundle& bundle,
                              const SyncedDataset& train,
                              const SyncedDataset& val, const TrainConfig& cfg,
                              const UkfConfig& ukf, const EpochCallback& on_epoch) {
  cfg.validate();
  bundle.validate();
  const OneStepData data = one_step_pairs(train, bundle);
  const bool has_val = val.size() >= 2;
  const OneStepData val_data = has_val ? one_step_pairs(val, bundle) : OneStepData{};

  TrainResult res;
  ad::ParameterSet params = bundle.params;
  res.best_params = params;
  res.best_val = std::numeric_limits<double>::quiet_NaN();
  AdamState adam;
  std::mt19937_64 rng(cfg.seed);
  const std::size_t n = data.u.size();
  std::vector<std::size_t> order(n);

  for (std::size_t epoch = 1; epoch <= cfg.pretrain_epochs; ++epoch) {
    const auto t0 = Clock::now();
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < n; b += cfg.pretrain_batch) {
      const std::span<const std::size_t> idx(order.data() + b,
                                             std::min(cfg.pretrain_batch, n - b));
      std::vector<ControlInput> u;
      for (std::size_t i : idx) u.push_back(data.u[i]);
      ad::Tape tape;
      const ad::ParameterSet bound = params.bind(tape);
      ad::Tensor loss;
      try {
        loss = one_step_batch_loss(bundle, bound, gather_rows(data.x, idx),
                                   gather_rows(data.x_next, idx), u,
                                   cfg.state_weights, ukf.ts);
      } catch (const NumericError& e) {
        throw TrainingError("pretraining diverged in epoch " + std::to_string(epoch) +
                            ": " + e.what());
      }
      ad::ParameterSet grads = ad::backward(loss, bound);
      if (!all_finite(grads))
        throw TrainingError("pretraining produced a non-finite gradient in epoch " +
                            std::to_string(epoch));
      adam_step(params, grads, adam, cfg.lr);
      loss_sum += loss.item() * static_cast<double>(idx.size());
      ++res.counters.one_step_batches;
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.phase = Phase::pretrain;
    rec.train_loss = loss_sum / static_cast<double>(n);
    rec.wall_time = seconds_since(t0);
    rec.val_loss = std::numeric_limits<double>::quiet_NaN();
    if (!std::isfinite(rec.train_loss))
      throw TrainingError("pretraining loss is not finite in epoch " +
                          std::to_string(epoch));
    if (has_val && (epoch % cfg.val_every == 0 || epoch == cfg.pretrain_epochs)) {
      try {
        rec.val_loss = one_step_loss(with_params(bundle, params), val_data,
                                     cfg.state_weights, ukf.ts);
      } catch (const NumericError&) {
        rec.val_loss = std::numeric_limits<double>::infinity();
      }
      if (std::isnan(res.best_val) || rec.val_loss < res.best_val) {
        res.best_val = rec.val_loss;
        res.best_params = params;
        res.best_epoch = epoch;
      }
    }
    res.log.push_back(rec);
    if (on_epoch) on_epoch(rec, params);
  }
  res.final_params = params;
  if (!has_val) {
    res.best_params = params;
    res.best_epoch = cfg.pretrain_epochs;
  }
  return res;
}

// ---- fine-tuning -------------------------------------------------------------------

double filter_validation_loss(const ModelBundle& bundle, const SyncedDataset& val,
                              std::size_t seq_len, std::size_t max_sequences,
                              const StateWeights& weights, const UkfConfig& ukf,
                              const InitConfig& init, std::size_t workers) {
  SyncedDataset ds = val;
  const std::size_t count = val.size() / seq_len;
  if (count == 0) return std::numeric_limits<double>::quiet_NaN();
  if (max_sequences > 0 && count > max_sequences)
    ds = val.slice(0, max_sequences * seq_len);
  EstimateOptions opts;
  opts.sequence_rows = seq_len;
  opts.workers = workers;
  const auto est = estimate_sequences(bundle, ds, ukf, init, opts);
  double acc = 0.0;
  for (const auto& e : est) {
    if (e.diverged) return std::numeric_limits<double>::infinity();
    const StateSeries truth(ds.truth.begin() + e.start,
                            ds.truth.begin() + e.start + e.means.size());
    acc += weighted_state_loss(e.means, truth, weights);
  }
  return acc / static_cast<double>(est.size());
}

TrainResult ukf_finetune(const ModelBundle& bundle, const SyncedDataset& train,
                         const SyncedDataset& val, const TrainConfig& cfg,
                         const UkfConfig& ukf, const InitConfig& init,
                         const EpochCallback& on_epoch) {
  cfg.validate();
  bundle.validate();
  if (!train.has_truth()) throw DataError("fine-tuning needs ground-truth states");
  if (train.size() < cfg.seq_len)
    throw DataError("training set of " + std::to_string(train.size()) +
                    " rows is shorter than one " + std::to_string(cfg.seq_len) +
                    "-step sequence");
  const bool has_val = val.has_truth() && val.size() >= cfg.seq_len;

  TrainResult res;
  ad::ParameterSet params = bundle.params;
  res.best_params = params;
  res.best_val = std::numeric_limits<double>::quiet_NaN();
  AdamState adam;
  std::mt19937_64 rng(cfg.seed);

  struct SeqResult {
    double loss = 0.0;
    ad::ParameterSet grads;
    bool diverged = false;
  };

  for (std::size_t epoch = 1; epoch <= cfg.finetune_epochs; ++epoch) {
    const auto t0 = Clock::now();
    std::vector<std::size_t> starts = random_slice_starts(train.size(), cfg.seq_len, rng);
    std::shuffle(starts.begin(), starts.end(), rng);
    if (starts.size() > cfg.batch_size) starts.resize(cfg.batch_size);
    const std::size_t n = starts.size();

    std::vector<SeqResult> results(n);
    parallel_for(n, cfg.workers, [&](std::size_t i) {
      const std::size_t s = starts[i];
      SeqResult& r = results[i];
      try {
        ad::Tape tape;
        const ad::ParameterSet bound = params.bind(tape);
        const FilterModel model = make_filter_model(bundle, bound, ukf);
        const GaussianBelief b0 = initial_belief(train.y[s], init, bundle, ukf);
        const Trajectory tr = run_sequence(
            b0, std::span(train.u).subspan(s, cfg.seq_len),
            std::span(train.y).subspan(s, cfg.seq_len), model, ukf);
        const ad::Tensor loss = weighted_state_loss(
            stack_rows(tr.means),
            truth_matrix(std::span(train.truth).subspan(s, cfg.seq_len)),
            cfg.state_weights);
        r.loss = loss.item();
        r.grads = ad::backward(loss, bound);
        r.diverged = !std::isfinite(r.loss) || !all_finite(r.grads);
      } catch (const FilterDivergence&) {
        r.diverged = true;
      } catch (const NumericError&) {
        r.diverged = true;
      }
    });
    res.counters.filter_rollouts += n;

    // Reduction in sequence-index order keeps results bit-identical for any
    // number of workers.
    std::vector<double> acc;
    double loss_sum = 0.0;
    std::size_t ok = 0, diverged = 0;
    for (const SeqResult& r : results) {
      if (r.diverged) {
        ++diverged;
        continue;
      }
      accumulate(acc, r.grads);
      loss_sum += r.loss;
      ++ok;
    }
    if (static_cast<double>(diverged) > cfg.max_divergence * static_cast<double>(n) ||
        ok == 0)
      throw TrainingError("fine-tuning epoch " + std::to_string(epoch) + ": " +
                          std::to_string(diverged) + " of " + std::to_string(n) +
                          " sequences diverged");
    for (double& g : acc) g /= static_cast<double>(ok);
    ad::ParameterSet grads = params.zeros_like();
    grads.assign_flat(acc);
    apply_freeze(grads, cfg);
    clip_global_norm(grads, cfg.grad_clip);
    adam_step(params, grads, adam, cfg.lr);

    EpochRecord rec;
    rec.epoch = epoch;
    rec.phase = Phase::finetune;
    rec.train_loss = loss_sum / static_cast<double>(ok);
    rec.diverged = diverged;
    rec.wall_time = seconds_since(t0);
    rec.val_loss = std::numeric_limits<double>::quiet_NaN();
    if (has_val && (epoch % cfg.val_every == 0 || epoch == cfg.finetune_epochs)) {
      rec.val_loss = filter_validation_loss(with_params(bundle, params), val,
                                            cfg.seq_len, cfg.val_sequences,
                                            cfg.state_weights, ukf, init, cfg.workers);
      if (std::isnan(res.best_val) || rec.val_loss < res.best_val) {
        res.best_val = rec.val_loss;
        res.best_params = params;
        res.best_epoch = epoch;
      }
    }
    res.log.push_back(rec);
    if (on_epoch) on_epoch(rec, params);
  }
  res.final_params = params;
  if (!has_val || res.best_epoch == 0) {
    res.best_params = params;
    res.best_epoch = cfg.finetune_epochs;
  }
  return res;
}

TrainingLog::TrainingLog(const std::string& path) {
  const bool fresh = !std::filesystem::exists(path) || std::filesystem::file_size(path) == 0;
  out_.open(path, std::ios::app);
  if (!out_) throw DataError("cannot write training log '" + path + "'");
  if (fresh) out_ << "epoch,phase,train_loss,val_loss,wall_time\n";
}

void TrainingLog::append(const EpochRecord& r) {
  out_ << r.epoch << ',' << to_string(r.phase) << ',' << format_double(r.train_loss)
       << ',' << (std::isnan(r.val_loss) ? std::string() : format_double(r.val_loss))
       << ',' << format_double(r.wall_time) << '\n';
  out_.flush();
}

}  // namespace dukf
