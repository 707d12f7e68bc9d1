#include "dukf/noise.hpp"

#include <cctype>

namespace dukf {

namespace {

std::vector<double> tril_diagonal(const std::vector<double>& diag) {
  const std::size_t n = diag.size();
  std::vector<double> entries(tril_count(n), 0.0);
  for (std::size_t i = 0; i < n; ++i) entries[i * (i + 1) / 2 + i] = diag[i];
  return entries;
}

}  // namespace

std::string to_string(NoiseMode mode) {
  return mode == NoiseMode::homoscedastic ? "homoscedastic" : "heteroscedastic";
}

NoiseMode parse_noise_mode(const std::string& name) {
  std::string lower;
  for (char c : name) lower.push_back(static_cast<char>(std::tolower(c)));
  if (lower == "homoscedastic" || lower == "homo") return NoiseMode::homoscedastic;
  if (lower == "heteroscedastic" || lower == "hetero")
    return NoiseMode::heteroscedastic;
  throw ConfigError("noise.mode", "unknown noise mode '" + name +
                                      "' (expected homoscedastic or "
                                      "heteroscedastic)");
}

void NoiseConfig::validate() const {
  if (n_x == 0 || n_y == 0)
    throw ConfigError("noise", "state and measurement dimensions must be positive");
  if (process_diag.size() != n_x)
    throw ConfigError("noise.process_diag",
                      "expected " + std::to_string(n_x) + " entries, got " +
                          std::to_string(process_diag.size()));
  if (measurement_diag.size() != n_y)
    throw ConfigError("noise.measurement_diag",
                      "expected " + std::to_string(n_y) + " entries, got " +
                          std::to_string(measurement_diag.size()));
  if (state_scales.size() != n_x)
    throw ConfigError("noise.state_scales",
                      "expected " + std::to_string(n_x) + " entries");
  for (double d : process_diag)
    if (!(d > 0.0)) throw ConfigError("noise.process_diag", "entries must be positive");
  for (double d : measurement_diag)
    if (!(d > 0.0))
      throw ConfigError("noise.measurement_diag", "entries must be positive");
  for (double d : state_scales)
    if (!(d > 0.0)) throw ConfigError("noise.state_scales", "entries must be positive");
  if (!(epsilon > 0.0)) throw ConfigError("noise.epsilon", "must be positive");
}

NoiseConfig default_noise_config(NoiseMode mode, std::size_t n_x) {
  NoiseConfig cfg;
  cfg.mode = mode;
  cfg.n_x = n_x;
  cfg.process_diag.resize(n_x, 0.1);
  cfg.state_scales.resize(n_x, 1.0);
  if (n_x == 5) cfg.process_diag[4] = 0.01;
  return cfg;
}

ad::ParameterSet init_noise(const NoiseConfig& cfg) {
  cfg.validate();
  ad::ParameterSet out;
  const auto r_entries = tril_diagonal(cfg.process_diag);
  const auto q_entries = tril_diagonal(cfg.measurement_diag);
  if (cfg.mode == NoiseMode::homoscedastic) {
    out.add("noise.l_r", ad::Tensor::vector(r_entries));
    out.add("noise.l_q", ad::Tensor::vector(q_entries));
  } else {
    out.add("noise.w_r", ad::Tensor::zeros(
                             ad::Shape::matrix(r_entries.size(), cfg.n_x)));
    out.add("noise.b_r", ad::Tensor::vector(r_entries));
    out.add("noise.w_q", ad::Tensor::zeros(
                             ad::Shape::matrix(q_entries.size(), cfg.n_x)));
    out.add("noise.b_q", ad::Tensor::vector(q_entries));
  }
  return out;
}

BoundNoise::BoundNoise(const NoiseConfig& cfg, const ad::ParameterSet& params)
    : cfg_(cfg) {
  cfg_.validate();
  auto expect = [&](const std::string& name, const ad::Shape& shape) {
    const ad::Tensor& t = params.at(name);
    if (!(t.shape() == shape))
      throw ShapeError("noise parameter '" + name + "' has shape " +
                       t.shape().str() + ", expected " + shape.str());
    return t;
  };
  const std::size_t tr = tril_count(cfg_.n_x);
  const std::size_t tq = tril_count(cfg_.n_y);
  if (cfg_.mode == NoiseMode::homoscedastic) {
    b_r_ = expect("noise.l_r", ad::Shape::vector(tr));
    b_q_ = expect("noise.l_q", ad::Shape::vector(tq));
  } else {
    w_r_ = expect("noise.w_r", ad::Shape::matrix(tr, cfg_.n_x));
    b_r_ = expect("noise.b_r", ad::Shape::vector(tr));
    w_q_ = expect("noise.w_q", ad::Shape::matrix(tq, cfg_.n_x));
    b_q_ = expect("noise.b_q", ad::Shape::vector(tq));
    std::vector<double> inv(cfg_.n_x);
    for (std::size_t i = 0; i < inv.size(); ++i)
      inv[i] = 1.0 / cfg_.state_scales[i];
    scales_ = ad::Tensor::vector(inv);
  }
}

ad::Tensor BoundNoise::covariance(const ad::Tensor& w, const ad::Tensor& b,
                                  std::size_t n,
                                  const ad::Tensor& x_hat) const {
  ad::Tensor entries = b;
  if (cfg_.mode == NoiseMode::heteroscedastic) {
    if (x_hat.shape().rank != 1 || x_hat.size() != cfg_.n_x)
      throw ShapeError("state estimate must have " + std::to_string(cfg_.n_x) +
                       " entries, got shape " + x_hat.shape().str());
    entries = ad::matmul(w, x_hat * scales_) + b;
  }
  const ad::Tensor l = ad::tril_from_entries(entries, n);
  return ad::matmul(l, ad::transpose(l)) +
         ad::Tensor::identity(n) * cfg_.epsilon;
}

ad::Tensor BoundNoise::process_covariance(const ad::Tensor& x_hat) const {
  return covariance(w_r_, b_r_, cfg_.n_x, x_hat);
}

ad::Tensor BoundNoise::measurement_covariance(const ad::Tensor& x_hat) const {
  return covariance(w_q_, b_q_, cfg_.n_y, x_hat);
}

}  // namespace dukf
