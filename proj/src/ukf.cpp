#include "dukf/ukf.hpp"

#include <algorithm>
#include <cmath>

namespace dukf {

namespace {

ad::Tensor symmetrize(const ad::Tensor& p) {
  return (p + ad::transpose(p)) * 0.5;
}

struct Moments {
  ad::Tensor mean;
  ad::Tensor deviations;
};

Moments unscented_mean(const ad::Tensor& y, const SigmaPoints& sp) {
  const ad::Tensor mean = ad::matmul(ad::Tensor::vector(sp.wm), y);
  return {mean, y - mean};
}

// sum_i wc_i a_i b_i^T for deviation rows a_i, b_i.
ad::Tensor weighted_cross(const ad::Tensor& a, const ad::Tensor& b,
                          const SigmaPoints& sp) {
  const ad::Tensor wc = ad::Tensor::matrix(sp.wc.size(), 1, sp.wc);
  return ad::matmul(ad::transpose(a), b * wc);
}

void check_belief(const GaussianBelief& b) {
  const std::size_t n = b.mean.size();
  if (b.mean.shape().rank != 1 || !(b.cov.shape() == ad::Shape::matrix(n, n)))
    throw ShapeError("belief needs a rank-1 mean and matching square "
                     "covariance, got " +
                     b.mean.shape().str() + " and " + b.cov.shape().str());
}

ad::ParameterSet strip_prefix(const ad::ParameterSet& params,
                              const std::string& prefix) {
  ad::ParameterSet out;
  for (const auto& [name, t] : params)
    if (name.rfind(prefix, 0) == 0) out.add(name.substr(prefix.size()), t);
  return out;
}

}  // namespace

void UkfConfig::validate(std::size_t n) const {
  if (!(alpha > 0.0 && alpha <= 1.0))
    throw ConfigError("ukf.alpha", "must lie in (0, 1]");
  if (!(beta >= 0.0)) throw ConfigError("ukf.beta", "must be non-negative");
  if (!(lambda(n) > -static_cast<double>(n)))
    throw ConfigError("ukf.kappa_ut", "alpha^2 (n + kappa) must be positive");
  if (!(ts > 0.0)) throw ConfigError("ukf.ts", "must be positive");
  if (!(mu_min > 0.0 && mu_max > mu_min))
    throw ConfigError("ukf.mu_min", "need 0 < mu_min < mu_max");
  if (!(jitter > 0.0) || jitter_retries < 0)
    throw ConfigError("ukf.jitter", "jitter must be positive, retries >= 0");
}

SigmaPoints sigma_points(const GaussianBelief& belief, const UkfConfig& cfg) {
  check_belief(belief);
  const std::size_t n = belief.dim();
  const double lambda = cfg.lambda(n);
  const double c = static_cast<double>(n) + lambda;
  const ad::Tensor l =
      ad::cholesky_with_jitter(belief.cov * c, cfg.jitter, cfg.jitter_retries);

  std::vector<double> e((2 * n + 1) * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    e[(1 + i) * n + i] = 1.0;
    e[(1 + n + i) * n + i] = -1.0;
  }
  const ad::Tensor offsets = ad::Tensor::matrix(2 * n + 1, n, std::move(e));

  SigmaPoints sp;
  sp.points = ad::matmul(offsets, ad::transpose(l)) + belief.mean;
  sp.wm.assign(2 * n + 1, 0.5 / c);
  sp.wc.assign(2 * n + 1, 0.5 / c);
  sp.wm[0] = lambda / c;
  sp.wc[0] = lambda / c + 1.0 - cfg.alpha * cfg.alpha + cfg.beta;
  return sp;
}

void ModelBundle::validate() const {
  dynamics.validate();
  if (update_dynamics) {
    update_dynamics->validate();
    if (update_dynamics->state_dim() != dynamics.state_dim())
      throw ConfigError("model.update",
                        "prediction and update models need the same state");
  }
  noise.validate();
  if (noise.n_x != dynamics.state_dim() || noise.n_y != kMeasurementDim)
    throw ConfigError("noise", "noise dimensions do not match the model state");
}

ModelBundle make_bundle(const DynamicsConfig& dynamics, NoiseMode noise_mode) {
  ModelBundle b;
  b.dynamics = dynamics;
  b.noise = default_noise_config(noise_mode, dynamics.state_dim());
  b.params = init_dynamics_params(dynamics);
  b.params.merge(init_noise(b.noise));
  b.validate();
  return b;
}

ModelBundle mix_bundles(const ModelBundle& predict, const ModelBundle& update) {
  if (predict.update_dynamics || update.update_dynamics)
    throw ConfigError("model", "cannot mix bundles that are already mixed");
  ModelBundle b;
  b.dynamics = predict.dynamics;
  b.update_dynamics = update.dynamics;
  b.noise = predict.noise;
  b.params = predict.params;
  for (const auto& [name, t] : update.params)
    if (name.rfind("noise.", 0) != 0) b.params.add("upd." + name, t);
  b.validate();
  return b;
}

FilterModel make_filter_model(const ModelBundle& bundle,
                              const ad::ParameterSet& params,
                              const UkfConfig& cfg) {
  bundle.validate();
  auto predict_dyn = std::make_shared<BoundDynamics>(bundle.dynamics, params);
  std::shared_ptr<BoundDynamics> update_dyn = predict_dyn;
  if (bundle.update_dynamics) {
    update_dyn = std::make_shared<BoundDynamics>(*bundle.update_dynamics,
                                                 strip_prefix(params, "upd."));
  }
  auto noise = std::make_shared<BoundNoise>(bundle.noise, params);
  const double ts = cfg.ts;

  FilterModel m;
  m.transition = [predict_dyn, ts](const ad::Tensor& x, const Control& u) {
    return rk4_step(
        [&](const ad::Tensor& s) { return predict_dyn->derivative(s, u); }, x,
        ts);
  };
  m.measurement = [update_dyn](const ad::Tensor& x, const Control& u) {
    return measurement_batch(x, update_dyn->derivative(x, u));
  };
  m.process_cov = [noise](const ad::Tensor& x) {
    return noise->process_covariance(x);
  };
  m.measurement_cov = [noise](const ad::Tensor& x) {
    return noise->measurement_covariance(x);
  };
  if (bundle.dynamics.augmented) m.friction_index = kStateDim;
  return m;
}

GaussianBelief predict(const GaussianBelief& belief, const Control& u,
                       const FilterModel& model, const UkfConfig& cfg) {
  const SigmaPoints sp = sigma_points(belief, cfg);
  const ad::Tensor y = model.transition(sp.points, u);
  if (!(y.shape() == sp.points.shape()))
    throw ShapeError("transition changed the state batch shape to " +
                     y.shape().str());
  Moments mo = unscented_mean(y, sp);
  ad::Tensor cov = weighted_cross(mo.deviations, mo.deviations, sp) +
                   model.process_cov(belief.mean);
  if (model.friction_index) {
    // Friction has zero derivative, so its predicted mean is the prior mean.
    const std::size_t i = *model.friction_index;
    const std::size_t n = belief.dim();
    std::vector<ad::Tensor> parts;
    if (i > 0) parts.push_back(ad::slice(mo.mean, 0, 0, i));
    parts.push_back(ad::slice(belief.mean, 0, i, i + 1));
    if (i + 1 < n) parts.push_back(ad::slice(mo.mean, 0, i + 1, n));
    mo.mean = ad::concat(parts, 0);
  }
  return {mo.mean, symmetrize(cov)};
}

GaussianBelief update(const GaussianBelief& belief, const ad::Tensor& y,
                      const Control& u, const FilterModel& model,
                      const UkfConfig& cfg) {
  const SigmaPoints sp = sigma_points(belief, cfg);
  const ad::Tensor z = model.measurement(sp.points, u);
  if (z.shape().rank != 2 || z.shape().rows() != sp.points.shape().rows())
    throw ShapeError("measurement model returned shape " + z.shape().str());
  if (y.shape().rank != 1 || y.size() != z.shape().cols())
    throw ShapeError("measurement has shape " + y.shape().str() +
                     ", model predicts " + std::to_string(z.shape().cols()) +
                     " channels");
  for (double v : y.values())
    if (!std::isfinite(v)) throw NumericError("non-finite measurement");

  const Moments mz = unscented_mean(z, sp);
  const ad::Tensor dx = sp.points - belief.mean;
  const ad::Tensor s =
      symmetrize(weighted_cross(mz.deviations, mz.deviations, sp) +
                 model.measurement_cov(belief.mean));
  const ad::Tensor pxy = weighted_cross(dx, mz.deviations, sp);

  // K = Pxy S^-1 with S = Ls Ls^T: W = Ls^-1 Pxy^T, K nu = W^T Ls^-1 nu,
  // K S K^T = W^T W.
  const ad::Tensor ls =
      ad::cholesky_with_jitter(s, cfg.jitter, cfg.jitter_retries);
  const ad::Tensor w = ad::lower_triangular_solve(ls, ad::transpose(pxy));
  const ad::Tensor nu = ad::lower_triangular_solve(ls, y - mz.mean);
  ad::Tensor mean = belief.mean + ad::matmul(ad::transpose(w), nu);
  const ad::Tensor cov =
      symmetrize(belief.cov - ad::matmul(ad::transpose(w), w));

  if (model.friction_index) {
    // Projection onto the admissible friction range. Inside the range it is
    // the identity; a clamped entry becomes a constant.
    const std::size_t i = *model.friction_index;
    const double mu = mean[i];
    const double clamped = std::clamp(mu, cfg.mu_min, cfg.mu_max);
    if (clamped != mu) {
      std::vector<double> keep(mean.size(), 1.0);
      std::vector<double> shift(mean.size(), 0.0);
      keep[i] = 0.0;
      shift[i] = clamped;
      mean = mean * ad::Tensor::vector(keep) + ad::Tensor::vector(shift);
    }
  }
  return {mean, cov};
}

Control to_control(const ControlInput& u) {
  return {ad::Tensor(u.delta), ad::Tensor(u.iq)};
}

Trajectory run_sequence(const GaussianBelief& initial,
                        std::span<const ControlInput> controls,
                        std::span<const Measurement> measurements,
                        const FilterModel& model, const UkfConfig& cfg) {
  if (controls.size() != measurements.size())
    throw ShapeError("controls and measurements differ in length: " +
                     std::to_string(controls.size()) + " vs " +
                     std::to_string(measurements.size()));
  check_belief(initial);
  cfg.validate(initial.dim());
  Trajectory out;
  out.means.reserve(controls.size());
  out.covs.reserve(controls.size());
  GaussianBelief b = initial;
  for (std::size_t k = 0; k < controls.size(); ++k) {
    try {
      if (k > 0) b = predict(b, to_control(controls[k - 1]), model, cfg);
      const auto& y = measurements[k];
      b = update(b, ad::Tensor::vector({y[0], y[1], y[2], y[3]}),
                 to_control(controls[k]), model, cfg);
    } catch (const NumericError& e) {
      throw FilterDivergence(k, e.what());
    } catch (const NotPositiveDefinite& e) {
      throw FilterDivergence(k, e.what());
    }
    out.means.push_back(b.mean);
    out.covs.push_back(b.cov);
  }
  return out;
}

GaussianBelief initial_belief(const Measurement& y0, const InitConfig& init) {
  if (!(init.p0_diag > 0.0))
    throw ConfigError("init.p0_diag", "must be positive");
  for (double v : y0)
    if (!std::isfinite(v)) throw DataError("non-finite first measurement");
  return {ad::Tensor::vector({y0[3], 0.0, y0[2], y0[3]}),
          ad::Tensor::identity(kStateDim) * init.p0_diag};
}

GaussianBelief augment_with_friction(const GaussianBelief& belief4,
                                     double mu_prior, double mu_var,
                                     const UkfConfig& cfg) {
  check_belief(belief4);
  if (belief4.dim() != kStateDim)
    throw ShapeError("friction augmentation expects a 4-dimensional belief");
  if (!(mu_prior >= cfg.mu_min && mu_prior <= cfg.mu_max))
    throw ConfigError("init.mu_prior",
                      "friction prior " + std::to_string(mu_prior) +
                          " outside [" + std::to_string(cfg.mu_min) + ", " +
                          std::to_string(cfg.mu_max) + "]");
  if (!(mu_var > 0.0)) throw ConfigError("init.mu_var", "must be positive");
  const ad::Tensor mean =
      ad::concat({belief4.mean, ad::Tensor::vector({mu_prior})}, 0);
  const ad::Tensor zero_col = ad::Tensor::zeros(ad::Shape::matrix(kStateDim, 1));
  const ad::Tensor top = ad::concat({belief4.cov, zero_col}, 1);
  std::vector<double> bottom(kAugmentedStateDim, 0.0);
  bottom.back() = mu_var;
  const ad::Tensor cov = ad::concat(
      {top, ad::Tensor::matrix(1, kAugmentedStateDim, bottom)}, 0);
  return {mean, cov};
}

GaussianBelief initial_belief(const Measurement& y0, const InitConfig& init,
                              const ModelBundle& bundle, const UkfConfig& cfg) {
  GaussianBelief b = initial_belief(y0, init);
  if (bundle.dynamics.augmented)
    b = augment_with_friction(b, init.mu_prior, init.mu_var, cfg);
  return b;
}

}  // namespace dukf
