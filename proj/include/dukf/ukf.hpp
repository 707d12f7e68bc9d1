#pragma once

// Scaled unscented Kalman filter over tensors, differentiable end to end.

#include <array>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "dukf/autodiff.hpp"
#include "dukf/models.hpp"
#include "dukf/noise.hpp"
#include "dukf/vehicle.hpp"

namespace dukf {

struct UkfConfig {
  double alpha = 1.0;
  double beta = 2.0;
  double kappa_ut = 0.0;
  double ts = 0.01;
  double mu_min = 0.05;
  double mu_max = 1.5;
  double jitter = 1e-9;
  int jitter_retries = 3;

  double lambda(std::size_t n) const {
    return alpha * alpha * (static_cast<double>(n) + kappa_ut) -
           static_cast<double>(n);
  }
  void validate(std::size_t n) const;
};

struct GaussianBelief {
  ad::Tensor mean;  // rank 1, length n
  ad::Tensor cov;   // n x n

  std::size_t dim() const { return mean.size(); }
  GaussianBelief detach() const { return {mean.detach(), cov.detach()}; }
};

struct SigmaPoints {
  ad::Tensor points;  // (2n + 1) x n, one point per row
  std::vector<double> wm;
  std::vector<double> wc;
};

SigmaPoints sigma_points(const GaussianBelief& belief, const UkfConfig& cfg);

using Control = ControlT<ad::Tensor>;

// Batched models a filter runs with. Each function maps a batch of states
// (one per row) and the current control.
struct FilterModel {
  std::function<ad::Tensor(const ad::Tensor&, const Control&)> transition;
  std::function<ad::Tensor(const ad::Tensor&, const Control&)> measurement;
  std::function<ad::Tensor(const ad::Tensor&)> process_cov;
  std::function<ad::Tensor(const ad::Tensor&)> measurement_cov;
  // Index of the friction state, clamped after each update.
  std::optional<std::size_t> friction_index;
};

// Dynamics and noise models with their parameters. Parameter names are
// "dyn.*" and "noise.*"; a separate measurement-step dynamics model, when
// present, is stored under "upd.dyn.*".
struct ModelBundle {
  DynamicsConfig dynamics;
  std::optional<DynamicsConfig> update_dynamics;
  NoiseConfig noise;
  ad::ParameterSet params;

  std::size_t state_dim() const { return dynamics.state_dim(); }
  void validate() const;
};

// Fresh bundle with initialized parameters.
ModelBundle make_bundle(const DynamicsConfig& dynamics, NoiseMode noise_mode);

// Bundle whose time update uses `predict`'s dynamics and whose measurement
// update uses `update`'s dynamics (parameters under "upd."). Noise comes from
// `predict`.
ModelBundle mix_bundles(const ModelBundle& predict, const ModelBundle& update);

// Filter model for `bundle` evaluated with `params` (usually the bundle's
// parameters bound to a tape).
FilterModel make_filter_model(const ModelBundle& bundle,
                              const ad::ParameterSet& params,
                              const UkfConfig& cfg);

GaussianBelief predict(const GaussianBelief& belief, const Control& u,
                       const FilterModel& model, const UkfConfig& cfg);

GaussianBelief update(const GaussianBelief& belief, const ad::Tensor& y,
                      const Control& u, const FilterModel& model,
                      const UkfConfig& cfg);

using Measurement = std::array<double, kMeasurementDim>;

struct Trajectory {
  std::vector<ad::Tensor> means;
  std::vector<ad::Tensor> covs;
  std::size_t size() const { return means.size(); }
};

// Posterior belief at every step. Step k predicts from k-1 with control
// u[k-1] (skipped for k = 0) and then updates with y[k] and u[k].
Trajectory run_sequence(const GaussianBelief& initial,
                        std::span<const ControlInput> controls,
                        std::span<const Measurement> measurements,
                        const FilterModel& model, const UkfConfig& cfg);

struct InitConfig {
  double p0_diag = 0.25;
  double mu_prior = 0.6;
  double mu_var = 0.04;
};

// Belief from the first measurement: vx and omega_s from the wheel speed,
// r from the gyro, vy = 0.
GaussianBelief initial_belief(const Measurement& y0, const InitConfig& init);

GaussianBelief augment_with_friction(const GaussianBelief& belief4,
                                     double mu_prior, double mu_var,
                                     const UkfConfig& cfg);

// Initial belief sized for `bundle` (augmented when the bundle carries mu).
GaussianBelief initial_belief(const Measurement& y0, const InitConfig& init,
                              const ModelBundle& bundle, const UkfConfig& cfg);

Control to_control(const ControlInput& u);

}  // namespace dukf
