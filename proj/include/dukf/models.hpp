#pragma once

// Dynamics model variants evaluated on batches of states (one row per state).

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dukf/autodiff.hpp"
#include "dukf/mlp.hpp"
#include "dukf/vehicle.hpp"

namespace dukf {

enum class ModelKind {
  pc,    // Pacejka tires, physics body
  pcr,   // Pacejka tires plus a learned residual on the derivative
  nn,    // network predicts the full state derivative
  nnt,   // network predicts tire forces, physics body
  nntf,  // network tire forces scaled by the friction coefficient
};

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& name);

// Hidden widths used when none are configured: 256 x 3 for networks that
// predict derivatives, 64 x 3 for tire networks.
std::vector<std::size_t> default_hidden(ModelKind kind);

struct DynamicsConfig {
  ModelKind kind = ModelKind::nntf;
  // Carries the friction coefficient as a fifth state with zero derivative.
  bool augmented = true;
  VehicleParams vehicle;
  PacejkaParams pacejka;
  FeatureScales features;
  std::vector<std::size_t> hidden{64, 64, 64};
  double force_scale = 30.0;
  // Output scale of networks that predict state derivatives.
  std::array<double, kStateDim> derivative_scale{5.0, 5.0, 20.0, 20.0};
  SignMode sign_mode = SignMode::smooth;
  // When set, forces use this friction value instead of the friction state.
  std::optional<double> frozen_mu;
  std::uint64_t seed = 1;

  std::size_t state_dim() const {
    return augmented ? kAugmentedStateDim : kStateDim;
  }
  void validate() const;
};

// Fresh trainable parameters for `cfg` under the "dyn." prefix.
ad::ParameterSet init_dynamics_params(const DynamicsConfig& cfg);

// A dynamics model with its parameters resolved once. The parameters may be
// tape-bound, in which case every evaluation is recorded.
class BoundDynamics {
 public:
  BoundDynamics(const DynamicsConfig& cfg, const ad::ParameterSet& params);

  // State derivative for each row of `x` (N x state_dim). Controls are
  // scalars or N x 1 columns.
  ad::Tensor derivative(const ad::Tensor& x,
                        const ControlT<ad::Tensor>& u) const;

  // Tire forces for each row, N x 4 in the order [Fx_r, Fx_f, Fy_r, Fy_f].
  // Not defined for the full-network model.
  TireForcesT<ad::Tensor> tire_forces(const StateT<ad::Tensor>& x,
                                      const ControlT<ad::Tensor>& u,
                                      const ad::Tensor& mu_column) const;

  const DynamicsConfig& config() const { return cfg_; }

 private:
  DynamicsConfig cfg_;
  std::optional<PacejkaT<ad::Tensor>> pacejka_;
  std::optional<MlpParams> net_;
};

// Splits an N x 4+ state batch into its physical columns.
StateT<ad::Tensor> state_columns(const ad::Tensor& x);

// Predicted measurements [ax, ay, r, omega_s] for each row given the states
// and their derivatives.
ad::Tensor measurement_batch(const ad::Tensor& x, const ad::Tensor& xdot);

}  // namespace dukf
