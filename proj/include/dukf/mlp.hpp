#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dukf/autodiff.hpp"
#include "dukf/vehicle.hpp"

namespace dukf {

enum class Activation { tanh };

// Fully connected network. Weights are stored (in x out) so a batch of rows
// maps as X W + b. Hidden layers use `activation`; the output layer is linear.
struct MlpParams {
  std::vector<ad::Tensor> weights;
  std::vector<ad::Tensor> biases;
  Activation activation = Activation::tanh;

  std::vector<std::size_t> dims() const;
  std::size_t parameter_count() const;

  // Names tensors "<prefix>.l<i>.w" and "<prefix>.l<i>.b".
  void store(ad::ParameterSet& out, const std::string& prefix) const;
  static MlpParams load(const ad::ParameterSet& params,
                        const std::string& prefix);
};

// Xavier-uniform weights, zero biases, output layer scaled by `final_scale`.
MlpParams init_mlp(std::span<const std::size_t> dims, std::uint64_t seed,
                   double final_scale = 0.01);

// x is a feature vector (rank 1) or a batch of feature rows (rank 2).
ad::Tensor mlp_forward(const MlpParams& net, const ad::Tensor& x);

inline constexpr std::size_t kFeatureDim = 9;

// Divisors applied to [vx, vy, r, omega_s, delta, iq, kappa, alpha_f,
// alpha_r] before they reach a network.
struct FeatureScales {
  std::array<double, kFeatureDim> divisors{5.0, 2.0, 4.0, 5.0, 0.45,
                                           30.0, 1.0, 0.5, 0.5};
};

template <class T>
std::array<T, kFeatureDim> feature_columns(const StateT<T>& x,
                                           const ControlT<T>& u,
                                           const VehicleParams& p,
                                           const FeatureScales& scales) {
  const SlipT<T> s = compute_slip(x, u, p);
  const auto& d = scales.divisors;
  return {x.vx / d[0],      x.vy / d[1],      x.r / d[2],
          x.omega_s / d[3], u.delta / d[4],   u.iq / d[5],
          s.kappa / d[6],   s.alpha_f / d[7], s.alpha_r / d[8]};
}

// N x 9 feature matrix from column tensors of a sigma-point batch.
ad::Tensor encode_features(const StateT<ad::Tensor>& x,
                           const ControlT<ad::Tensor>& u,
                           const VehicleParams& p,
                           const FeatureScales& scales);

std::array<double, kFeatureDim> encode_features(const VehicleState& x,
                                                const ControlInput& u,
                                                const VehicleParams& p,
                                                const FeatureScales& scales);

}  // namespace dukf
