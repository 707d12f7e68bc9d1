#pragma once

// Trainable process and measurement covariances built as L L^T + eps I.

#include <string>
#include <vector>

#include "dukf/autodiff.hpp"

namespace dukf {

enum class NoiseMode { homoscedastic, heteroscedastic };

std::string to_string(NoiseMode mode);
NoiseMode parse_noise_mode(const std::string& name);

struct NoiseConfig {
  NoiseMode mode = NoiseMode::homoscedastic;
  std::size_t n_x = 5;
  std::size_t n_y = 4;
  double epsilon = 1e-7;
  // Initial diagonals of the Cholesky-like factors.
  std::vector<double> process_diag{0.1, 0.1, 0.1, 0.1, 0.01};
  std::vector<double> measurement_diag{0.5, 0.5, 0.05, 0.1};
  // Divisors applied to the state estimate before the heteroscedastic map.
  std::vector<double> state_scales{5.0, 2.0, 4.0, 5.0, 1.0};

  void validate() const;
};

// Default noise configuration for a 4- or 5-dimensional state.
NoiseConfig default_noise_config(NoiseMode mode, std::size_t n_x);

inline std::size_t tril_count(std::size_t n) { return n * (n + 1) / 2; }

// Homoscedastic: "noise.l_r" and "noise.l_q" hold the lower-triangular
// entries row by row. Heteroscedastic: "noise.w_r" (tril(n_x) x n_x),
// "noise.b_r", "noise.w_q" (tril(n_y) x n_x) and "noise.b_q".
ad::ParameterSet init_noise(const NoiseConfig& cfg);

class BoundNoise {
 public:
  BoundNoise(const NoiseConfig& cfg, const ad::ParameterSet& params);

  // R = L_R L_R^T + eps I, with L_R possibly depending on the estimate.
  ad::Tensor process_covariance(const ad::Tensor& x_hat) const;
  // Q = L_Q L_Q^T + eps I.
  ad::Tensor measurement_covariance(const ad::Tensor& x_hat) const;

  const NoiseConfig& config() const { return cfg_; }

 private:
  ad::Tensor covariance(const ad::Tensor& w, const ad::Tensor& b,
                        std::size_t n, const ad::Tensor& x_hat) const;

  NoiseConfig cfg_;
  ad::Tensor w_r_, b_r_, w_q_, b_q_;
  ad::Tensor scales_;
};

}  // namespace dukf
