#pragma once

// Single-track vehicle dynamics with lumped front/rear virtual wheels.
//
// The physics is written once as templates over the scalar type so the same
// expressions serve the simulator (T = double) and the differentiable filter
// (T = ad::Tensor holding one column of a sigma-point batch).

#include <array>
#include <cmath>
#include <functional>
#include <optional>
#include <vector>

#include "dukf/autodiff.hpp"

namespace dukf {

// Speed floor used by the slip definitions near standstill, m/s.
inline constexpr double kSlipSpeedEps = 0.1;
// Width of the smooth sign used for Coulomb transmission friction, m/s.
inline constexpr double kSmoothSignWidth = 0.05;
inline constexpr std::size_t kStateDim = 4;
inline constexpr std::size_t kAugmentedStateDim = 5;
inline constexpr std::size_t kMeasurementDim = 4;

struct VehicleParams {
  double m = 4.5;
  double iz = 0.08;
  double lf = 0.15;
  double lr = 0.17;
  double wheel_radius = 0.05;
  double ie = 0.2;
  double k_phi = 0.07;
  double k_tc = 0.02;
  double k_tv = 0.01;
  double c_drag = 0.05;
  double delta_max = 0.45;

  void validate() const;
};

template <class P>
struct PacejkaT {
  P bx, cx, dx, ex;
  P by_f, cy_f, dy_f, ey_f;
  P by_r, cy_r, dy_r, ey_r;
};

struct PacejkaParams : PacejkaT<double> {
  double mu = 0.65;

  PacejkaParams()
      : PacejkaT<double>{4.0, 1.6, 22.0, 0.1,   //
                         4.5, 1.4, 23.0, -0.2,  //
                         5.0, 1.4, 21.0, 0.1},
        mu(0.65) {}
  void validate() const;
};

template <class T>
struct StateT {
  T vx, vy, r, omega_s;
};

template <class T>
struct ControlT {
  T delta, iq;
};

template <class T>
struct TireForcesT {
  T fx_r, fx_f, fy_r, fy_f;
};

template <class T>
struct SlipT {
  T kappa, alpha_f, alpha_r;
};

struct VehicleState {
  double vx = 0.0;
  double vy = 0.0;
  double r = 0.0;
  double omega_s = 0.0;
  std::optional<double> mu;

  std::vector<double> to_vector() const;
  static VehicleState from_vector(std::span<const double> v);
  StateT<double> core() const { return {vx, vy, r, omega_s}; }
};

struct ControlInput {
  double delta = 0.0;
  double iq = 0.0;

  void validate(const VehicleParams& p) const;
};

using TireForces = TireForcesT<double>;
using SlipQuantities = SlipT<double>;

enum class SignMode { exact, smooth };

std::string to_string(SignMode mode);
SignMode parse_sign_mode(const std::string& name);

// ---- scalar-generic building blocks -----------------------------------------

inline double clamp_min(double x, double lo) { return x > lo ? x : lo; }

inline double transmission_sign(double w, SignMode mode) {
  if (mode == SignMode::smooth) return std::tanh(w / kSmoothSignWidth);
  return static_cast<double>((w > 0.0) - (w < 0.0));
}

// Exact sign on a tensor is piecewise constant, so it enters as a constant.
inline ad::Tensor transmission_sign(const ad::Tensor& w, SignMode mode) {
  if (mode == SignMode::smooth) return ad::tanh(w / kSmoothSignWidth);
  std::vector<double> s(w.size());
  for (std::size_t i = 0; i < s.size(); ++i)
    s[i] = static_cast<double>((w[i] > 0.0) - (w[i] < 0.0));
  return ad::Tensor(w.shape(), std::move(s));
}

template <class T>
SlipT<T> compute_slip(const StateT<T>& x, const ControlT<T>& u,
                      const VehicleParams& p, double v_eps = kSlipSpeedEps) {
  using std::abs;
  using std::atan;
  // atan2(y, x) with x >= v_eps > 0 reduces to atan(y / x).
  const T vx_floor = clamp_min(x.vx, v_eps);
  SlipT<T> s{
      (x.omega_s - x.vx) / clamp_min(abs(x.vx), v_eps),
      u.delta - atan((x.vy + x.r * p.lf) / vx_floor),
      -atan((x.vy - x.r * p.lr) / vx_floor),
  };
  return s;
}

// mu * D * sin(C * atan(B s - E (B s - atan(B s)))).
template <class S, class P, class M>
auto magic_formula(const S& slip, const P& b, const P& c, const P& d,
                   const P& e, const M& mu) {
  using std::atan;
  using std::sin;
  const auto bs = b * slip;
  return mu * d * sin(c * atan(bs - e * (bs - atan(bs))));
}

template <class T, class P, class M>
TireForcesT<T> pacejka_forces(const SlipT<T>& s, const PacejkaT<P>& pp,
                              const M& mu) {
  return {
      magic_formula(s.kappa, pp.bx, pp.cx, pp.dx, pp.ex, mu),
      magic_formula(s.kappa, pp.bx, pp.cx, pp.dx, pp.ex, mu),
      magic_formula(s.alpha_r, pp.by_r, pp.cy_r, pp.dy_r, pp.ey_r, mu),
      magic_formula(s.alpha_f, pp.by_f, pp.cy_f, pp.dy_f, pp.ey_f, mu),
  };
}

template <class T>
StateT<T> single_track_derivative(const StateT<T>& x, const ControlT<T>& u,
                                  const VehicleParams& p,
                                  const TireForcesT<T>& f, SignMode sign_mode) {
  using std::abs;
  using std::cos;
  using std::sin;
  const T cd = cos(u.delta);
  const T sd = sin(u.delta);
  const T f_drag = p.c_drag * x.vx * abs(x.vx);
  const T front_lateral = f.fx_f * sd + f.fy_f * cd;
  const T tau_t = p.k_tc * transmission_sign(x.omega_s, sign_mode) +
                  p.k_tv * x.omega_s;
  return {
      (f.fx_r + f.fx_f * cd - f.fy_f * sd - f_drag + p.m * x.vy * x.r) / p.m,
      (front_lateral + f.fy_r - p.m * x.vx * x.r) / p.m,
      (front_lateral * p.lf - f.fy_r * p.lr) / p.iz,
      (p.k_phi * u.iq - p.wheel_radius * f.fx_f - p.wheel_radius * f.fx_r -
       tau_t) /
          p.ie,
  };
}

// ---- scalar API -----------------------------------------------------------------

SlipQuantities compute_slip(const VehicleState& x, const ControlInput& u,
                            const VehicleParams& p);
// Uses pp.mu as the friction coefficient.
TireForces pacejka_forces(const SlipQuantities& s, const PacejkaParams& pp);
// Returns [vx', vy', r', omega_s'] plus mu' = 0 when x carries mu.
std::vector<double> single_track_derivative(const VehicleState& x,
                                            const ControlInput& u,
                                            const VehicleParams& p,
                                            const TireForces& f,
                                            SignMode sign_mode = SignMode::exact);

// Classical Pacejka single-track model; x.mu overrides pp.mu when present.
std::vector<double> pacejka_derivative(const VehicleState& x,
                                       const ControlInput& u,
                                       const VehicleParams& p,
                                       const PacejkaParams& pp,
                                       SignMode sign_mode = SignMode::exact);

using DerivativeFn =
    std::function<std::vector<double>(std::span<const double>)>;

// Classical fourth-order Runge-Kutta step with the input held constant.
std::vector<double> rk4_step(const DerivativeFn& f, std::span<const double> x,
                             double ts);

// Batched variant over the rows of `x`.
ad::Tensor rk4_step(const std::function<ad::Tensor(const ad::Tensor&)>& f,
                    const ad::Tensor& x, double ts);

// Predicted [ax, ay, r, omega_s] from a state and its derivative.
std::array<double, kMeasurementDim> measurement_model(
    std::span<const double> x, std::span<const double> derivative);

}  // namespace dukf
