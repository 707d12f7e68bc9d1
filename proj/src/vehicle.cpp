#include "dukf/vehicle.hpp"

#include <cmath>
#include <string>

namespace dukf {

std::string to_string(SignMode mode) { return mode == SignMode::exact ? "exact" : "smooth"; }

SignMode parse_sign_mode(const std::string& name) {
  if (name == "exact") return SignMode::exact;
  if (name == "smooth") return SignMode::smooth;
  throw ConfigError("model.sign_mode", "expected exact or smooth, got '" + name + "'");
}

namespace {

void require_positive(double v, const char* name) {
  if (!(v > 0.0) || !std::isfinite(v))
    throw Error(std::string("parameter '") + name + "' must be positive, got " +
                std::to_string(v));
}

void require_finite_nonneg(double v, const char* name) {
  if (!(v >= 0.0) || !std::isfinite(v))
    throw Error(std::string("parameter '") + name +
                "' must be non-negative, got " + std::to_string(v));
}

void require_tire(double b, double c, double d, double e, const char* axis) {
  const std::string a(axis);
  require_positive(b, (a + ".B").c_str());
  require_positive(c, (a + ".C").c_str());
  require_positive(d, (a + ".D").c_str());
  if (!(e < 1.0) || !std::isfinite(e))
    throw Error("parameter '" + a + ".E' must be below 1, got " +
                std::to_string(e));
}

}  // namespace

void VehicleParams::validate() const {
  require_positive(m, "m");
  require_positive(iz, "iz");
  require_positive(lf, "lf");
  require_positive(lr, "lr");
  require_positive(wheel_radius, "wheel_radius");
  require_positive(ie, "ie");
  require_positive(k_phi, "k_phi");
  require_finite_nonneg(k_tc, "k_tc");
  require_finite_nonneg(k_tv, "k_tv");
  require_finite_nonneg(c_drag, "c_drag");
  require_positive(delta_max, "delta_max");
}

void PacejkaParams::validate() const {
  require_tire(bx, cx, dx, ex, "longitudinal");
  require_tire(by_f, cy_f, dy_f, ey_f, "front_lateral");
  require_tire(by_r, cy_r, dy_r, ey_r, "rear_lateral");
  require_positive(mu, "mu");
}

std::vector<double> VehicleState::to_vector() const {
  std::vector<double> v{vx, vy, r, omega_s};
  if (mu) v.push_back(*mu);
  return v;
}

VehicleState VehicleState::from_vector(std::span<const double> v) {
  if (v.size() != kStateDim && v.size() != kAugmentedStateDim)
    throw ShapeError("vehicle state needs 4 or 5 entries, got " +
                     std::to_string(v.size()));
  VehicleState s{v[0], v[1], v[2], v[3], std::nullopt};
  if (v.size() == kAugmentedStateDim) s.mu = v[4];
  return s;
}

void ControlInput::validate(const VehicleParams& p) const {
  if (!std::isfinite(delta) || !std::isfinite(iq))
    throw Error("control input must be finite");
  if (std::abs(delta) > p.delta_max)
    throw Error("steering angle " + std::to_string(delta) +
                " exceeds the mechanical limit " + std::to_string(p.delta_max));
}

SlipQuantities compute_slip(const VehicleState& x, const ControlInput& u,
                            const VehicleParams& p) {
  return compute_slip(x.core(), ControlT<double>{u.delta, u.iq}, p);
}

TireForces pacejka_forces(const SlipQuantities& s, const PacejkaParams& pp) {
  return pacejka_forces(s, static_cast<const PacejkaT<double>&>(pp), pp.mu);
}

std::vector<double> single_track_derivative(const VehicleState& x,
                                            const ControlInput& u,
                                            const VehicleParams& p,
                                            const TireForces& f,
                                            SignMode sign_mode) {
  const StateT<double> d = single_track_derivative(
      x.core(), ControlT<double>{u.delta, u.iq}, p, f, sign_mode);
  std::vector<double> out{d.vx, d.vy, d.r, d.omega_s};
  if (x.mu) out.push_back(0.0);
  return out;
}

std::vector<double> pacejka_derivative(const VehicleState& x,
                                       const ControlInput& u,
                                       const VehicleParams& p,
                                       const PacejkaParams& pp,
                                       SignMode sign_mode) {
  const SlipQuantities s = compute_slip(x, u, p);
  const TireForces f = pacejka_forces(
      s, static_cast<const PacejkaT<double>&>(pp), x.mu.value_or(pp.mu));
  return single_track_derivative(x, u, p, f, sign_mode);
}

namespace {

void check_stage(std::span<const double> k, const char* stage) {
  for (double v : k)
    if (!std::isfinite(v))
      throw NumericError(std::string("non-finite value in RK4 stage ") + stage);
}

}  // namespace

std::vector<double> rk4_step(const DerivativeFn& f, std::span<const double> x,
                             double ts) {
  const std::size_t n = x.size();
  auto shifted = [&](const std::vector<double>& k, double h) {
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = x[i] + h * k[i];
    return y;
  };
  auto eval = [&](std::span<const double> at, const char* stage) {
    std::vector<double> k = f(at);
    if (k.size() != n)
      throw ShapeError(std::string("derivative size mismatch in RK4 stage ") +
                       stage);
    check_stage(k, stage);
    return k;
  };
  const auto k1 = eval(x, "k1");
  const auto k2 = eval(shifted(k1, 0.5 * ts), "k2");
  const auto k3 = eval(shifted(k2, 0.5 * ts), "k3");
  const auto k4 = eval(shifted(k3, ts), "k4");
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i)
    out[i] = x[i] + ts / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
  check_stage(out, "combine");
  return out;
}

ad::Tensor rk4_step(const std::function<ad::Tensor(const ad::Tensor&)>& f,
                    const ad::Tensor& x, double ts) {
  auto eval = [&](const ad::Tensor& at, const char* stage) {
    try {
      ad::Tensor k = f(at);
      if (!(k.shape() == x.shape()))
        throw ShapeError(std::string("derivative shape ") + k.shape().str() +
                         " does not match state " + x.shape().str());
      return k;
    } catch (const NumericError& e) {
      throw NumericError(std::string("RK4 stage ") + stage + ": " + e.what());
    }
  };
  const ad::Tensor k1 = eval(x, "k1");
  const ad::Tensor k2 = eval(x + k1 * (0.5 * ts), "k2");
  const ad::Tensor k3 = eval(x + k2 * (0.5 * ts), "k3");
  const ad::Tensor k4 = eval(x + k3 * ts, "k4");
  return x + (k1 + 2.0 * k2 + 2.0 * k3 + k4) * (ts / 6.0);
}

std::array<double, kMeasurementDim> measurement_model(
    std::span<const double> x, std::span<const double> derivative) {
  if (x.size() < kStateDim || derivative.size() < kStateDim)
    throw ShapeError("measurement model needs at least 4 state entries");
  return {derivative[0] - x[2] * x[1], derivative[1] + x[2] * x[0], x[2],
          x[3]};
}

}  // namespace dukf
