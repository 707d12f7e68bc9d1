#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dukf/vehicle.hpp"

namespace dukf {
namespace {

// Independent transcription of the single-track equations with plain doubles.
std::array<double, 4> reference_derivative(double vx, double vy, double r,
                                           double ws, double delta, double iq,
                                           double fxr, double fxf, double fyr,
                                           double fyf, const VehicleParams& p) {
  const double sgn = ws > 0 ? 1.0 : (ws < 0 ? -1.0 : 0.0);
  const double drag = p.c_drag * vx * std::fabs(vx);
  const double tau = p.k_tc * sgn + p.k_tv * ws;
  return {
      (fxr + fxf * std::cos(delta) - fyf * std::sin(delta) - drag +
       p.m * vy * r) /
          p.m,
      (fxf * std::sin(delta) + fyr + fyf * std::cos(delta) - p.m * vx * r) /
          p.m,
      ((fxf * std::sin(delta) + fyf * std::cos(delta)) * p.lf - fyr * p.lr) /
          p.iz,
      (p.k_phi * iq - p.wheel_radius * fxf - p.wheel_radius * fxr - tau) /
          p.ie,
  };
}

double reference_magic(double s, double b, double c, double d, double e,
                       double mu) {
  const double bs = b * s;
  return mu * d * std::sin(c * std::atan(bs - e * (bs - std::atan(bs))));
}

TEST(Rk4, ExponentialGrowthMatchesTaylorPolynomial) {
  const DerivativeFn f = [](std::span<const double> x) {
    return std::vector<double>{x[0]};
  };
  const double x0[] = {1.0};
  const auto x1 = rk4_step(f, x0, 0.1);
  EXPECT_NEAR(x1[0], std::exp(0.1), 1e-7);
  const double h = 0.1;
  EXPECT_NEAR(x1[0], 1 + h + h * h / 2 + h * h * h / 6 + h * h * h * h / 24,
              1e-15);
}

TEST(Rk4, FourthOrderConvergenceOnOscillator) {
  const DerivativeFn f = [](std::span<const double> x) {
    return std::vector<double>{x[1], -x[0]};
  };
  auto error_at = [&](int steps) {
    std::vector<double> x{1.0, 0.0};
    const double ts = 2.0 / steps;
    for (int i = 0; i < steps; ++i) x = rk4_step(f, x, ts);
    return std::hypot(x[0] - std::cos(2.0), x[1] + std::sin(2.0));
  };
  const double e1 = error_at(20);
  const double e2 = error_at(40);
  EXPECT_GE(std::log2(e1 / e2), 3.7);
}

TEST(Rk4, NonFiniteStageIsNamed) {
  int calls = 0;
  const DerivativeFn f = [&](std::span<const double>) {
    ++calls;
    return std::vector<double>{calls == 3 ? NAN : 1.0};
  };
  const double x0[] = {0.0};
  try {
    rk4_step(f, x0, 0.1);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("k3"), std::string::npos) << e.what();
  }
}

TEST(Rk4, BatchedMatchesScalar) {
  const auto f = [](const ad::Tensor& x) { return ad::sin(x) * 2.0 - x; };
  const DerivativeFn g = [](std::span<const double> x) {
    std::vector<double> d(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) d[i] = 2 * std::sin(x[i]) - x[i];
    return d;
  };
  const auto xt = ad::Tensor::from_rows({{0.3, -1.2}, {2.0, 0.5}});
  const auto y = rk4_step(f, xt, 0.05);
  const std::vector<double> flat(xt.values().begin(), xt.values().end());
  const auto ys = rk4_step(g, flat, 0.05);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(y[i], ys[i], 1e-15);
}

TEST(Pacejka, OddInSlipAndLinearInFriction) {
  PacejkaParams pp;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> slip(-1.5, 1.5);
  for (int i = 0; i < 200; ++i) {
    const SlipQuantities s{slip(rng), slip(rng), slip(rng)};
    const SlipQuantities neg{-s.kappa, -s.alpha_f, -s.alpha_r};
    const TireForces a = pacejka_forces(s, pp);
    const TireForces b = pacejka_forces(neg, pp);
    EXPECT_NEAR(a.fx_f, -b.fx_f, 1e-12);
    EXPECT_NEAR(a.fy_f, -b.fy_f, 1e-12);
    EXPECT_NEAR(a.fy_r, -b.fy_r, 1e-12);

    PacejkaParams half = pp;
    half.mu = pp.mu / 2;
    const TireForces c = pacejka_forces(s, half);
    EXPECT_NEAR(c.fy_f * 2, a.fy_f, 1e-12);
    EXPECT_NEAR(c.fx_r * 2, a.fx_r, 1e-12);
  }
  const TireForces zero = pacejka_forces(SlipQuantities{0, 0, 0}, pp);
  EXPECT_EQ(zero.fx_r, 0.0);
  EXPECT_EQ(zero.fy_f, 0.0);
}

TEST(Pacejka, MatchesReferenceFormulaAndBoundedByPeak) {
  PacejkaParams pp;
  for (double s = -2.0; s <= 2.0; s += 0.05) {
    const TireForces f = pacejka_forces(SlipQuantities{s, s, s}, pp);
    EXPECT_NEAR(f.fx_f, reference_magic(s, pp.bx, pp.cx, pp.dx, pp.ex, pp.mu),
                1e-12);
    EXPECT_NEAR(f.fy_f,
                reference_magic(s, pp.by_f, pp.cy_f, pp.dy_f, pp.ey_f, pp.mu),
                1e-12);
    EXPECT_LE(std::fabs(f.fy_r), pp.mu * pp.dy_r + 1e-12);
  }
}

TEST(Pacejka, ValidationRejectsBadShapeFactors) {
  PacejkaParams pp;
  pp.cy_f = -1.0;
  EXPECT_THROW(pp.validate(), Error);
  pp = PacejkaParams{};
  pp.ex = 1.0;
  EXPECT_THROW(pp.validate(), Error);
  EXPECT_NO_THROW(PacejkaParams{}.validate());
}

TEST(Slip, DefinitionsIncludingStandstillFloor) {
  VehicleParams p;
  const VehicleState x{2.0, 0.1, 0.5, 2.4, std::nullopt};
  const SlipQuantities s = compute_slip(x, ControlInput{0.2, 0.0}, p);
  EXPECT_NEAR(s.kappa, 0.2, 1e-15);
  EXPECT_NEAR(s.alpha_f, 0.2 - std::atan2(0.1 + 0.15 * 0.5, 2.0), 1e-15);
  EXPECT_NEAR(s.alpha_r, -std::atan2(0.1 - 0.17 * 0.5, 2.0), 1e-15);

  const VehicleState still{0.0, 0.0, 0.0, 0.05, std::nullopt};
  const SlipQuantities t = compute_slip(still, ControlInput{}, p);
  EXPECT_NEAR(t.kappa, 0.5, 1e-15);
  EXPECT_EQ(t.alpha_f, 0.0);

  const VehicleState reverse{-1.0, 0.2, 0.0, -1.0, std::nullopt};
  const SlipQuantities u = compute_slip(reverse, ControlInput{}, p);
  EXPECT_TRUE(std::isfinite(u.alpha_r));
  EXPECT_NEAR(u.kappa, 0.0, 1e-15);
}

TEST(SingleTrack, MatchesIndependentTranscription) {
  VehicleParams p;
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    const VehicleState x{3 * u(rng), u(rng), 2 * u(rng), 3 * u(rng),
                         std::nullopt};
    const ControlInput c{0.4 * u(rng), 20 * u(rng)};
    const TireForces f{10 * u(rng), 10 * u(rng), 10 * u(rng), 10 * u(rng)};
    const auto d = single_track_derivative(x, c, p, f);
    const auto ref = reference_derivative(x.vx, x.vy, x.r, x.omega_s, c.delta,
                                          c.iq, f.fx_r, f.fx_f, f.fy_r, f.fy_f,
                                          p);
    ASSERT_EQ(d.size(), 4u);
    for (int k = 0; k < 4; ++k) EXPECT_NEAR(d[k], ref[k], 1e-12);
  }
}

TEST(SingleTrack, AugmentedStateHasZeroFrictionDerivative) {
  VehicleParams p;
  PacejkaParams pp;
  const VehicleState x{2.0, 0.1, 0.3, 2.2, 0.4};
  const auto d = pacejka_derivative(x, ControlInput{0.1, 5.0}, p, pp);
  ASSERT_EQ(d.size(), 5u);
  EXPECT_EQ(d[4], 0.0);

  // Friction in the state overrides the tire parameter set.
  PacejkaParams low = pp;
  low.mu = 0.4;
  VehicleState plain = x;
  plain.mu.reset();
  const auto e = pacejka_derivative(plain, ControlInput{0.1, 5.0}, p, low);
  for (int k = 0; k < 4; ++k) EXPECT_EQ(d[k], e[k]);
}

TEST(SingleTrack, RestStateIsEquilibrium) {
  VehicleParams p;
  PacejkaParams pp;
  const auto d = pacejka_derivative(VehicleState{}, ControlInput{}, p, pp);
  for (double v : d) EXPECT_EQ(v, 0.0);
}

TEST(SingleTrack, TensorPathMatchesScalarPath) {
  VehicleParams p;
  PacejkaParams pp;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> rows;
  std::vector<VehicleState> states;
  for (int i = 0; i < 6; ++i) {
    VehicleState x{2 + u(rng), 0.3 * u(rng), u(rng), 2 + u(rng), std::nullopt};
    states.push_back(x);
    rows.insert(rows.end(), {x.vx, x.vy, x.r, x.omega_s});
  }
  const ad::Tensor batch = ad::Tensor::matrix(6, 4, rows);
  const StateT<ad::Tensor> cols{
      ad::slice(batch, 1, 0, 1), ad::slice(batch, 1, 1, 2),
      ad::slice(batch, 1, 2, 3), ad::slice(batch, 1, 3, 4)};
  const ControlT<ad::Tensor> c{ad::Tensor(0.15), ad::Tensor(8.0)};
  const auto s = compute_slip(cols, c, p);
  const auto f = pacejka_forces(s, static_cast<const PacejkaT<double>&>(pp),
                                pp.mu);
  const auto d = single_track_derivative(cols, c, p, f, SignMode::smooth);
  for (int i = 0; i < 6; ++i) {
    const auto ref = pacejka_derivative(states[i], ControlInput{0.15, 8.0}, p,
                                        pp, SignMode::smooth);
    EXPECT_NEAR(d.vx[i], ref[0], 1e-12);
    EXPECT_NEAR(d.vy[i], ref[1], 1e-12);
    EXPECT_NEAR(d.r[i], ref[2], 1e-12);
    EXPECT_NEAR(d.omega_s[i], ref[3], 1e-12);
  }
}

TEST(Measurement, AccelerationsIncludeCentripetalTerms) {
  const double x[] = {2.0, 0.1, 0.5, 2.1};
  const double d[] = {0.3, -0.2, 0.0, 0.0};
  const auto y = measurement_model(x, d);
  EXPECT_NEAR(y[0], 0.3 - 0.5 * 0.1, 1e-15);
  EXPECT_NEAR(y[1], -0.2 + 0.5 * 2.0, 1e-15);
  EXPECT_EQ(y[2], 0.5);
  EXPECT_EQ(y[3], 2.1);
}

TEST(Params, ValidationAndControlLimits) {
  VehicleParams p;
  EXPECT_NO_THROW(p.validate());
  p.m = 0.0;
  EXPECT_THROW(p.validate(), Error);
  VehicleParams q;
  EXPECT_THROW(ControlInput({0.6, 0.0}).validate(q), Error);
  EXPECT_THROW(ControlInput({0.0, NAN}).validate(q), Error);
  EXPECT_NO_THROW(ControlInput({0.3, -10.0}).validate(q));
}

TEST(VehicleStateTest, VectorRoundTrip) {
  const VehicleState x{1, 2, 3, 4, 0.5};
  const auto v = x.to_vector();
  ASSERT_EQ(v.size(), 5u);
  const VehicleState y = VehicleState::from_vector(v);
  EXPECT_EQ(y.mu.value(), 0.5);
  const double bad[] = {1, 2, 3};
  EXPECT_THROW(VehicleState::from_vector(bad), ShapeError);
}

}  // namespace
}  // namespace dukf
