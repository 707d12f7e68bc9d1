#include <gtest/gtest.h>

#include <cmath>

#include "dukf/mlp.hpp"
#include "dukf/models.hpp"

namespace dukf {
namespace {

TEST(Mlp, ParameterCountOfDefaultTireNetwork) {
  const std::size_t dims[] = {9, 64, 64, 64, 4};
  const MlpParams net = init_mlp(dims, 0);
  // 9*64+64 + 2*(64*64+64) + 64*4+4
  EXPECT_EQ(net.parameter_count(), 640u + 2u * 4160u + 260u);
  EXPECT_EQ(net.dims(), std::vector<std::size_t>(std::begin(dims), std::end(dims)));
}

TEST(Mlp, ForwardMatchesHandComputation) {
  MlpParams net;
  net.weights = {ad::Tensor::from_rows({{1.0, -1.0}, {0.5, 2.0}}),
                 ad::Tensor::from_rows({{3.0}, {-1.0}})};
  net.biases = {ad::Tensor::vector({0.1, 0.0}), ad::Tensor::vector({0.2})};
  const ad::Tensor x = ad::Tensor::vector({0.3, -0.4});
  const double h0 = std::tanh(0.3 * 1.0 - 0.4 * 0.5 + 0.1);
  const double h1 = std::tanh(0.3 * -1.0 - 0.4 * 2.0);
  EXPECT_NEAR(mlp_forward(net, x).item(), 3 * h0 - h1 + 0.2, 1e-15);

  const ad::Tensor batch = ad::Tensor::from_rows({{0.3, -0.4}, {0.0, 0.0}});
  const ad::Tensor y = mlp_forward(net, batch);
  EXPECT_EQ(y.shape(), ad::Shape::matrix(2, 1));
  EXPECT_NEAR(y[1], 0.2 + 3 * std::tanh(0.1), 1e-15);
}

TEST(Mlp, ZeroNetworkAndLinearPassthrough) {
  const std::size_t dims[] = {3, 5, 2};
  MlpParams zero = init_mlp(dims, 0);
  for (auto& w : zero.weights) w = ad::Tensor::zeros(w.shape());
  const ad::Tensor y = mlp_forward(zero, ad::Tensor::vector({1.0, -2.0, 3.0}));
  for (double v : y.values()) EXPECT_EQ(v, 0.0);

  MlpParams ident;
  ident.weights = {ad::Tensor::identity(3)};
  ident.biases = {ad::Tensor::zeros(ad::Shape::vector(3))};
  const ad::Tensor x = ad::Tensor::vector({0.7, -8.0, 9.5});
  const ad::Tensor out = mlp_forward(ident, x);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(out[i], x[i]);
}

TEST(Mlp, GradientsOfAllLayersMatchFiniteDifferences) {
  const std::size_t dims[] = {9, 7, 7, 4};
  const MlpParams net = init_mlp(dims, 5, 1.0);
  ad::ParameterSet params;
  net.store(params, "n");
  std::vector<double> xs(2 * 9);
  for (std::size_t i = 0; i < xs.size(); ++i) xs[i] = std::sin(1.3 * i);
  const ad::Tensor x = ad::Tensor::matrix(2, 9, xs);
  const ad::LossFn loss = [&](const ad::ParameterSet& p) {
    return ad::sum(ad::square(mlp_forward(MlpParams::load(p, "n"), x)));
  };
  const auto r = ad::grad_check(loss, params, {1e-6, 200, 4});
  EXPECT_LT(r.max_rel_error, 1e-5) << r.worst;
}

TEST(Mlp, FiniteOnLargeInputs) {
  const std::size_t dims[] = {9, 64, 64, 64, 4};
  const MlpParams net = init_mlp(dims, 2);
  std::vector<double> xs(9);
  for (std::size_t i = 0; i < 9; ++i) xs[i] = i % 2 ? 10.0 : -10.0;
  for (double v : mlp_forward(net, ad::Tensor::vector(xs)).values())
    EXPECT_TRUE(std::isfinite(v));
}

TEST(Features, ZeroStateAndUnitScales) {
  VehicleParams p;
  FeatureScales unit;
  unit.divisors.fill(1.0);
  const auto zero = encode_features(VehicleState{}, ControlInput{}, p, unit);
  EXPECT_EQ(zero.size(), kFeatureDim);
  for (double v : zero) EXPECT_EQ(v, 0.0);
  const VehicleState x{2.0, 0.1, 0.5, 2.4, std::nullopt};
  const ControlInput u{0.2, 6.0};
  const auto raw = encode_features(x, u, p, unit);
  EXPECT_EQ(raw[0], 2.0);
  EXPECT_EQ(raw[3], 2.4);
  EXPECT_EQ(raw[4], 0.2);
  EXPECT_EQ(raw[7], compute_slip(x, u, p).alpha_f);
}

TEST(Mlp, InitializationIsDeterministicAndScaled) {
  const std::size_t dims[] = {9, 16, 4};
  const MlpParams a = init_mlp(dims, 42);
  const MlpParams b = init_mlp(dims, 42);
  const MlpParams c = init_mlp(dims, 43);
  EXPECT_TRUE(std::equal(a.weights[0].values().begin(),
                         a.weights[0].values().end(),
                         b.weights[0].values().begin()));
  EXPECT_FALSE(std::equal(a.weights[0].values().begin(),
                          a.weights[0].values().end(),
                          c.weights[0].values().begin()));
  const double limit0 = std::sqrt(6.0 / 25.0);
  for (double v : a.weights[0].values()) EXPECT_LE(std::fabs(v), limit0);
  const double limit1 = 0.01 * std::sqrt(6.0 / 20.0);
  for (double v : a.weights[1].values()) EXPECT_LE(std::fabs(v), limit1);
  for (double v : a.biases[0].values()) EXPECT_EQ(v, 0.0);
}

TEST(Mlp, StoreLoadRoundTripAndShapeErrors) {
  const std::size_t dims[] = {9, 8, 4};
  const MlpParams net = init_mlp(dims, 1);
  ad::ParameterSet set;
  net.store(set, "tire");
  EXPECT_TRUE(set.contains("tire.l0.w"));
  EXPECT_TRUE(set.contains("tire.l1.b"));
  const MlpParams back = MlpParams::load(set, "tire");
  EXPECT_EQ(back.dims(), net.dims());
  EXPECT_THROW(MlpParams::load(set, "other"), ShapeError);
  EXPECT_THROW(mlp_forward(net, ad::Tensor::vector({1.0, 2.0})), ShapeError);

  ad::ParameterSet wrong;
  wrong.add("n.l0.w", ad::Tensor::zeros(ad::Shape::matrix(3, 2)));
  wrong.add("n.l0.b", ad::Tensor::zeros(ad::Shape::vector(2)));
  wrong.add("n.l1.w", ad::Tensor::zeros(ad::Shape::matrix(5, 1)));
  wrong.add("n.l1.b", ad::Tensor::zeros(ad::Shape::vector(1)));
  EXPECT_THROW(MlpParams::load(wrong, "n"), ShapeError);
}

TEST(Features, ScaledColumnsIncludeSlips) {
  VehicleParams p;
  FeatureScales scales;
  const VehicleState x{2.0, 0.1, 0.5, 2.4, std::nullopt};
  const ControlInput u{0.2, 6.0};
  const auto f = encode_features(x, u, p, scales);
  const SlipQuantities s = compute_slip(x, u, p);
  EXPECT_EQ(f[0], 2.0 / scales.divisors[0]);
  EXPECT_EQ(f[5], 6.0 / scales.divisors[5]);
  EXPECT_EQ(f[6], s.kappa / scales.divisors[6]);
  EXPECT_EQ(f[8], s.alpha_r / scales.divisors[8]);
}

ad::Tensor sample_batch(std::size_t cols) {
  std::vector<double> v;
  const double rows[3][5] = {{2.0, 0.1, 0.4, 2.2, 0.6},
                             {1.5, -0.2, -0.3, 1.7, 0.5},
                             {3.0, 0.3, 0.9, 3.3, 0.45}};
  for (const auto& r : rows)
    for (std::size_t c = 0; c < cols; ++c) v.push_back(r[c]);
  return ad::Tensor::matrix(3, cols, v);
}

const ControlT<ad::Tensor> kControl{ad::Tensor(0.12), ad::Tensor(7.0)};

DynamicsConfig small_config(ModelKind kind) {
  DynamicsConfig cfg;
  cfg.kind = kind;
  cfg.augmented = kind == ModelKind::nntf;
  cfg.hidden = {8, 8};
  return cfg;
}

TEST(Dynamics, PacejkaBatchMatchesScalarModel) {
  DynamicsConfig cfg = small_config(ModelKind::pc);
  const ad::ParameterSet params = init_dynamics_params(cfg);
  EXPECT_EQ(params.size(), 12u);
  const BoundDynamics dyn(cfg, params);
  const ad::Tensor x = sample_batch(4);
  const ad::Tensor d = dyn.derivative(x, kControl);
  ASSERT_EQ(d.shape(), ad::Shape::matrix(3, 4));
  for (std::size_t i = 0; i < 3; ++i) {
    const VehicleState s{x.at(i, 0), x.at(i, 1), x.at(i, 2), x.at(i, 3),
                         std::nullopt};
    const auto ref = pacejka_derivative(s, ControlInput{0.12, 7.0}, cfg.vehicle,
                                        cfg.pacejka, SignMode::smooth);
    for (std::size_t k = 0; k < 4; ++k) EXPECT_NEAR(d.at(i, k), ref[k], 1e-12);
  }
}

TEST(Dynamics, ResidualStartsNearPhysics) {
  const DynamicsConfig pcr = small_config(ModelKind::pcr);
  const DynamicsConfig pc = small_config(ModelKind::pc);
  const ad::Tensor x = sample_batch(4);
  const ad::Tensor a =
      BoundDynamics(pcr, init_dynamics_params(pcr)).derivative(x, kControl);
  const ad::Tensor b =
      BoundDynamics(pc, init_dynamics_params(pc)).derivative(x, kControl);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_NE(a[i], b[i]);
    EXPECT_NEAR(a[i], b[i], 0.5);
  }
}

TEST(Dynamics, FrictionScaledForcesAreLinearInFriction) {
  const DynamicsConfig cfg = small_config(ModelKind::nntf);
  const BoundDynamics dyn(cfg, init_dynamics_params(cfg));
  const ad::Tensor x = sample_batch(5);
  const StateT<ad::Tensor> s = state_columns(x);
  const auto f1 = dyn.tire_forces(s, kControl, ad::Tensor(0.5));
  const auto f2 = dyn.tire_forces(s, kControl, ad::Tensor(1.0));
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(2 * f1.fy_f[i], f2.fy_f[i], 1e-12);
    EXPECT_NEAR(2 * f1.fx_r[i], f2.fx_r[i], 1e-12);
  }
  const ad::Tensor d = dyn.derivative(x, kControl);
  ASSERT_EQ(d.shape(), ad::Shape::matrix(3, 5));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(d.at(i, 4), 0.0);
}

TEST(Dynamics, FrozenFrictionIgnoresFrictionState) {
  DynamicsConfig cfg = small_config(ModelKind::nntf);
  cfg.frozen_mu = 0.6;
  const ad::ParameterSet params = init_dynamics_params(cfg);
  const BoundDynamics dyn(cfg, params);
  ad::Tensor x = sample_batch(5);
  const ad::Tensor d1 = dyn.derivative(x, kControl);
  std::vector<double> v(x.values().begin(), x.values().end());
  for (std::size_t i = 0; i < 3; ++i) v[i * 5 + 4] = 1.2;
  const ad::Tensor d2 =
      dyn.derivative(ad::Tensor::matrix(3, 5, v), kControl);
  for (std::size_t i = 0; i < d1.size(); ++i) EXPECT_EQ(d1[i], d2[i]);
}

TEST(Dynamics, RejectsWrongStateWidthAndConfig) {
  const DynamicsConfig cfg = small_config(ModelKind::nnt);
  const BoundDynamics dyn(cfg, init_dynamics_params(cfg));
  EXPECT_THROW(dyn.derivative(sample_batch(5), kControl), ShapeError);
  DynamicsConfig bad = small_config(ModelKind::nntf);
  bad.augmented = false;
  EXPECT_THROW(bad.validate(), ConfigError);
  EXPECT_THROW(parse_model_kind("mlp"), ConfigError);
  EXPECT_EQ(parse_model_kind("NNTF"), ModelKind::nntf);
}

class DynamicsGradient : public ::testing::TestWithParam<ModelKind> {};

TEST_P(DynamicsGradient, TapeMatchesFiniteDifferences) {
  const DynamicsConfig cfg = small_config(GetParam());
  ad::ParameterSet params = init_dynamics_params(cfg);
  // Larger output weights so the check is not dominated by tiny gradients.
  for (const auto& [name, t] : ad::ParameterSet(params)) {
    if (name.find(".l2.w") == std::string::npos) continue;
    std::vector<double> v(t.values().begin(), t.values().end());
    for (double& e : v) e *= 50.0;
    params.set(name, ad::Tensor(t.shape(), v));
  }
  const ad::Tensor x = sample_batch(cfg.state_dim());
  const ad::LossFn loss = [&](const ad::ParameterSet& p) {
    const BoundDynamics dyn(cfg, p);
    const ad::Tensor d = dyn.derivative(x, kControl);
    return ad::sum(ad::square(measurement_batch(x, d)));
  };
  const auto r = ad::grad_check(loss, params, {1e-6, 40, 9});
  EXPECT_LT(r.max_rel_error, 1e-5) << r.worst;
}

INSTANTIATE_TEST_SUITE_P(AllKinds, DynamicsGradient,
                         ::testing::Values(ModelKind::pc, ModelKind::pcr,
                                           ModelKind::nn, ModelKind::nnt,
                                           ModelKind::nntf),
                         [](const auto& info) { return to_string(info.param); });

TEST(Dynamics, FullNetworkOutputScaledPerState) {
  const DynamicsConfig cfg = small_config(ModelKind::nn);
  const ad::ParameterSet params = init_dynamics_params(cfg);
  const BoundDynamics dyn(cfg, params);
  const ad::Tensor x = sample_batch(4);
  const ad::Tensor d = dyn.derivative(x, kControl);
  const MlpParams net = MlpParams::load(params, "dyn.net");
  const ad::Tensor raw = mlp_forward(
      net, encode_features(state_columns(x), kControl, cfg.vehicle, cfg.features));
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < 4; ++k)
      EXPECT_NEAR(d.at(i, k), raw.at(i, k) * cfg.derivative_scale[k], 1e-15);
}

}  // namespace
}  // namespace dukf
