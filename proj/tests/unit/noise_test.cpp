#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <random>

#include "dukf/noise.hpp"

namespace dukf {
namespace {

double min_eigenvalue(const ad::Tensor& m) {
  const std::size_t n = m.shape().rows();
  Eigen::MatrixXd e(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) e(i, j) = m.at(i, j);
  return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(e).eigenvalues().minCoeff();
}

ad::ParameterSet identity_factors(std::size_t n_x, std::size_t n_y) {
  auto ident = [](std::size_t n) {
    std::vector<double> v(tril_count(n), 0.0);
    for (std::size_t i = 0; i < n; ++i) v[i * (i + 1) / 2 + i] = 1.0;
    return ad::Tensor::vector(v);
  };
  ad::ParameterSet p;
  p.add("noise.l_r", ident(n_x));
  p.add("noise.l_q", ident(n_y));
  return p;
}

TEST(Noise, IdentityFactorGivesScaledIdentity) {
  const NoiseConfig cfg = default_noise_config(NoiseMode::homoscedastic, 4);
  const BoundNoise noise(cfg, identity_factors(4, 4));
  const ad::Tensor x = ad::Tensor::vector({1, 2, 3, 4});
  const ad::Tensor r = noise.process_covariance(x);
  const ad::Tensor q = noise.measurement_covariance(x);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      EXPECT_EQ(r.at(i, j), i == j ? 1.0 + 1e-7 : 0.0);
      EXPECT_EQ(q.at(i, j), i == j ? 1.0 + 1e-7 : 0.0);
    }
}

TEST(Noise, ZeroFactorStillPositiveDefinite) {
  const NoiseConfig cfg = default_noise_config(NoiseMode::homoscedastic, 4);
  ad::ParameterSet p;
  p.add("noise.l_r", ad::Tensor::zeros(ad::Shape::vector(10)));
  p.add("noise.l_q", ad::Tensor::zeros(ad::Shape::vector(10)));
  const ad::Tensor r = BoundNoise(cfg, p).process_covariance(ad::Tensor::vector({0, 0, 0, 0}));
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(r.at(i, i), 1e-7);
  EXPECT_NO_THROW(ad::cholesky(r));
}

TEST(Noise, RandomFactorsAreSymmetricWithEigenvalueFloor) {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> g(0.0, 1.0);
  NoiseConfig cfg = default_noise_config(NoiseMode::heteroscedastic, 5);
  for (int trial = 0; trial < 20; ++trial) {
    ad::ParameterSet p = init_noise(cfg);
    for (const auto& [name, t] : ad::ParameterSet(p)) {
      std::vector<double> v(t.size());
      for (double& e : v) e = 0.3 * g(rng);
      p.set(name, ad::Tensor(t.shape(), v));
    }
    const BoundNoise noise(cfg, p);
    const ad::Tensor x = ad::Tensor::vector({g(rng), g(rng), g(rng), g(rng), 0.6});
    for (const ad::Tensor& c :
         {noise.process_covariance(x), noise.measurement_covariance(x)}) {
      const std::size_t n = c.shape().rows();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          EXPECT_NEAR(c.at(i, j), c.at(j, i), 1e-14);
      EXPECT_GE(min_eigenvalue(c), 0.9 * cfg.epsilon);
    }
  }
}

TEST(Noise, HeteroscedasticWithZeroWeightsEqualsHomoscedastic) {
  const NoiseConfig homo = default_noise_config(NoiseMode::homoscedastic, 5);
  const NoiseConfig hetero = default_noise_config(NoiseMode::heteroscedastic, 5);
  const BoundNoise a(homo, init_noise(homo));
  const BoundNoise b(hetero, init_noise(hetero));
  const ad::Tensor x = ad::Tensor::vector({2.5, -0.3, 1.1, 2.4, 0.6});
  const ad::Tensor ra = a.process_covariance(x), rb = b.process_covariance(x);
  const ad::Tensor qa = a.measurement_covariance(x), qb = b.measurement_covariance(x);
  for (std::size_t i = 0; i < ra.size(); ++i) EXPECT_EQ(ra[i], rb[i]);
  for (std::size_t i = 0; i < qa.size(); ++i) EXPECT_EQ(qa[i], qb[i]);
}

TEST(Noise, InitShapesAndDefaults) {
  const NoiseConfig homo = default_noise_config(NoiseMode::homoscedastic, 4);
  const ad::ParameterSet h = init_noise(homo);
  EXPECT_EQ(h.at("noise.l_r").size(), 10u);
  EXPECT_EQ(h.at("noise.l_q").size(), 10u);

  const NoiseConfig hetero = default_noise_config(NoiseMode::heteroscedastic, 5);
  const ad::ParameterSet p = init_noise(hetero);
  EXPECT_EQ(p.at("noise.w_r").shape(), ad::Shape::matrix(15, 5));
  EXPECT_EQ(p.at("noise.w_q").shape(), ad::Shape::matrix(10, 5));

  const BoundNoise noise(hetero, p);
  const ad::Tensor r = noise.process_covariance(ad::Tensor::vector({1, 0, 0, 1, 0.6}));
  EXPECT_NEAR(r.at(0, 0), 0.01 + 1e-7, 1e-15);
  EXPECT_NEAR(r.at(4, 4), 1e-4 + 1e-7, 1e-15);
  const ad::Tensor q = noise.measurement_covariance(ad::Tensor::vector({1, 0, 0, 1, 0.6}));
  EXPECT_NEAR(q.at(0, 0), 0.25 + 1e-7, 1e-15);
  EXPECT_NEAR(q.at(2, 2), 0.0025 + 1e-7, 1e-15);
  EXPECT_GT(min_eigenvalue(r), 0.0);
}

TEST(Noise, RejectsBadConfigurationAndShapes) {
  NoiseConfig cfg = default_noise_config(NoiseMode::homoscedastic, 4);
  cfg.process_diag[1] = 0.0;
  EXPECT_THROW(init_noise(cfg), ConfigError);
  const NoiseConfig good = default_noise_config(NoiseMode::homoscedastic, 4);
  ad::ParameterSet p;
  p.add("noise.l_r", ad::Tensor::zeros(ad::Shape::vector(15)));
  p.add("noise.l_q", ad::Tensor::zeros(ad::Shape::vector(10)));
  EXPECT_THROW(BoundNoise(good, p), ShapeError);
  EXPECT_THROW(parse_noise_mode("diagonal"), ConfigError);
  EXPECT_EQ(parse_noise_mode("hetero"), NoiseMode::heteroscedastic);
}

TEST(Noise, GradientsMatchFiniteDifferences) {
  const NoiseConfig cfg = default_noise_config(NoiseMode::heteroscedastic, 5);
  ad::ParameterSet params = init_noise(cfg);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g(0.0, 0.2);
  for (const auto& [name, t] : ad::ParameterSet(params)) {
    std::vector<double> v(t.values().begin(), t.values().end());
    for (double& e : v) e += g(rng);
    params.set(name, ad::Tensor(t.shape(), v));
  }
  const ad::Tensor x = ad::Tensor::vector({2.0, 0.3, -0.5, 2.2, 0.7});
  const ad::LossFn loss = [&](const ad::ParameterSet& p) {
    const BoundNoise noise(cfg, p);
    const ad::Tensor r = noise.process_covariance(x);
    const ad::Tensor q = noise.measurement_covariance(x);
    // Log-determinant through the Cholesky factor plus a quadratic form.
    const ad::Tensor lq = ad::cholesky(q);
    const ad::Tensor z = ad::lower_triangular_solve(
        lq, ad::Tensor::vector({0.3, -0.1, 0.05, 0.2}));
    return ad::sum(ad::square(z)) + ad::sum(ad::square(r));
  };
  const auto res = ad::grad_check(loss, params, {1e-6, 40, 1});
  EXPECT_LT(res.max_rel_error, 1e-4) << res.worst;
}

}  // namespace
}  // namespace dukf
