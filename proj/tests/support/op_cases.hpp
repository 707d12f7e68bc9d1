#pragma once

// Random inputs and one case per autodiff op kind, shared by the unit and
// acceptance suites.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "dukf/autodiff.hpp"

namespace dukf::test_support {

inline ad::Tensor random_tensor(ad::Shape shape, std::mt19937_64& rng, double lo = -1.0,
                                double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(shape.size());
  for (auto& x : v) x = u(rng);
  return ad::Tensor(shape, std::move(v));
}

inline ad::Tensor random_spd(std::size_t n, std::mt19937_64& rng) {
  const ad::Tensor a = random_tensor(ad::Shape::matrix(n, n), rng);
  return ad::matmul(a, ad::transpose(a)) + ad::Tensor::identity(n) * static_cast<double>(n);
}

inline ad::Tensor random_lower(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j <= i; ++j) v[i * n + j] = i == j ? 1.0 + std::abs(u(rng)) : u(rng);
  return ad::Tensor::matrix(n, n, std::move(v));
}

// Scalar probe <out, weights> so every output entry gets a distinct cotangent.
inline ad::Tensor probe(const ad::Tensor& out, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return ad::sum(ad::hadamard(out, random_tensor(out.shape(), rng)));
}

struct OpCase {
  ad::OpKind kind;
  std::string name;
  std::vector<ad::Tensor> inputs;
  std::function<ad::Tensor(const std::vector<ad::Tensor>&)> op;
};

inline std::vector<OpCase> op_cases() {
  using namespace ad;
  std::mt19937_64 rng(21);
  const auto m = [&](std::size_t r, std::size_t c) { return random_tensor(Shape::matrix(r, c), rng); };
  const auto v = [&](std::size_t n) { return random_tensor(Shape::vector(n), rng); };
  const auto pos = [&](Shape s) { return random_tensor(s, rng, 0.5, 2.0); };
  std::vector<OpCase> c;
  c.push_back({OpKind::add, "add", {m(3, 4), v(4)}, [](auto& x) { return add(x[0], x[1]); }});
  c.push_back({OpKind::subtract, "subtract", {m(3, 4), m(3, 1)}, [](auto& x) { return subtract(x[0], x[1]); }});
  c.push_back({OpKind::hadamard, "hadamard", {m(5, 2), m(5, 2)}, [](auto& x) { return hadamard(x[0], x[1]); }});
  c.push_back({OpKind::divide, "divide", {m(4, 3), pos(Shape::matrix(4, 3))}, [](auto& x) { return divide(x[0], x[1]); }});
  c.push_back({OpKind::scale, "scale", {m(3, 3)}, [](auto& x) { return scale(x[0], -1.7); }});
  c.push_back({OpKind::offset, "offset", {v(6)}, [](auto& x) { return offset(x[0], 0.3); }});
  c.push_back({OpKind::negate, "negate", {v(6)}, [](auto& x) { return negate(x[0]); }});
  c.push_back({OpKind::matmul, "matmul", {m(11, 9), m(9, 64)}, [](auto& x) { return matmul(x[0], x[1]); }});
  c.push_back({OpKind::matmul, "matmul_vec", {m(4, 5), v(5)}, [](auto& x) { return matmul(x[0], x[1]); }});
  c.push_back({OpKind::transpose, "transpose", {m(3, 5)}, [](auto& x) { return transpose(x[0]); }});
  c.push_back({OpKind::tanh, "tanh", {m(8, 8)}, [](auto& x) { return tanh(x[0]); }});
  c.push_back({OpKind::sin, "sin", {v(7)}, [](auto& x) { return sin(x[0]); }});
  c.push_back({OpKind::cos, "cos", {v(7)}, [](auto& x) { return cos(x[0]); }});
  c.push_back({OpKind::atan, "atan", {m(3, 3)}, [](auto& x) { return atan(x[0] * 3.0); }});
  c.push_back({OpKind::abs, "abs", {pos(Shape::vector(5))}, [](auto& x) { return abs(x[0] - 3.0); }});
  c.push_back({OpKind::square, "square", {m(2, 6)}, [](auto& x) { return square(x[0]); }});
  c.push_back({OpKind::sqrt_elementwise, "sqrt", {pos(Shape::vector(5))}, [](auto& x) { return sqrt(x[0]); }});
  c.push_back({OpKind::clamp_min, "clamp_min", {pos(Shape::vector(6))}, [](auto& x) { return clamp_min(x[0], 0.25); }});
  c.push_back({OpKind::sum, "sum", {m(4, 4)}, [](auto& x) { return sum(x[0]); }});
  c.push_back({OpKind::mean, "mean", {m(4, 4)}, [](auto& x) { return mean(x[0]); }});
  c.push_back({OpKind::slice, "slice_rows", {m(6, 4)}, [](auto& x) { return slice(x[0], 0, 1, 4); }});
  c.push_back({OpKind::slice, "slice_cols", {m(6, 4)}, [](auto& x) { return slice(x[0], 1, 2, 4); }});
  c.push_back({OpKind::slice, "slice_vec", {v(9)}, [](auto& x) { return slice(x[0], 0, 3, 7); }});
  c.push_back({OpKind::concat, "concat_cols", {m(3, 2), m(3, 1), m(3, 4)},
               [](auto& x) { return concat({x[0], x[1], x[2]}, 1); }});
  c.push_back({OpKind::concat, "concat_rows", {m(2, 3), m(4, 3)}, [](auto& x) { return concat({x[0], x[1]}, 0); }});
  c.push_back({OpKind::outer, "outer", {v(4), v(5)}, [](auto& x) { return outer(x[0], x[1]); }});
  c.push_back({OpKind::reshape, "reshape", {v(12)}, [](auto& x) { return reshape(x[0], Shape::matrix(3, 4)); }});
  c.push_back({OpKind::tril_from_entries, "tril_from_entries", {v(15)}, [](auto& x) { return tril_from_entries(x[0], 5); }});
  c.push_back({OpKind::cholesky, "cholesky", {random_spd(5, rng)},
               [](auto& x) { return cholesky((x[0] + transpose(x[0])) * 0.5); }});
  c.push_back({OpKind::lower_triangular_solve, "lower_solve", {random_lower(5, rng), m(5, 3)},
               [](auto& x) { return lower_triangular_solve(x[0], x[1]); }});
  c.push_back({OpKind::lower_triangular_solve, "lower_solve_t", {random_lower(4, rng), v(4)},
               [](auto& x) { return lower_triangular_solve(x[0], x[1], true); }});
  return c;
}

// Directional check: <grad, v> against (f(x + eps v) - f(x - eps v)) / 2 eps
// for a random direction v over all inputs.
inline double jvp_relative_error(const OpCase& c, double eps = 1e-6) {
  const auto f = [&](const std::vector<ad::Tensor>& x) { return probe(c.op(x), 77); };
  ad::Tape tape;
  std::vector<ad::Tensor> bound;
  for (const auto& t : c.inputs) bound.push_back(tape.watch(t));
  const auto grads = tape.backward(f(bound));

  std::mt19937_64 rng(1234);
  std::vector<ad::Tensor> dirs;
  for (const auto& t : c.inputs) dirs.push_back(random_tensor(t.shape(), rng));
  double analytic = 0.0;
  for (std::size_t i = 0; i < c.inputs.size(); ++i) {
    const auto& g = grads[static_cast<std::size_t>(bound[i].node())];
    for (std::size_t k = 0; k < g.size(); ++k) analytic += g[k] * dirs[i][k];
  }
  const auto shifted = [&](double sign) {
    std::vector<ad::Tensor> x;
    for (std::size_t i = 0; i < c.inputs.size(); ++i) x.push_back(c.inputs[i] + dirs[i] * (sign * eps));
    return f(x).item();
  };
  const double numeric = (shifted(1.0) - shifted(-1.0)) / (2.0 * eps);
  return std::abs(analytic - numeric) /
         std::max({std::abs(analytic), std::abs(numeric), 1e-12});
}

}  // namespace dukf::test_support
