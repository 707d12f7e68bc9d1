#include "dukf/mlp.hpp"

#include <cmath>
#include <random>

namespace dukf {

std::vector<std::size_t> MlpParams::dims() const {
  std::vector<std::size_t> d;
  if (weights.empty()) return d;
  d.push_back(weights.front().shape().rows());
  for (const auto& w : weights) d.push_back(w.shape().cols());
  return d;
}

std::size_t MlpParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& w : weights) n += w.size();
  for (const auto& b : biases) n += b.size();
  return n;
}

void MlpParams::store(ad::ParameterSet& out, const std::string& prefix) const {
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const std::string layer = prefix + ".l" + std::to_string(i);
    out.add(layer + ".w", weights[i]);
    out.add(layer + ".b", biases[i]);
  }
}

MlpParams MlpParams::load(const ad::ParameterSet& params,
                          const std::string& prefix) {
  MlpParams net;
  for (std::size_t i = 0;; ++i) {
    const std::string layer = prefix + ".l" + std::to_string(i);
    if (!params.contains(layer + ".w")) break;
    const ad::Tensor& w = params.at(layer + ".w");
    const ad::Tensor& b = params.at(layer + ".b");
    if (w.shape().rank != 2 || b.shape().rank != 1 ||
        b.size() != w.shape().cols())
      throw ShapeError("malformed layer '" + layer + "': weight " +
                       w.shape().str() + ", bias " + b.shape().str());
    if (!net.weights.empty() &&
        net.weights.back().shape().cols() != w.shape().rows())
      throw ShapeError("layer '" + layer + "' input width " +
                       std::to_string(w.shape().rows()) +
                       " does not match previous output width " +
                       std::to_string(net.weights.back().shape().cols()));
    net.weights.push_back(w);
    net.biases.push_back(b);
  }
  if (net.weights.empty())
    throw ShapeError("no network layers found under '" + prefix + "'");
  return net;
}

MlpParams init_mlp(std::span<const std::size_t> dims, std::uint64_t seed,
                   double final_scale) {
  if (dims.size() < 2) throw ShapeError("network needs at least two widths");
  for (std::size_t d : dims)
    if (d == 0) throw ShapeError("network widths must be positive");
  std::mt19937_64 rng(seed);
  MlpParams net;
  const std::size_t layers = dims.size() - 1;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t in = dims[l];
    const std::size_t out = dims[l + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    const double gain = l + 1 == layers ? final_scale : 1.0;
    std::vector<double> w(in * out);
    for (double& v : w) v = gain * dist(rng);
    net.weights.push_back(ad::Tensor::matrix(in, out, std::move(w)));
    net.biases.push_back(ad::Tensor::zeros(ad::Shape::vector(out)));
  }
  return net;
}

ad::Tensor mlp_forward(const MlpParams& net, const ad::Tensor& x) {
  if (net.weights.empty()) throw ShapeError("empty network");
  const std::size_t in = net.weights.front().shape().rows();
  if (x.shape().cols() != in || x.shape().rank == 0)
    throw ShapeError("network expects " + std::to_string(in) +
                     " input features, got shape " + x.shape().str());
  ad::Tensor h = x;
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    h = ad::matmul(h, net.weights[l]) + net.biases[l];
    if (l + 1 < net.weights.size()) h = ad::tanh(h);
  }
  return h;
}

ad::Tensor encode_features(const StateT<ad::Tensor>& x,
                           const ControlT<ad::Tensor>& u,
                           const VehicleParams& p,
                           const FeatureScales& scales) {
  const auto cols = feature_columns(x, u, p, scales);
  // Controls are shared by the whole batch; expand them to full columns.
  const ad::Tensor ones =
      ad::Tensor::filled(ad::Shape::matrix(x.vx.shape().rows(), 1), 1.0);
  std::vector<ad::Tensor> parts;
  parts.reserve(kFeatureDim);
  for (const auto& c : cols)
    parts.push_back(c.shape() == ones.shape() ? c : c * ones);
  return ad::concat(parts, 1);
}

std::array<double, kFeatureDim> encode_features(const VehicleState& x,
                                                const ControlInput& u,
                                                const VehicleParams& p,
                                                const FeatureScales& scales) {
  return feature_columns(x.core(), ControlT<double>{u.delta, u.iq}, p, scales);
}

}  // namespace dukf
