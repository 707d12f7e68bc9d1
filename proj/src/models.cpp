#include "dukf/models.hpp"

#include <cmath>

namespace dukf {

namespace {

const char* const kPacejkaNames[12] = {
    "bx", "cx", "dx", "ex",  //
    "by_f", "cy_f", "dy_f", "ey_f",  //
    "by_r", "cy_r", "dy_r", "ey_r"};

template <class P>
std::array<P*, 12> pacejka_fields(PacejkaT<P>& pp) {
  return {&pp.bx,   &pp.cx,   &pp.dx,   &pp.ex,   &pp.by_f, &pp.cy_f,
          &pp.dy_f, &pp.ey_f, &pp.by_r, &pp.cy_r, &pp.dy_r, &pp.ey_r};
}

std::string net_prefix(ModelKind kind) {
  switch (kind) {
    case ModelKind::pcr:
      return "dyn.residual";
    case ModelKind::nn:
      return "dyn.net";
    case ModelKind::nnt:
    case ModelKind::nntf:
      return "dyn.tire";
    case ModelKind::pc:
      break;
  }
  return {};
}

bool uses_pacejka(ModelKind kind) {
  return kind == ModelKind::pc || kind == ModelKind::pcr;
}

ad::Tensor row_scale(const std::array<double, kStateDim>& s) {
  return ad::Tensor::vector({s[0], s[1], s[2], s[3]});
}

}  // namespace

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::pc:
      return "pc";
    case ModelKind::pcr:
      return "pcr";
    case ModelKind::nn:
      return "nn";
    case ModelKind::nnt:
      return "nnt";
    case ModelKind::nntf:
      return "nntf";
  }
  return "?";
}

ModelKind parse_model_kind(const std::string& name) {
  std::string lower;
  for (char c : name) lower.push_back(static_cast<char>(std::tolower(c)));
  for (ModelKind k : {ModelKind::pc, ModelKind::pcr, ModelKind::nn,
                      ModelKind::nnt, ModelKind::nntf})
    if (to_string(k) == lower) return k;
  throw ConfigError("model.kind", "unknown model kind '" + name +
                                      "' (expected pc, pcr, nn, nnt or nntf)");
}

std::vector<std::size_t> default_hidden(ModelKind kind) {
  if (kind == ModelKind::pcr || kind == ModelKind::nn) return {256, 256, 256};
  return {64, 64, 64};
}

void DynamicsConfig::validate() const {
  vehicle.validate();
  pacejka.validate();
  if (kind == ModelKind::nntf && !augmented)
    throw ConfigError("model.augmented",
                      "the friction-scaled tire model needs the friction state");
  if (kind != ModelKind::pc && hidden.empty())
    throw ConfigError("model.hidden", "at least one hidden layer is required");
  for (std::size_t h : hidden)
    if (h == 0) throw ConfigError("model.hidden", "hidden widths must be positive");
  if (!(force_scale > 0.0))
    throw ConfigError("model.force_scale", "must be positive");
  for (double s : derivative_scale)
    if (!(s > 0.0))
      throw ConfigError("model.derivative_scale", "entries must be positive");
  for (double d : features.divisors)
    if (!(d > 0.0))
      throw ConfigError("model.feature_scales", "entries must be positive");
  if (frozen_mu && !(*frozen_mu > 0.0))
    throw ConfigError("model.frozen_mu", "must be positive");
}

ad::ParameterSet init_dynamics_params(const DynamicsConfig& cfg) {
  cfg.validate();
  ad::ParameterSet out;
  if (uses_pacejka(cfg.kind)) {
    PacejkaT<double> pp = cfg.pacejka;
    const auto fields = pacejka_fields(pp);
    for (std::size_t i = 0; i < fields.size(); ++i)
      out.add(std::string("dyn.pacejka.") + kPacejkaNames[i],
              ad::Tensor(*fields[i]));
  }
  if (cfg.kind != ModelKind::pc) {
    std::vector<std::size_t> dims{kFeatureDim};
    dims.insert(dims.end(), cfg.hidden.begin(), cfg.hidden.end());
    dims.push_back(4);
    init_mlp(dims, cfg.seed).store(out, net_prefix(cfg.kind));
  }
  return out;
}

BoundDynamics::BoundDynamics(const DynamicsConfig& cfg,
                             const ad::ParameterSet& params)
    : cfg_(cfg) {
  if (uses_pacejka(cfg.kind)) {
    PacejkaT<ad::Tensor> pp;
    const auto fields = pacejka_fields(pp);
    for (std::size_t i = 0; i < fields.size(); ++i)
      *fields[i] = params.at(std::string("dyn.pacejka.") + kPacejkaNames[i]);
    pacejka_ = pp;
  }
  if (cfg.kind != ModelKind::pc) {
    net_ = MlpParams::load(params, net_prefix(cfg.kind));
    if (net_->dims().front() != kFeatureDim || net_->dims().back() != 4)
      throw ShapeError("network for model '" + to_string(cfg.kind) +
                       "' must map 9 features to 4 outputs");
  }
}

StateT<ad::Tensor> state_columns(const ad::Tensor& x) {
  if (x.shape().rank != 2 || x.shape().cols() < kStateDim)
    throw ShapeError("state batch must be N x 4 or N x 5, got " +
                     x.shape().str());
  return {ad::slice(x, 1, 0, 1), ad::slice(x, 1, 1, 2), ad::slice(x, 1, 2, 3),
          ad::slice(x, 1, 3, 4)};
}

TireForcesT<ad::Tensor> BoundDynamics::tire_forces(
    const StateT<ad::Tensor>& x, const ControlT<ad::Tensor>& u,
    const ad::Tensor& mu_column) const {
  switch (cfg_.kind) {
    case ModelKind::pc:
    case ModelKind::pcr: {
      const auto s = compute_slip(x, u, cfg_.vehicle);
      return pacejka_forces(s, *pacejka_, mu_column);
    }
    case ModelKind::nnt:
    case ModelKind::nntf: {
      const ad::Tensor feats =
          encode_features(x, u, cfg_.vehicle, cfg_.features);
      ad::Tensor f = mlp_forward(*net_, feats) * cfg_.force_scale;
      if (cfg_.kind == ModelKind::nntf) f = f * mu_column;
      return {ad::slice(f, 1, 0, 1), ad::slice(f, 1, 1, 2),
              ad::slice(f, 1, 2, 3), ad::slice(f, 1, 3, 4)};
    }
    case ModelKind::nn:
      break;
  }
  throw Error("the full-network model has no tire force output");
}

ad::Tensor BoundDynamics::derivative(const ad::Tensor& x,
                                     const ControlT<ad::Tensor>& u) const {
  const std::size_t n = cfg_.state_dim();
  if (x.shape().rank != 2 || x.shape().cols() != n)
    throw ShapeError("model '" + to_string(cfg_.kind) + "' expects N x " +
                     std::to_string(n) + " states, got " + x.shape().str());
  const StateT<ad::Tensor> s = state_columns(x);

  ad::Tensor mu;
  if (cfg_.frozen_mu)
    mu = ad::Tensor(*cfg_.frozen_mu);
  else if (cfg_.augmented)
    mu = ad::slice(x, 1, 4, 5);
  else
    mu = ad::Tensor(cfg_.pacejka.mu);

  ad::Tensor d;
  if (cfg_.kind == ModelKind::nn) {
    const ad::Tensor feats = encode_features(s, u, cfg_.vehicle, cfg_.features);
    d = mlp_forward(*net_, feats) * row_scale(cfg_.derivative_scale);
  } else {
    const auto f = tire_forces(s, u, mu);
    const auto ds =
        single_track_derivative(s, u, cfg_.vehicle, f, cfg_.sign_mode);
    d = ad::concat({ds.vx, ds.vy, ds.r, ds.omega_s}, 1);
    if (cfg_.kind == ModelKind::pcr) {
      const ad::Tensor feats =
          encode_features(s, u, cfg_.vehicle, cfg_.features);
      d = d + mlp_forward(*net_, feats) * row_scale(cfg_.derivative_scale);
    }
  }
  if (cfg_.augmented)
    d = ad::concat(
        {d, ad::Tensor::zeros(ad::Shape::matrix(x.shape().rows(), 1))}, 1);
  return d;
}

ad::Tensor measurement_batch(const ad::Tensor& x, const ad::Tensor& xdot) {
  const StateT<ad::Tensor> s = state_columns(x);
  const ad::Tensor vx_dot = ad::slice(xdot, 1, 0, 1);
  const ad::Tensor vy_dot = ad::slice(xdot, 1, 1, 2);
  return ad::concat({vx_dot - s.r * s.vy, vy_dot + s.r * s.vx, s.r, s.omega_s},
                    1);
}

}  // namespace dukf
