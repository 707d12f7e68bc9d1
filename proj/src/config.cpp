#include "dukf/config.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>

#include "dukf/text.hpp"

#include <toml.hpp>

extern char** environ;

namespace dukf {

// ---- values ------------------------------------------------------------------------

ConfigValue ConfigValue::of(double v) {
  ConfigValue c;
  c.kind = Kind::number;
  c.number = v;
  return c;
}

ConfigValue ConfigValue::of(bool v) {
  ConfigValue c;
  c.kind = Kind::boolean;
  c.boolean = v;
  return c;
}

ConfigValue ConfigValue::of(std::string v) {
  ConfigValue c;
  c.kind = Kind::string;
  c.text = std::move(v);
  return c;
}

ConfigValue ConfigValue::list(std::vector<ConfigValue> v) {
  ConfigValue c;
  c.kind = Kind::array;
  c.items = std::move(v);
  return c;
}

namespace {

// ---- typed field helpers -------------------------------------------------------------

[[noreturn]] void type_error(const std::string& path, const char* expected) {
  throw ConfigError(path, std::string("expected ") + expected);
}

double as_number(const std::string& path, const ConfigValue& v) {
  if (v.kind != ConfigValue::Kind::number) type_error(path, "a number");
  if (!std::isfinite(v.number)) throw ConfigError(path, "must be finite");
  return v.number;
}

std::size_t as_count(const std::string& path, const ConfigValue& v) {
  const double d = as_number(path, v);
  if (d < 0.0 || d != std::floor(d) || d > 9.0e15)
    type_error(path, "a non-negative integer");
  return static_cast<std::size_t>(d);
}

std::vector<double> as_numbers(const std::string& path, const ConfigValue& v) {
  if (v.kind != ConfigValue::Kind::array) type_error(path, "an array of numbers");
  std::vector<double> out;
  for (const auto& item : v.items) out.push_back(as_number(path, item));
  return out;
}

ConfigValue numbers_value(std::span<const double> v) {
  std::vector<ConfigValue> items;
  for (double d : v) items.push_back(ConfigValue::of(d));
  return ConfigValue::list(std::move(items));
}

void add_number(ConfigSchema& s, const std::string& path, double& ref) {
  s.add({path, [&ref, path](const ConfigValue& v) { ref = as_number(path, v); },
         [&ref] { return ConfigValue::of(ref); }});
}

void add_count(ConfigSchema& s, const std::string& path, std::size_t& ref) {
  s.add({path, [&ref, path](const ConfigValue& v) { ref = as_count(path, v); },
         [&ref] { return ConfigValue::of(static_cast<double>(ref)); }});
}

void add_int(ConfigSchema& s, const std::string& path, int& ref) {
  s.add({path,
         [&ref, path](const ConfigValue& v) {
           ref = static_cast<int>(as_count(path, v));
         },
         [&ref] { return ConfigValue::of(static_cast<double>(ref)); }});
}

void add_seed(ConfigSchema& s, const std::string& path, std::uint64_t& ref) {
  s.add({path,
         [&ref, path](const ConfigValue& v) {
           ref = static_cast<std::uint64_t>(as_count(path, v));
         },
         [&ref] { return ConfigValue::of(static_cast<double>(ref)); }});
}

void add_bool(ConfigSchema& s, const std::string& path, bool& ref) {
  s.add({path,
         [&ref, path](const ConfigValue& v) {
           if (v.kind != ConfigValue::Kind::boolean) type_error(path, "true or false");
           ref = v.boolean;
         },
         [&ref] { return ConfigValue::of(ref); }});
}

void add_string(ConfigSchema& s, const std::string& path, std::string& ref) {
  s.add({path,
         [&ref, path](const ConfigValue& v) {
           if (v.kind != ConfigValue::Kind::string) type_error(path, "a quoted string");
           ref = v.text;
         },
         [&ref] { return ConfigValue::of(ref); }});
}

template <class E>
void add_enum(ConfigSchema& s, const std::string& path, E& ref,
              E (*parse)(const std::string&)) {
  s.add({path,
         [&ref, path, parse](const ConfigValue& v) {
           if (v.kind != ConfigValue::Kind::string) type_error(path, "a quoted string");
           try {
             ref = parse(v.text);
           } catch (const ConfigError& e) {
             throw ConfigError(path, e.detail());
           }
         },
         [&ref] { return ConfigValue::of(to_string(ref)); }});
}

template <std::size_t N>
void add_fixed_numbers(ConfigSchema& s, const std::string& path,
                       std::array<double, N>& ref) {
  s.add({path,
         [&ref, path](const ConfigValue& v) {
           const auto values = as_numbers(path, v);
           if (values.size() != N)
             throw ConfigError(path, "expected " + std::to_string(N) + " entries, got " +
                                         std::to_string(values.size()));
           std::copy(values.begin(), values.end(), ref.begin());
         },
         [&ref] { return numbers_value(ref); }});
}

void add_numbers(ConfigSchema& s, const std::string& path, std::vector<double>& ref) {
  s.add({path, [&ref, path](const ConfigValue& v) { ref = as_numbers(path, v); },
         [&ref] { return numbers_value(ref); }});
}

void add_vehicle(ConfigSchema& s, VehicleParams& p) {
  add_number(s, "vehicle.m", p.m);
  add_number(s, "vehicle.iz", p.iz);
  add_number(s, "vehicle.lf", p.lf);
  add_number(s, "vehicle.lr", p.lr);
  add_number(s, "vehicle.wheel_radius", p.wheel_radius);
  add_number(s, "vehicle.ie", p.ie);
  add_number(s, "vehicle.k_phi", p.k_phi);
  add_number(s, "vehicle.k_tc", p.k_tc);
  add_number(s, "vehicle.k_tv", p.k_tv);
  add_number(s, "vehicle.c_drag", p.c_drag);
  add_number(s, "vehicle.delta_max", p.delta_max);
}

void add_pacejka(ConfigSchema& s, PacejkaParams& p) {
  add_number(s, "pacejka.bx", p.bx);
  add_number(s, "pacejka.cx", p.cx);
  add_number(s, "pacejka.dx", p.dx);
  add_number(s, "pacejka.ex", p.ex);
  add_number(s, "pacejka.by_f", p.by_f);
  add_number(s, "pacejka.cy_f", p.cy_f);
  add_number(s, "pacejka.dy_f", p.dy_f);
  add_number(s, "pacejka.ey_f", p.ey_f);
  add_number(s, "pacejka.by_r", p.by_r);
  add_number(s, "pacejka.cy_r", p.cy_r);
  add_number(s, "pacejka.dy_r", p.dy_r);
  add_number(s, "pacejka.ey_r", p.ey_r);
  add_number(s, "pacejka.mu", p.mu);
}

void add_model(ConfigSchema& s, DynamicsConfig& m) {
  add_enum(s, "model.kind", m.kind, &parse_model_kind);
  add_bool(s, "model.augmented", m.augmented);
  s.add({"model.hidden",
         [&m](const ConfigValue& v) {
           std::vector<std::size_t> h;
           if (v.kind != ConfigValue::Kind::array) type_error("model.hidden", "an array");
           for (const auto& item : v.items) h.push_back(as_count("model.hidden", item));
           m.hidden = std::move(h);
         },
         [&m] {
           std::vector<ConfigValue> items;
           for (std::size_t h : m.hidden) items.push_back(ConfigValue::of(static_cast<double>(h)));
           return ConfigValue::list(std::move(items));
         }});
  add_number(s, "model.force_scale", m.force_scale);
  add_fixed_numbers(s, "model.derivative_scale", m.derivative_scale);
  add_fixed_numbers(s, "model.feature_scales", m.features.divisors);
  add_enum(s, "model.sign_mode", m.sign_mode, &parse_sign_mode);
  s.add({"model.frozen_mu",
         [&m](const ConfigValue& v) {
           if (v.kind == ConfigValue::Kind::string && v.text == "none") {
             m.frozen_mu.reset();
             return;
           }
           m.frozen_mu = as_number("model.frozen_mu", v);
         },
         [&m] {
           return m.frozen_mu ? ConfigValue::of(*m.frozen_mu) : ConfigValue::of(std::string("none"));
         }});
  add_seed(s, "model.seed", m.seed);
}

void add_noise(ConfigSchema& s, NoiseConfig& n) {
  add_enum(s, "noise.mode", n.mode, &parse_noise_mode);
  add_number(s, "noise.epsilon", n.epsilon);
  add_numbers(s, "noise.process_diag", n.process_diag);
  add_numbers(s, "noise.measurement_diag", n.measurement_diag);
  add_numbers(s, "noise.state_scales", n.state_scales);
}

void assign(ConfigSchema& schema, const std::string& path, const ConfigValue& v,
            const std::string& where) {
  if (!schema.contains(path))
    throw ConfigError(path, where + "unknown configuration key");
  try {
    schema.at(path).set(v);
  } catch (const ConfigError& e) {
    throw ConfigError(path, where + e.detail());
  }
}

ConfigValue from_toml(const toml::node& node, const std::string& path) {
  if (const auto* arr = node.as_array()) {
    std::vector<ConfigValue> items;
    for (const auto& item : *arr) items.push_back(from_toml(item, path));
    return ConfigValue::list(std::move(items));
  }
  if (auto v = node.value_exact<double>()) return ConfigValue::of(*v);
  if (auto v = node.value_exact<std::int64_t>()) return ConfigValue::of(static_cast<double>(*v));
  if (auto v = node.value_exact<bool>()) return ConfigValue::of(*v);
  if (auto v = node.value_exact<std::string>()) return ConfigValue::of(*v);
  throw ConfigError(path, "expected a number, boolean, string or array");
}

std::string quote(const std::string& text) {
  std::string out = "\"";
  for (char c : text) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      default: out.push_back(c);
    }
  }
  return out + "\"";
}

std::string where(const std::string& origin, const toml::source_region& src) {
  return origin + ":" + std::to_string(src.begin.line) + ": ";
}

}  // namespace

ConfigValue parse_config_value(std::string_view text) {
  try {
    const toml::table t = toml::parse("v = " + std::string(text));
    return from_toml(*t.get("v"), "value");
  } catch (const toml::parse_error& e) {
    throw std::invalid_argument(std::string(e.description()) + " in '" + std::string(text) + "'");
  }
}

std::string render_config_value(const ConfigValue& v) {
  switch (v.kind) {
    case ConfigValue::Kind::number:
      return format_double(v.number);
    case ConfigValue::Kind::boolean:
      return v.boolean ? "true" : "false";
    case ConfigValue::Kind::string:
      return quote(v.text);
    case ConfigValue::Kind::array: {
      std::string out = "[";
      for (std::size_t i = 0; i < v.items.size(); ++i) {
        if (i) out += ", ";
        out += render_config_value(v.items[i]);
      }
      return out + "]";
    }
  }
  return {};
}

namespace {

ConfigValue parse_loose(const std::string& text) {
  try {
    return parse_config_value(text);
  } catch (const std::invalid_argument&) {
    return ConfigValue::of(trim(text));
  }
}

}  // namespace

// ---- schema ------------------------------------------------------------------------

void ConfigSchema::add(ConfigField f) {
  if (!index_.emplace(f.path, fields_.size()).second)
    throw Error("duplicate configuration key '" + f.path + "'");
  fields_.push_back(std::move(f));
}

const ConfigField& ConfigSchema::at(const std::string& path) const {
  auto it = index_.find(path);
  if (it == index_.end()) throw ConfigError(path, "unknown configuration key");
  return fields_[it->second];
}

bool ConfigSchema::contains(const std::string& path) const {
  return index_.count(path) > 0;
}

ConfigSchema model_schema(DynamicsConfig& model, NoiseConfig& noise) {
  ConfigSchema s;
  add_model(s, model);
  add_vehicle(s, model.vehicle);
  add_pacejka(s, model.pacejka);
  add_noise(s, noise);
  return s;
}

ConfigSchema run_config_schema(RunConfig& c) {
  ConfigSchema s = model_schema(c.model, c.noise);

  add_number(s, "ukf.alpha", c.ukf.alpha);
  add_number(s, "ukf.beta", c.ukf.beta);
  add_number(s, "ukf.kappa", c.ukf.kappa_ut);
  add_number(s, "ukf.ts", c.ukf.ts);
  add_number(s, "ukf.mu_min", c.ukf.mu_min);
  add_number(s, "ukf.mu_max", c.ukf.mu_max);
  add_number(s, "ukf.jitter", c.ukf.jitter);
  add_int(s, "ukf.jitter_retries", c.ukf.jitter_retries);

  add_number(s, "init.p0_diag", c.init.p0_diag);
  add_number(s, "init.mu_prior", c.init.mu_prior);
  add_number(s, "init.mu_var", c.init.mu_var);

  add_number(s, "train.lr", c.train.lr);
  add_count(s, "train.pretrain_epochs", c.train.pretrain_epochs);
  add_count(s, "train.finetune_epochs", c.train.finetune_epochs);
  add_count(s, "train.seq_len", c.train.seq_len);
  add_count(s, "train.batch_size", c.train.batch_size);
  add_count(s, "train.pretrain_batch", c.train.pretrain_batch);
  add_fixed_numbers(s, "train.state_weights", c.train.state_weights);
  add_number(s, "train.grad_clip", c.train.grad_clip);
  add_number(s, "train.max_divergence", c.train.max_divergence);
  add_bool(s, "train.freeze_noise", c.train.freeze_noise);
  add_bool(s, "train.freeze_dynamics", c.train.freeze_dynamics);
  add_count(s, "train.workers", c.train.workers);
  add_count(s, "train.val_every", c.train.val_every);
  add_count(s, "train.val_sequences", c.train.val_sequences);
  add_count(s, "train.checkpoint_every", c.train.checkpoint_every);
  add_seed(s, "train.seed", c.train.seed);

  add_number(s, "sim.duration", c.sim.duration);
  add_number(s, "sim.record_hz", c.sim.record_hz);
  add_number(s, "sim.integration_hz", c.sim.integration_hz);
  add_number(s, "sim.initial_speed", c.sim.initial_speed);
  add_number(s, "sim.segment_s", c.sim.segment_s);
  add_number(s, "sim.max_speed", c.sim.max_speed);
  add_number(s, "sim.steer_rate", c.sim.steer_rate);
  s.add({"sim.friction_t",
         [&c](const ConfigValue& v) {
           const auto t = as_numbers("sim.friction_t", v);
           c.sim.friction.resize(t.size());
           for (std::size_t i = 0; i < t.size(); ++i) c.sim.friction[i].t = t[i];
         },
         [&c] {
           std::vector<double> t;
           for (const auto& k : c.sim.friction) t.push_back(k.t);
           return numbers_value(t);
         }});
  s.add({"sim.friction_mu",
         [&c](const ConfigValue& v) {
           const auto mu = as_numbers("sim.friction_mu", v);
           if (mu.size() != c.sim.friction.size())
             throw ConfigError("sim.friction_mu",
                               "needs one entry per sim.friction_t knot (" +
                                   std::to_string(c.sim.friction.size()) + ")");
           for (std::size_t i = 0; i < mu.size(); ++i) c.sim.friction[i].mu = mu[i];
         },
         [&c] {
           std::vector<double> mu;
           for (const auto& k : c.sim.friction) mu.push_back(k.mu);
           return numbers_value(mu);
         }});
  add_number(s, "sim.noise_accel", c.sim.noise.accel);
  add_number(s, "sim.noise_gyro", c.sim.noise.gyro);
  add_number(s, "sim.noise_wheel", c.sim.noise.wheel);
  s.add({"sim.maneuvers",
         [&c](const ConfigValue& v) {
           if (v.kind != ConfigValue::Kind::array)
             type_error("sim.maneuvers", "an array of quoted names");
           std::vector<Maneuver> m;
           for (const auto& item : v.items) {
             if (item.kind != ConfigValue::Kind::string)
               type_error("sim.maneuvers", "an array of quoted names");
             m.push_back(parse_maneuver(item.text));
           }
           c.sim.maneuvers = std::move(m);
         },
         [&c] {
           std::vector<ConfigValue> items;
           for (Maneuver m : c.sim.maneuvers) items.push_back(ConfigValue::of(to_string(m)));
           return ConfigValue::list(std::move(items));
         }});
  add_seed(s, "sim.seed", c.sim.seed);

  add_number(s, "data.rate_hz", c.data.rate_hz);
  add_count(s, "data.savgol_window", c.data.savgol_window);
  add_count(s, "data.savgol_order", c.data.savgol_order);
  add_fixed_numbers(s, "data.split", c.data.split);

  add_fixed_numbers(s, "eval.weights", c.eval.weights);
  add_count(s, "eval.burn_in", c.eval.burn_in);
  add_count(s, "eval.sequence_rows", c.eval.sequence_rows);

  add_string(s, "paths.dataset", c.paths.dataset);
  add_string(s, "paths.checkpoint", c.paths.checkpoint);
  add_string(s, "paths.report", c.paths.report);
  add_string(s, "paths.log", c.paths.log);
  return s;
}

// ---- run config ------------------------------------------------------------------------

RunConfig::RunConfig() {
  // Empty means the width for the model kind (see make_bundle).
  model.hidden.clear();
}

NoiseConfig RunConfig::noise_for_model() const {
  NoiseConfig n = noise;
  n.n_x = model.state_dim();
  n.n_y = kMeasurementDim;
  if (n.process_diag.size() > n.n_x) n.process_diag.resize(n.n_x);
  if (n.state_scales.size() > n.n_x) n.state_scales.resize(n.n_x);
  return n;
}

void RunConfig::validate() const {
  DynamicsConfig m = model;
  if (m.hidden.empty()) m.hidden = default_hidden(m.kind);
  m.validate();
  if (noise.process_diag.size() != kAugmentedStateDim)
    throw ConfigError("noise.process_diag", "expected 5 entries (vx, vy, r, omega_s, mu)");
  if (noise.state_scales.size() != kAugmentedStateDim)
    throw ConfigError("noise.state_scales", "expected 5 entries (vx, vy, r, omega_s, mu)");
  noise_for_model().validate();
  ukf.validate(model.state_dim());
  if (!(init.p0_diag > 0.0)) throw ConfigError("init.p0_diag", "must be positive");
  if (!(init.mu_var > 0.0)) throw ConfigError("init.mu_var", "must be positive");
  if (!(init.mu_prior >= ukf.mu_min && init.mu_prior <= ukf.mu_max))
    throw ConfigError("init.mu_prior", "must lie within [ukf.mu_min, ukf.mu_max]");
  train.validate();
  sim.validate();
  if (!(data.rate_hz > 0.0)) throw ConfigError("data.rate_hz", "must be positive");
  if (data.savgol_window % 2 == 0 || data.savgol_window < data.savgol_order + 2)
    throw ConfigError("data.savgol_window", "must be odd and at least data.savgol_order + 2");
  if (data.savgol_order < 1) throw ConfigError("data.savgol_order", "must be at least 1");
  double total = 0.0;
  for (double f : data.split) {
    if (!(f >= 0.0)) throw ConfigError("data.split", "fractions must be non-negative");
    total += f;
  }
  if (std::fabs(total - 1.0) > 1e-9) throw ConfigError("data.split", "fractions must sum to 1");
  for (double w : eval.weights)
    if (!(w >= 0.0)) throw ConfigError("eval.weights", "weights must be non-negative");
  if (eval.sequence_rows < 2) throw ConfigError("eval.sequence_rows", "must be at least 2");
}

ModelBundle RunConfig::make_bundle() const {
  validate();
  DynamicsConfig m = model;
  if (m.hidden.empty()) m.hidden = default_hidden(m.kind);
  ModelBundle b;
  b.dynamics = m;
  b.noise = noise_for_model();
  b.params = init_dynamics_params(m);
  b.params.merge(init_noise(b.noise));
  b.validate();
  return b;
}

void apply_config_text(RunConfig& cfg, std::string_view text, const std::string& origin) {
  ConfigSchema schema = run_config_schema(cfg);
  toml::table root;
  try {
    root = toml::parse(text, origin);
  } catch (const toml::parse_error& e) {
    throw ConfigError("config", where(origin, e.source()) + std::string(e.description()));
  }
  std::map<std::string, std::pair<ConfigValue, std::string>> entries;
  for (const auto& [sec_key, sec] : root) {
    const std::string section(sec_key.str());
    const auto* table = sec.as_table();
    if (!table)
      throw ConfigError(section, where(origin, sec.source()) + "expected a [section] table");
    for (const auto& [key, value] : *table) {
      const std::string path = section + "." + std::string(key.str());
      const std::string at = where(origin, value.source());
      if (!schema.contains(path)) throw ConfigError(path, at + "unknown configuration key");
      try {
        entries.emplace(path, std::pair{from_toml(value, path), at});
      } catch (const ConfigError& e) {
        throw ConfigError(path, at + e.detail());
      }
    }
  }
  // Applied in schema order so dependent keys see their predecessors.
  for (const auto& f : schema.fields()) {
    const auto it = entries.find(f.path);
    if (it != entries.end()) assign(schema, f.path, it->second.first, it->second.second);
  }
}

RunConfig parse_config(std::string_view text, const std::string& origin) {
  RunConfig cfg;
  apply_config_text(cfg, text, origin);
  cfg.validate();
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path);
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError(assignment, "override must look like section.key=value");
  const std::string path = trim(std::string_view(assignment).substr(0, eq));
  ConfigSchema schema = run_config_schema(cfg);
  assign(schema, path, parse_loose(assignment.substr(eq + 1)), "");
}

void apply_env_overrides(RunConfig& cfg, const std::map<std::string, std::string>& env) {
  static const std::string prefix = "DUKF__";
  ConfigSchema schema = run_config_schema(cfg);
  for (const auto& [name, value] : env) {
    if (name.rfind(prefix, 0) != 0) continue;
    const std::string rest = name.substr(prefix.size());
    const auto sep = rest.find("__");
    if (sep == std::string::npos)
      throw ConfigError(name, "environment override must be DUKF__SECTION__KEY");
    std::string path = rest.substr(0, sep) + "." + rest.substr(sep + 2);
    for (char& c : path) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    assign(schema, path, parse_loose(value), "environment " + name + ": ");
  }
}

std::map<std::string, std::string> process_environment() {
  std::map<std::string, std::string> out;
  for (char** e = environ; e && *e; ++e) {
    const std::string entry(*e);
    const auto eq = entry.find('=');
    if (eq != std::string::npos) out[entry.substr(0, eq)] = entry.substr(eq + 1);
  }
  return out;
}

std::string dump_config(const RunConfig& cfg) {
  RunConfig copy = cfg;
  const ConfigSchema schema = run_config_schema(copy);
  std::string out, section;
  for (const auto& f : schema.fields()) {
    const auto dot = f.path.find('.');
    const std::string sec = f.path.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) out += "\n";
      out += "[" + sec + "]\n";
      section = sec;
    }
    out += f.path.substr(dot + 1) + " = " + render_config_value(f.get()) + "\n";
  }
  return out;
}

}  // namespace dukf
