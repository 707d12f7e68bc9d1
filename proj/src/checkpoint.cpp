#include "dukf/checkpoint.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "dukf/config.hpp"

namespace dukf {

namespace {

using nlohmann::ordered_json;

ordered_json to_json(const ConfigValue& v) {
  switch (v.kind) {
    case ConfigValue::Kind::number:
      return v.number;
    case ConfigValue::Kind::boolean:
      return v.boolean;
    case ConfigValue::Kind::string:
      return v.text;
    case ConfigValue::Kind::array: {
      ordered_json arr = ordered_json::array();
      for (const auto& item : v.items) arr.push_back(to_json(item));
      return arr;
    }
  }
  return nullptr;
}

ConfigValue from_json(const nlohmann::json& j, const std::string& key) {
  if (j.is_number()) return ConfigValue::of(j.get<double>());
  if (j.is_boolean()) return ConfigValue::of(j.get<bool>());
  if (j.is_string()) return ConfigValue::of(j.get<std::string>());
  if (j.is_array()) {
    std::vector<ConfigValue> items;
    for (const auto& e : j) items.push_back(from_json(e, key));
    return ConfigValue::list(std::move(items));
  }
  throw DataError("checkpoint key '" + key + "' has an unsupported value type");
}

ordered_json describe(DynamicsConfig model, NoiseConfig noise) {
  ordered_json out = ordered_json::object();
  const ConfigSchema schema = model_schema(model, noise);
  for (const auto& f : schema.fields()) out[f.path] = to_json(f.get());
  return out;
}

void restore(const nlohmann::json& j, DynamicsConfig& model, NoiseConfig& noise) {
  ConfigSchema schema = model_schema(model, noise);
  for (const auto& [key, value] : j.items()) {
    if (!schema.contains(key)) throw DataError("checkpoint has unknown model key '" + key + "'");
    schema.at(key).set(from_json(value, key));
  }
}

// Expected tensor names and shapes for a bundle's configuration.
ad::ParameterSet expected_params(const ModelBundle& b) {
  ad::ParameterSet p = init_dynamics_params(b.dynamics);
  if (b.update_dynamics)
    for (const auto& [name, t] : init_dynamics_params(*b.update_dynamics))
      p.add("upd." + name, t);
  p.merge(init_noise(b.noise));
  return p;
}

}  // namespace

std::string checkpoint_json(const ModelBundle& bundle, const CheckpointMeta& meta) {
  bundle.validate();
  ordered_json j;
  j["format"] = "dukf-checkpoint";
  j["version"] = kCheckpointVersion;
  j["model_kind"] = to_string(bundle.dynamics.kind);
  j["model"] = describe(bundle.dynamics, bundle.noise);
  if (bundle.update_dynamics)
    j["update_model"] = describe(*bundle.update_dynamics, bundle.noise);
  ordered_json tensors = ordered_json::array();
  for (const auto& [name, t] : bundle.params) {
    ordered_json e;
    e["name"] = name;
    e["shape"] = t.shape().extents();
    ordered_json values = ordered_json::array();
    for (double v : t.values()) {
      if (!std::isfinite(v))
        throw NumericError("parameter '" + name + "' is not finite; refusing to save");
      values.push_back(v);
    }
    e["values"] = std::move(values);
    tensors.push_back(std::move(e));
  }
  j["tensors"] = std::move(tensors);
  ordered_json m = ordered_json::object();
  for (const auto& [k, v] : meta) m[k] = v;
  j["meta"] = std::move(m);
  return j.dump(1) + "\n";
}

ModelBundle parse_checkpoint(const std::string& text, const std::string& origin,
                             CheckpointMeta* meta) {
  try {
    const nlohmann::json j = nlohmann::json::parse(text);
    if (j.value("format", "") != "dukf-checkpoint")
      throw DataError(origin + ": not a checkpoint file");
    if (!j.contains("version") || !j["version"].is_number_integer())
      throw DataError(origin + ": missing version field");
    const int version = j["version"].get<int>();
    if (version != kCheckpointVersion)
      throw DataError(origin + ": unsupported checkpoint version " + std::to_string(version));

    ModelBundle b;
    b.dynamics.hidden.clear();
    restore(j.at("model"), b.dynamics, b.noise);
    if (j.contains("update_model")) {
      DynamicsConfig upd;
      NoiseConfig unused = b.noise;
      restore(j.at("update_model"), upd, unused);
      b.update_dynamics = upd;
    }
    b.noise.n_x = b.dynamics.state_dim();
    b.noise.n_y = kMeasurementDim;
    const ad::ParameterSet expected = expected_params(b);

    for (const auto& e : j.at("tensors")) {
      const std::string name = e.at("name").get<std::string>();
      const auto extents = e.at("shape").get<std::vector<std::size_t>>();
      const auto values = e.at("values").get<std::vector<double>>();
      ad::Shape shape;
      if (extents.size() == 1) shape = ad::Shape::vector(extents[0]);
      else if (extents.size() == 2) shape = ad::Shape::matrix(extents[0], extents[1]);
      else if (!extents.empty())
        throw DataError(origin + ": tensor '" + name + "' has rank above 2");
      if (!expected.contains(name))
        throw DataError(origin + ": unexpected tensor '" + name + "' for a " +
                        to_string(b.dynamics.kind) + " model");
      if (!(expected.at(name).shape() == shape))
        throw ShapeError(origin + ": tensor '" + name + "' has shape " + shape.str() +
                         ", model expects " + expected.at(name).shape().str());
      if (values.size() != shape.size())
        throw ShapeError(origin + ": tensor '" + name + "' lists " +
                         std::to_string(values.size()) + " values for shape " + shape.str());
      b.params.add(name, ad::Tensor(shape, values));
    }
    for (const auto& [name, t] : expected)
      if (!b.params.contains(name))
        throw DataError(origin + ": missing tensor '" + name + "'");
    if (meta) {
      meta->clear();
      if (j.contains("meta"))
        for (const auto& [k, v] : j["meta"].items())
          (*meta)[k] = v.is_string() ? v.get<std::string>() : v.dump();
    }
    b.validate();
    return b;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(origin + ": " + e.what());
  } catch (const ConfigError& e) {
    throw DataError(origin + ": " + e.what());
  }
}

void save_checkpoint(const ModelBundle& bundle, const std::string& path,
                     const CheckpointMeta& meta) {
  const std::string body = checkpoint_json(bundle, meta);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint '" + path + "'");
    out << body;
    if (!out) throw DataError("failed writing checkpoint '" + path + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw DataError("cannot move checkpoint into '" + path + "': " + ec.message());
}

ModelBundle load_checkpoint(const std::string& path, CheckpointMeta* meta) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_checkpoint(ss.str(), path, meta);
}

}  // namespace dukf
