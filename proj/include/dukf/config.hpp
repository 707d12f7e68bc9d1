#pragma once

// Run configuration: TOML [section] tables of key = value entries with defaults,
// environment overrides (DUKF__SECTION__KEY) and command-line overrides.

#include <array>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "dukf/data.hpp"
#include "dukf/evaluation.hpp"
#include "dukf/training.hpp"
#include "dukf/ukf.hpp"

namespace dukf {

struct DataConfig {
  double rate_hz = 100.0;
  std::size_t savgol_window = 9;
  std::size_t savgol_order = 2;
  std::array<double, 3> split{0.7, 0.2, 0.1};
};

struct EvalConfig {
  StateWeights weights = kEvalWeights;
  std::size_t burn_in = 0;
  std::size_t sequence_rows = kEvalSequenceRows;
};

struct PathsConfig {
  std::string dataset;
  std::string checkpoint;
  std::string report;
  std::string log;
};

struct RunConfig {
  DynamicsConfig model;
  // Noise settings for the augmented state; the first four entries are used
  // when the model carries no friction state.
  NoiseConfig noise = default_noise_config(NoiseMode::homoscedastic, kAugmentedStateDim);
  UkfConfig ukf;
  InitConfig init;
  TrainConfig train;
  SimConfig sim;
  DataConfig data;
  EvalConfig eval;
  PathsConfig paths;

  RunConfig();
  void validate() const;
  NoiseConfig noise_for_model() const;
  ModelBundle make_bundle() const;
};

// A configuration value: TOML scalar or array.
struct ConfigValue {
  enum class Kind { number, boolean, string, array };
  Kind kind = Kind::number;
  double number = 0.0;
  bool boolean = false;
  std::string text;
  std::vector<ConfigValue> items;

  static ConfigValue of(double v);
  static ConfigValue of(bool v);
  static ConfigValue of(std::string v);
  static ConfigValue list(std::vector<ConfigValue> v);
};

ConfigValue parse_config_value(std::string_view text);
std::string render_config_value(const ConfigValue& v);

// Typed accessors for every configurable key.
struct ConfigField {
  std::string path;  // "section.key"
  std::function<void(const ConfigValue&)> set;
  std::function<ConfigValue()> get;
};

class ConfigSchema {
 public:
  void add(ConfigField f);
  const ConfigField& at(const std::string& path) const;
  bool contains(const std::string& path) const;
  const std::vector<ConfigField>& fields() const { return fields_; }

 private:
  std::vector<ConfigField> fields_;
  std::map<std::string, std::size_t> index_;
};

// Schema bound to the members of `cfg` (which must outlive it).
ConfigSchema run_config_schema(RunConfig& cfg);
// Keys describing a trained model: model, vehicle, pacejka, features, noise.
ConfigSchema model_schema(DynamicsConfig& model, NoiseConfig& noise);

// Applies a TOML document of [section] tables on top of `cfg`.
void apply_config_text(RunConfig& cfg, std::string_view text,
                       const std::string& origin = "<config>");
RunConfig parse_config(std::string_view text, const std::string& origin = "<config>");
RunConfig load_config(const std::string& path);

// "section.key=value" with a TOML value; unquoted text that does not parse
// is taken as a string.
void apply_override(RunConfig& cfg, const std::string& assignment);
// Applies DUKF__SECTION__KEY=value entries of `env` (e.g. from environ).
void apply_env_overrides(RunConfig& cfg, const std::map<std::string, std::string>& env);
std::map<std::string, std::string> process_environment();

// Canonical text form listing every key.
std::string dump_config(const RunConfig& cfg);

}  // namespace dukf
