#include <gtest/gtest.h>

#include <filesystem>
#include <json.hpp>

#include "dukf/checkpoint.hpp"

namespace dukf {
namespace {

ModelBundle small_bundle(ModelKind kind, NoiseMode mode = NoiseMode::heteroscedastic) {
  DynamicsConfig dyn;
  dyn.kind = kind;
  dyn.augmented = kind == ModelKind::nntf || kind == ModelKind::pc;
  dyn.hidden = {6, 5};
  dyn.seed = 9;
  return make_bundle(dyn, mode);
}

void expect_same(const ModelBundle& a, const ModelBundle& b) {
  EXPECT_EQ(a.params.flat(), b.params.flat());
  ASSERT_EQ(a.params.size(), b.params.size());
  for (const auto& [name, t] : a.params) {
    ASSERT_TRUE(b.params.contains(name)) << name;
    EXPECT_EQ(t.shape(), b.params.at(name).shape()) << name;
  }
  EXPECT_EQ(a.dynamics.kind, b.dynamics.kind);
  EXPECT_EQ(a.dynamics.hidden, b.dynamics.hidden);
  EXPECT_EQ(a.dynamics.augmented, b.dynamics.augmented);
  EXPECT_EQ(a.dynamics.frozen_mu, b.dynamics.frozen_mu);
  EXPECT_EQ(a.noise.mode, b.noise.mode);
  EXPECT_EQ(a.noise.process_diag, b.noise.process_diag);
  EXPECT_EQ(a.update_dynamics.has_value(), b.update_dynamics.has_value());
}

TEST(Checkpoint, RoundTripIsExact) {
  for (ModelKind kind : {ModelKind::pc, ModelKind::pcr, ModelKind::nn, ModelKind::nnt,
                         ModelKind::nntf}) {
    ModelBundle b = small_bundle(kind);
    std::vector<double> flat = b.params.flat();
    for (std::size_t i = 0; i < flat.size(); ++i) flat[i] += 1.0 / (3.0 + i);
    b.params.assign_flat(flat);
    b.dynamics.frozen_mu = 0.43;
    CheckpointMeta meta_out;
    const ModelBundle back =
        parse_checkpoint(checkpoint_json(b, {{"epoch", "12"}}), "<mem>", &meta_out);
    expect_same(b, back);
    EXPECT_EQ(meta_out.at("epoch"), "12");
  }
}

TEST(Checkpoint, SaveAndLoadFile) {
  const auto path = std::filesystem::temp_directory_path() / "dukf_ckpt_test.json";
  const ModelBundle b = small_bundle(ModelKind::nntf);
  save_checkpoint(b, path.string());
  EXPECT_FALSE(std::filesystem::exists(path.string() + ".tmp"));
  expect_same(b, load_checkpoint(path.string()));
  std::filesystem::remove(path);
  EXPECT_THROW(load_checkpoint(path.string()), DataError);
}

TEST(Checkpoint, MixedBundleRoundTrips) {
  const ModelBundle predict = small_bundle(ModelKind::nntf);
  DynamicsConfig exact;
  exact.kind = ModelKind::pc;
  const ModelBundle update = make_bundle(exact, NoiseMode::homoscedastic);
  const ModelBundle mixed = mix_bundles(predict, update);
  ASSERT_TRUE(mixed.update_dynamics);
  EXPECT_EQ(mixed.update_dynamics->kind, ModelKind::pc);
  for (const auto& [name, t] : mixed.params)
    EXPECT_TRUE(name.rfind("upd.noise", 0) != 0) << name;
  const ModelBundle back = parse_checkpoint(checkpoint_json(mixed));
  expect_same(mixed, back);
  EXPECT_EQ(back.update_dynamics->kind, ModelKind::pc);
  EXPECT_THROW(mix_bundles(mixed, update), ConfigError);
}

nlohmann::json as_json(const ModelBundle& b) {
  return nlohmann::json::parse(checkpoint_json(b));
}

std::string load_error(const nlohmann::json& j) {
  try {
    parse_checkpoint(j.dump(), "ck.json");
  } catch (const Error& e) {
    return e.what();
  }
  return "";
}

TEST(Checkpoint, RejectsWrongVersion) {
  nlohmann::json j = as_json(small_bundle(ModelKind::nnt));
  j["version"] = kCheckpointVersion + 1;
  EXPECT_NE(load_error(j).find("version"), std::string::npos);
  j.erase("version");
  EXPECT_NE(load_error(j).find("version"), std::string::npos);
  EXPECT_NE(load_error(nlohmann::json{{"a", 1}}).find("not a checkpoint"), std::string::npos);
  EXPECT_THROW(parse_checkpoint("{not json"), DataError);
}

TEST(Checkpoint, RejectsShapeMismatch) {
  nlohmann::json j = as_json(small_bundle(ModelKind::nnt));
  j["model"]["model.hidden"] = {7, 5};
  const std::string msg = load_error(j);
  EXPECT_NE(msg.find("shape"), std::string::npos) << msg;
  EXPECT_NE(msg.find("ck.json"), std::string::npos) << msg;
}

TEST(Checkpoint, RejectsMissingAndUnknownTensors) {
  nlohmann::json j = as_json(small_bundle(ModelKind::nntf));
  const std::string dropped = j["tensors"][0]["name"];
  j["tensors"].erase(0);
  const std::string msg = load_error(j);
  EXPECT_NE(msg.find("missing tensor '" + dropped + "'"), std::string::npos) << msg;

  nlohmann::json extra = as_json(small_bundle(ModelKind::pc));
  extra["tensors"].push_back({{"name", "dyn.bogus"}, {"shape", {1}}, {"values", {0.0}}});
  EXPECT_NE(load_error(extra).find("dyn.bogus"), std::string::npos);

  nlohmann::json bad_count = as_json(small_bundle(ModelKind::nn));
  bad_count["tensors"][0]["values"].push_back(1.0);
  EXPECT_NE(load_error(bad_count).find("values"), std::string::npos);

  nlohmann::json bad_key = as_json(small_bundle(ModelKind::nn));
  bad_key["model"]["model.bogus"] = 1;
  EXPECT_NE(load_error(bad_key).find("model.bogus"), std::string::npos);
}

TEST(Checkpoint, RefusesNonFiniteParameters) {
  ModelBundle b = small_bundle(ModelKind::nn);
  std::vector<double> flat = b.params.flat();
  flat[0] = std::nan("");
  b.params.assign_flat(flat);
  EXPECT_THROW(checkpoint_json(b), NumericError);
}

}  // namespace
}  // namespace dukf
