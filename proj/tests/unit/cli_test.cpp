#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "dukf/checkpoint.hpp"
#include "dukf/pipeline.hpp"

namespace dukf {
namespace {

namespace fs = std::filesystem;

struct Outcome {
  int code = 0;
  std::string out, err;
};

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("dukf_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  Outcome run(std::vector<std::string> args, std::map<std::string, std::string> env = {}) {
    std::ostringstream out, err;
    Outcome r;
    r.code = cli::dispatch(args, env, out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
  }

  static std::string slurp(const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  // Small, fast training settings.
  std::vector<std::string> quick() const {
    return {"--set", "model.hidden=[6,6]",       "--set", "train.pretrain_epochs=2",
            "--set", "train.finetune_epochs=2",  "--set", "train.seq_len=40",
            "--set", "train.batch_size=2",       "--set", "train.pretrain_batch=128",
            "--set", "eval.sequence_rows=150"};
  }

  std::vector<std::string> with(std::vector<std::string> a, const std::vector<std::string>& b) {
    a.insert(a.end(), b.begin(), b.end());
    return a;
  }

  std::string simulate(double seconds = 25) {
    const std::string d = path("d.csv");
    const Outcome r = run({"simulate", "--out", d, "--duration", std::to_string(seconds), "--seed", "5"});
    EXPECT_EQ(r.code, 0) << r.err;
    return d;
  }

  fs::path dir_;
};

TEST_F(CliTest, HelpAndUsageErrors) {
  EXPECT_EQ(run({"--help"}).code, 0);
  EXPECT_EQ(run({}).code, 2);
  EXPECT_EQ(run({"frobnicate"}).code, 2);
  EXPECT_EQ(run({"simulate", "--bogus"}).code, 2);
}

TEST_F(CliTest, EvaluateWithoutCheckpointNamesTheFlag) {
  const Outcome r = run({"evaluate", "--run-filter"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--checkpoint"), std::string::npos) << r.err;
}

TEST_F(CliTest, ConfigErrorsAreUsageErrors) {
  const Outcome r = run({"simulate", "--out", path("x.csv"), "--set", "train.lr=-1"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("train.lr"), std::string::npos) << r.err;
  const std::string cfg = path("bad.toml");
  std::ofstream(cfg) << "[train]\nlearning_rate = 1\n";
  const Outcome bad = run({"simulate", "--out", path("x.csv"), "--config", cfg});
  EXPECT_EQ(bad.code, 2);
  EXPECT_NE(bad.err.find("train.learning_rate"), std::string::npos) << bad.err;
  EXPECT_EQ(run({"simulate"}).code, 2);  // no output path anywhere
  EXPECT_EQ(run({"pretrain", "--data", path("missing.csv"), "--out", path("c.json")}).code, 2);
}

TEST_F(CliTest, SimulateIsReproducibleUnderSeed) {
  const std::string a = path("a.csv"), b = path("b.csv"), c = path("c.csv");
  ASSERT_EQ(run({"simulate", "--out", a, "--duration", "10", "--seed", "7"}).code, 0);
  ASSERT_EQ(run({"simulate", "--out", b, "--duration", "10", "--seed", "7"}).code, 0);
  ASSERT_EQ(run({"simulate", "--out", c, "--duration", "10", "--seed", "8"}).code, 0);
  EXPECT_EQ(slurp(a), slurp(b));
  EXPECT_NE(slurp(a), slurp(c));
  EXPECT_EQ(read_dataset_csv(a).size(), 1000u);
}

TEST_F(CliTest, OverridePrecedence) {
  const std::string cfg = path("run.toml");
  std::ofstream(cfg) << "[sim]\nduration = 3\n[paths]\ndataset = \"" << path("cfg.csv") << "\"\n";
  // Environment beats the file, --set beats the environment.
  const Outcome r = run({"simulate", "--config", cfg}, {{"DUKF__SIM__DURATION", "4"}});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_dataset_csv(path("cfg.csv")).size(), 400u);
  ASSERT_EQ(run({"simulate", "--config", cfg, "--set", "sim.duration=2"},
                {{"DUKF__SIM__DURATION", "4"}})
                .code,
            0);
  EXPECT_EQ(read_dataset_csv(path("cfg.csv")).size(), 200u);
  ASSERT_EQ(run({"simulate", "--config", cfg, "--set", "sim.duration=2", "--duration", "1"}).code, 0);
  EXPECT_EQ(read_dataset_csv(path("cfg.csv")).size(), 100u);
}

TEST_F(CliTest, TrainEstimateEvaluatePipeline) {
  const std::string d = simulate();
  const std::string pre = path("pre.json"), ft = path("ft.json"), log = path("log.csv");
  Outcome r = run(with({"pretrain", "--data", d, "--out", pre, "--log", log}, quick()));
  ASSERT_EQ(r.code, 0) << r.err;
  r = run(with({"finetune", "--data", d, "--checkpoint", pre, "--out", ft, "--log", log,
                "--workers", "2"},
               quick()));
  ASSERT_EQ(r.code, 0) << r.err;
  for (const auto& p : {pre, ft, path("pre.final.json"), path("ft.final.json")})
    EXPECT_NO_THROW(load_checkpoint(p)) << p;
  std::istringstream lines(slurp(log));
  std::string line;
  std::size_t rows = 0;
  while (std::getline(lines, line)) ++rows;
  EXPECT_EQ(rows, 5u);  // header + 2 + 2

  const std::string est = path("est.csv");
  r = run(with({"estimate", "--data", d, "--checkpoint", ft, "--out", est}, quick()));
  ASSERT_EQ(r.code, 0) << r.err;
  const Outcome two_step =
      run(with({"evaluate", "--checkpoint", ft, "--data", d, "--estimates", est}, quick()));
  const Outcome combined =
      run(with({"evaluate", "--checkpoint", ft, "--data", d, "--run-filter"}, quick()));
  ASSERT_EQ(two_step.code, 0) << two_step.err;
  ASSERT_EQ(combined.code, 0) << combined.err;
  EXPECT_EQ(two_step.out, combined.out);
  EXPECT_EQ(two_step.out.rfind("model,dataset,", 0), 0u);

  const std::string json = path("r.json");
  ASSERT_EQ(run(with({"evaluate", "--checkpoint", ft, "--data", d, "--run-filter", "--report",
                      json},
                     quick()))
                .code,
            0);
  EXPECT_EQ(read_report_json(json).at(0).model_id, "ft");
  EXPECT_EQ(run({"evaluate", "--checkpoint", ft, "--data", d}).code, 2);
}

TEST_F(CliTest, TrainingIsReproducibleUnderSeed) {
  const std::string d = simulate(15);
  const std::string a = path("a.json"), b = path("b.json");
  ASSERT_EQ(run(with({"pretrain", "--data", d, "--out", a, "--seed", "3"}, quick())).code, 0);
  ASSERT_EQ(run(with({"pretrain", "--data", d, "--out", b, "--seed", "3"}, quick())).code, 0);
  EXPECT_EQ(slurp(a), slurp(b));
}

TEST_F(CliTest, PeriodicCheckpoints) {
  const std::string d = simulate(15);
  const Outcome r = run(with({"pretrain", "--data", d, "--out", path("p.json"), "--set",
                          "train.checkpoint_every=1"},
                         quick()));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(path("p.epoch00001.json")));
  EXPECT_TRUE(fs::exists(path("p.epoch00002.json")));
}

TEST_F(CliTest, GradcheckPasses) {
  const Outcome r = run({"gradcheck", "--model", "nntf", "--steps", "50"});
  EXPECT_EQ(r.code, 0) << r.out << r.err;
  EXPECT_NE(r.out.find("max relative gradient error"), std::string::npos);
}

TEST_F(CliTest, AblationAndSweep) {
  const std::string d = simulate();
  const std::string pre = path("pre.json");
  ASSERT_EQ(run(with({"pretrain", "--data", d, "--out", pre}, quick())).code, 0);
  Outcome r = run(with({"ablate-mixed", "--data", d, "--checkpoint", pre, "--checkpoint",
                    path("pre.final.json")},
                   quick()));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("pre+pre.final"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("pre.final+pre,"), std::string::npos) << r.out;

  const std::string csv = path("sweep.csv");
  r = run(with({"sweep-seqlen", "--data", d, "--checkpoint", pre, "--lengths", "8,16", "--out",
                csv},
               quick()));
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string text = slurp(csv);
  EXPECT_EQ(text.rfind("seq_len,epochs,", 0), 0u);
  EXPECT_NE(text.find("\n8,2,"), std::string::npos) << text;
  EXPECT_NE(text.find("\n16,2,"), std::string::npos) << text;
  EXPECT_EQ(run({"sweep-seqlen", "--data", d, "--checkpoint", pre, "--lengths", "1"}).code, 2);
}

TEST(TaggedPath, InsertsBeforeExtension) {
  EXPECT_EQ(tagged_path("run.json", "final"), "run.final.json");
  EXPECT_EQ(tagged_path("out/run.v1.json", "final"), "out/run.v1.final.json");
  EXPECT_EQ(tagged_path("out.d/run", "final"), "out.d/run.final");
  EXPECT_EQ(tagged_path(".hidden", "final"), ".hidden.final");
}

}  // namespace
}  // namespace dukf
