#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "dukf/pipeline.hpp"
#include "dukf/text.hpp"

namespace dukf {
namespace {

SyncedDataset sim(double seconds, std::uint64_t seed = 4) {
  SimConfig cfg;
  cfg.duration = seconds;
  cfg.seed = seed;
  return simulate_dataset(cfg);
}

ModelBundle exact_bundle() {
  DynamicsConfig dyn;
  dyn.kind = ModelKind::pc;
  dyn.augmented = true;
  return make_bundle(dyn, NoiseMode::homoscedastic);
}

TEST(LoadDataset, RawLogGetsPoseTruth) {
  const SyncedDataset ds = sim(20);
  const auto path = std::filesystem::temp_directory_path() / "dukf_raw_log.csv";
  {
    std::ofstream out(path);
    out << "t,ax,ay,gyro_z,omega_s,delta,iq,px,py,yaw\n";
    for (std::size_t i = 0; i < ds.size(); ++i) {
      out << format_double(ds.t[i]);
      for (double v : ds.y[i]) out << ',' << format_double(v);
      out << ',' << format_double(ds.u[i].delta) << ',' << format_double(ds.u[i].iq) << ','
          << format_double(ds.pose[i].x) << ',' << format_double(ds.pose[i].y) << ','
          << format_double(ds.pose[i].yaw) << '\n';
    }
  }
  const SyncedDataset back = load_dataset(path.string(), DataConfig{});
  std::filesystem::remove(path);
  ASSERT_EQ(back.size(), ds.size());
  ASSERT_TRUE(back.has_truth());
  double se = 0.0;
  for (std::size_t i = 0; i < ds.size(); ++i) se += std::pow(back.truth[i][0] - ds.truth[i][0], 2);
  EXPECT_LT(std::sqrt(se / static_cast<double>(ds.size())), 0.01);
}

TEST(LoadDataset, SyncedFileIsReadAsIs) {
  const SyncedDataset ds = sim(5);
  const auto path = std::filesystem::temp_directory_path() / "dukf_synced.csv";
  write_dataset_csv(ds, path.string());
  const SyncedDataset back = load_dataset(path.string(), DataConfig{});
  std::filesystem::remove(path);
  EXPECT_EQ(back.truth, ds.truth);
  EXPECT_EQ(back.labels, ds.labels);
}

TEST(EvaluateBundle, ExactModelTracksAndAuditsNoise) {
  const SyncedDataset ds = sim(30);
  EvalConfig eval;
  eval.sequence_rows = 1000;
  const Evaluation ev = evaluate_bundle(exact_bundle(), ds, UkfConfig{}, InitConfig{}, eval, 2, true);
  EXPECT_EQ(ev.diverged, 0u);
  EXPECT_EQ(ev.report.sequences, 3u);
  EXPECT_LT(ev.report.mse, 0.05);
  EXPECT_GT(ev.audit.evaluations, 0u);
  EXPECT_GE(ev.audit.min_eig_r, 0.9 * exact_bundle().noise.epsilon);
  EXPECT_GE(ev.audit.min_eig_q, 0.9 * exact_bundle().noise.epsilon);
}

TEST(RolloutGradCheck, MatchesFiniteDifferences) {
  DynamicsConfig dyn;
  dyn.kind = ModelKind::nntf;
  dyn.hidden = {6, 6};
  const ModelBundle b = make_bundle(dyn, NoiseMode::heteroscedastic);
  const auto r = rollout_grad_check(b, sim(1), 50, kTrainWeights, UkfConfig{}, InitConfig{});
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
  EXPECT_THROW(rollout_grad_check(b, sim(1), 500, kTrainWeights, UkfConfig{}, InitConfig{}),
               DataError);
}

TEST(AblateMixed, IdenticalHalvesMatchTheWholeModel) {
  const SyncedDataset ds = sim(12);
  RunConfig cfg;
  cfg.eval.sequence_rows = 400;
  const ModelBundle pc = exact_bundle();
  const auto reports = ablate_mixed({{"a", pc}, {"b", pc}}, ds, cfg, "sim");
  ASSERT_EQ(reports.size(), 4u);
  EXPECT_EQ(reports[1].model_id, "a+b");
  for (const auto& r : reports) {
    EXPECT_EQ(r.mse, reports[0].mse) << r.model_id;
    EXPECT_EQ(r.dataset_id, "sim");
  }
}

TEST(SweepSequenceLength, OneRowPerLength) {
  const DatasetSplit split = split_dataset(sim(40), {0.6, 0.2, 0.2});
  RunConfig cfg;
  cfg.train.finetune_epochs = 2;
  cfg.train.batch_size = 2;
  cfg.eval.sequence_rows = 400;
  DynamicsConfig dyn;
  dyn.kind = ModelKind::nntf;
  dyn.hidden = {6};
  const auto rows = sweep_sequence_length(make_bundle(dyn, NoiseMode::homoscedastic), split,
                                          {8, 64}, cfg);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].seq_len, 8u);
  EXPECT_EQ(rows[1].epochs, 2u);
  EXPECT_GT(rows[1].mean_epoch_time, 0.0);
  EXPECT_TRUE(std::isfinite(rows[0].test_mse));
  const std::string csv = render_sweep_csv(rows);
  EXPECT_EQ(csv.rfind("seq_len,epochs,final_train_loss,best_val,test_mse", 0), 0u);
}

}  // namespace
}  // namespace dukf
