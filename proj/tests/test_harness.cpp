#include "memlab/harness.hpp"
#include "memlab/parallel.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

using namespace memlab;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::path(MEMLAB_SCRATCH) / name;
  fs::remove_all(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Config kernel_config(const fs::path& dir) {
  Config c;
  c.set("seed", "5");
  c.set("model.kind", "kernel");
  c.set("sweep.sizes", "8,32,128");
  c.set("metric.samples", "300");
  c.set("output.dir", dir.string());
  return c;
}

Config tiny_trained_config(const fs::path& dir) {
  Config c;
  c.set("seed", "9");
  c.set("sweep.sizes", "8,16");
  c.set("net.width", "16");
  c.set("train.epochs", "20");
  c.set("train.batch_size", "16");
  c.set("train.warmup_epochs", "2");
  c.set("train.checkpoint_every", "10");
  c.set("sampler.num_steps", "20");
  c.set("metric.samples", "64");
  c.set("output.dir", dir.string());
  return c;
}

}  // namespace

TEST(Harness, ConditioningModeParsing) {
  EXPECT_EQ(ConditioningMode::parse("none").labeling, LabelingMode::None);
  EXPECT_EQ(ConditioningMode::parse("true").labeling, LabelingMode::True);
  EXPECT_EQ(ConditioningMode::parse("unique").labeling, LabelingMode::Unique);
  const auto r = ConditioningMode::parse("random:16");
  EXPECT_EQ(r.labeling, LabelingMode::Random);
  EXPECT_EQ(r.classes, 16u);
  EXPECT_EQ(r.to_string(), "random:16");
  EXPECT_THROW(ConditioningMode::parse("random:0"), UsageError);
  EXPECT_THROW(ConditioningMode::parse("sometimes"), UsageError);
}

TEST(Harness, SeedsDeriveFromMasterAndOverride) {
  Config c = kernel_config("x");
  const auto a = ExperimentConfig::from_config(c);
  c.set("sampler.seed", "77");
  const auto b = ExperimentConfig::from_config(c);
  EXPECT_EQ(b.sampler.seed, 77u);
  EXPECT_EQ(a.dataset.seed, b.dataset.seed);
  EXPECT_NE(a.hash(), b.hash());
  const auto o = ExperimentConfig::from_config(c, 5);
  EXPECT_EQ(o.sampler.seed, a.sampler.seed);
  EXPECT_EQ(o.hash(), a.hash());
}

TEST(Harness, OutputLocationStaysOutOfHash) {
  const auto a = ExperimentConfig::from_config(kernel_config("one"));
  const auto b = ExperimentConfig::from_config(kernel_config("two"));
  EXPECT_EQ(a.hash(), b.hash());
}

TEST(Harness, ConfigValidation) {
  auto c = kernel_config("x");
  c.set("sweep.sizes", "8,8");
  EXPECT_THROW(ExperimentConfig::from_config(c), DataError);
  c.set("sweep.sizes", "1,8");
  EXPECT_THROW(ExperimentConfig::from_config(c), DataError);
  c.set("sweep.sizes", "8");
  c.set("sweep.protocol", "fixed-steps");
  EXPECT_THROW(ExperimentConfig::from_config(c), DataError);
  c.set("sweep.protocol", "equal-epochs");
  c.set("model.kind", "magic");
  EXPECT_THROW(ExperimentConfig::from_config(c), DataError);
}

TEST(Harness, NestedSubsetsAndRelabeling) {
  auto c = kernel_config("x");
  c.set("conditioning.mode", "random:3");
  const auto cfg = ExperimentConfig::from_config(c);
  const auto parent = generate(cfg.dataset);
  const auto small = sweep_training_set(cfg, parent, 8);
  const auto big = sweep_training_set(cfg, parent, 32);
  for (Eigen::Index i = 0; i < small.size(); ++i) {
    bool found = false;
    for (Eigen::Index j = 0; j < big.size(); ++j) found = found || small.data().row(i) == big.data().row(j);
    EXPECT_TRUE(found) << i;
  }
  EXPECT_EQ(small.num_classes(), 3u);
  const auto unique = sweep_training_set(cfg.with_conditioning(ConditioningMode::parse("unique"), "y"), parent, 8);
  EXPECT_EQ(unique.num_classes(), 8u);
}

TEST(Harness, KernelSweepMemorizesAtEverySize) {
  const auto dir = scratch("kernel");
  const auto record = run_sweep(ExperimentConfig::from_config(kernel_config(dir)));
  ASSERT_TRUE(record.failures.empty());
  ASSERT_EQ(record.sizes.size(), 3u);
  for (const auto& s : record.sizes) EXPECT_EQ(s.max_ratio, 1.0) << s.n;
  ASSERT_TRUE(record.emm);
  EXPECT_EQ(record.emm->censoring, Censoring::LowerBound);
  EXPECT_EQ(record.emm->value, 128.0);
  for (const auto& name : {"curve.csv", "trajectories.csv", "run.csv"})
    EXPECT_EQ(slurp(dir / name).rfind("# config_hash=" + record.config_hash, 0), 0u) << name;
}

TEST(Harness, TrainedSweepIsDeterministic) {
  set_thread_count(1);
  const auto a = scratch("det_a");
  const auto b = scratch("det_b");
  const auto ra = run_sweep(ExperimentConfig::from_config(tiny_trained_config(a)));
  const auto rb = run_sweep(ExperimentConfig::from_config(tiny_trained_config(b)));
  ASSERT_TRUE(ra.failures.empty());
  ASSERT_EQ(ra.sizes.size(), 2u);
  EXPECT_EQ(ra.sizes[0].checkpoints.size(), 2u);
  for (const auto& name : {"curve.csv", "trajectories.csv", "run.csv", "size_000008/train_curve.csv",
                           "size_000016/ratios.csv", "size_000016/report_e000020.csv"})
    EXPECT_EQ(slurp(a / name), slurp(b / name)) << name;
}

TEST(Harness, MetricStageReproducesFromStoredSamples) {
  const auto dir = scratch("metrics");
  const auto cfg = ExperimentConfig::from_config(tiny_trained_config(dir));
  run_sweep(cfg);
  const auto curve = slurp(dir / "curve.csv");
  const auto ratios = slurp(dir / "size_000008/ratios.csv");
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.path().filename().string().rfind("report_", 0) == 0) fs::remove(e.path());
  fs::remove(dir / "curve.csv");
  const auto record = run_metrics(cfg);
  EXPECT_TRUE(record.failures.empty());
  EXPECT_EQ(slurp(dir / "curve.csv"), curve);
  EXPECT_EQ(slurp(dir / "size_000008/ratios.csv"), ratios);
  EXPECT_TRUE(fs::exists(dir / "size_000008/report_e000010.csv"));
}

TEST(Harness, StopRatioEndsTrainingEarly) {
  const auto dir = scratch("stop");
  auto c = tiny_trained_config(dir);
  c.set("train.checkpoint_every", "5");
  // A loose threshold makes the first checkpoint qualify.
  c.set("metric.tau", "0.99");
  c.set("sweep.stop_ratio", "0.01");
  const auto record = run_sweep(ExperimentConfig::from_config(c));
  ASSERT_TRUE(record.failures.empty());
  for (const auto& s : record.sizes) {
    ASSERT_EQ(s.checkpoints.size(), 1u) << s.n;
    EXPECT_EQ(s.checkpoints.front().epoch, 5);
    EXPECT_GE(s.checkpoints.front().ratio, 0.01);
  }
}

TEST(Harness, FailingStageIsRecordedAndOtherSizesKept) {
  const auto dir = scratch("failure");
  auto c = tiny_trained_config(dir);
  c.set("train.lr", "1e36");
  c.set("train.warmup_epochs", "0");
  const auto record = run_sweep(ExperimentConfig::from_config(c));
  ASSERT_FALSE(record.failures.empty());
  EXPECT_EQ(record.failures.front().stage, "train");
  EXPECT_EQ(record.failures.front().exit_code, 3);
  EXPECT_TRUE(fs::exists(dir / "run.csv"));
}

TEST(Harness, CompareConditioningNeedsModes) {
  EXPECT_THROW(compare_conditioning(ExperimentConfig::from_config(kernel_config(scratch("none"))), {}), UsageError);
}

TEST(Harness, CompareConditioningWritesTable) {
  const auto dir = scratch("compare");
  auto c = kernel_config(dir);
  c.set("sweep.sizes", "8,16");
  const auto table = compare_conditioning(ExperimentConfig::from_config(c),
                                          {ConditioningMode::parse("none"), ConditioningMode::parse("unique")});
  ASSERT_EQ(table.maxima.size(), 4u);
  for (const auto& row : table.maxima) EXPECT_EQ(row.ratio, 1.0) << row.mode << " " << row.n;
  EXPECT_TRUE(fs::exists(dir / "compare.csv"));
  EXPECT_TRUE(fs::exists(dir / "mode_unique" / "curve.csv"));
}

TEST(Harness, TrainedConditioningModesOrderAsExpected) {
  set_thread_count(1);
  const auto dir = scratch("compare_trained");
  Config c;
  c.set("seed", "21");
  c.set("sweep.sizes", "16,32");
  c.set("net.width", "64");
  c.set("net.depth", "3");
  c.set("train.batch_size", "128");
  c.set("train.repeats", "16");
  c.set("train.lr", "5e-3");
  c.set("train.warmup_epochs", "50");
  c.set("train.ema_rate", "0.999");
  c.set("train.t_sampling", "log-uniform");
  c.set("train.epochs", "6000");
  c.set("train.checkpoint_every", "1500");
  c.set("sampler.grid", "geometric");
  c.set("sampler.num_steps", "100");
  c.set("metric.samples", "500");
  c.set("output.dir", dir.string());
  const auto table = compare_conditioning(
      ExperimentConfig::from_config(c),
      {ConditioningMode::parse("none"), ConditioningMode::parse("random:1"), ConditioningMode::parse("unique")});
  auto find = [](const std::vector<ConditioningRow>& rows, const std::string& mode, Eigen::Index n,
                 std::int64_t epoch) {
    for (const auto& r : rows)
      if (r.mode == mode && r.n == n && (epoch < 0 || r.epoch == epoch)) return r.ratio;
    ADD_FAILURE() << mode << " N=" << n << " epoch " << epoch;
    return 0.0;
  };
  for (Eigen::Index n : {16, 32}) {
    // A single class carries no information, so it matches the unconditional run.
    EXPECT_NEAR(find(table.maxima, "none", n, -1), find(table.maxima, "random:1", n, -1), 0.05) << n;
    // Every checkpoint lies past warmup.
    for (std::int64_t e = 1500; e <= 6000; e += 1500)
      EXPECT_GE(find(table.checkpoints, "unique", n, e), find(table.checkpoints, "random:1", n, e)) << n << " " << e;
  }
}
