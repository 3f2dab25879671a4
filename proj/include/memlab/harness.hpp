#pragma once

#include "memlab/config.hpp"
#include "memlab/dataset.hpp"
#include "memlab/emm.hpp"
#include "memlab/sampler.hpp"
#include "memlab/schedule.hpp"
#include "memlab/score_net.hpp"
#include "memlab/trainer.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace memlab {

enum class ModelKind { Trained, Kernel };
/// equal-epochs: every size trains for train.epochs. fixed-steps: each size
/// trains for about sweep.steps optimizer steps.
enum class SweepProtocol { EqualEpochs, FixedSteps };

/// Label treatment applied to every subsampled training set.
struct ConditioningMode {
  LabelingMode labeling = LabelingMode::None;
  std::uint32_t classes = 0;  // Random only

  /// "none", "true", "random:<C>" or "unique".
  static ConditioningMode parse(const std::string& text);
  std::string to_string() const;
  bool conditional() const { return labeling != LabelingMode::None; }
};

struct MetricConfig {
  double tau = 1.0 / 3.0;
  Eigen::Index samples = 10000;
  Eigen::Index bootstrap_m = 0;  // 0 disables the bootstrap
  Eigen::Index bootstrap_b = 0;
};

struct ExperimentConfig {
  Config resolved;  // every key after seed resolution; hashed into CSV headers
  DatasetSpec dataset;
  std::vector<Eigen::Index> sizes;
  bool nested = true;
  SweepProtocol protocol = SweepProtocol::EqualEpochs;
  std::int64_t fixed_steps = 0;
  std::int64_t checkpoints = 0;  // per size; 0 keeps train.checkpoint_every
  double stop_ratio = 0.0;       // end training once a checkpoint reaches it; 0 disables
  ModelKind model = ModelKind::Trained;
  NoiseSchedule<double> schedule;
  NetConfig net;
  TrainConfig train;
  SamplerConfig sampler;
  MetricConfig metric;
  ConditioningMode conditioning;
  double epsilon = kDefaultEpsilon;
  Interpolation interpolation = Interpolation::Linear;
  std::filesystem::path output_dir = "memlab_out";
  bool wall_clock = false;         // wall_ms column of training curves
  bool keep_checkpoints = false;   // write a .dmnn file per checkpoint
  std::uint64_t seed = 0;
  std::uint64_t subsample_seed = 0;
  std::uint64_t label_seed = 0;
  std::uint64_t bootstrap_seed = 0;

  /// Sub-seeds (dataset, subsample, labels, init, train, sampler, bootstrap)
  /// derive from `seed` unless set explicitly; `seed_override` (MEMLAB_SEED)
  /// replaces the master seed and every explicit sub-seed.
  static ExperimentConfig from_config(const Config& cfg, std::optional<std::uint64_t> seed_override = std::nullopt);
  std::string hash() const { return resolved.hash_hex(); }
  /// Copy with a different conditioning mode and output directory.
  ExperimentConfig with_conditioning(const ConditioningMode& mode, const std::filesystem::path& dir) const;
};

/// Reads MEMLAB_SEED; nullopt when unset.
std::optional<std::uint64_t> env_seed_override();

struct CheckpointRatio {
  std::int64_t epoch = 0;
  double ratio = 0.0;
};

struct SizeResult {
  Eigen::Index n = 0;
  std::vector<CheckpointRatio> checkpoints;
  double max_ratio = 0.0;
  std::int64_t best_epoch = 0;
  double wall_ms = 0.0;
  std::filesystem::path dir;
};

struct StageFailure {
  Eigen::Index n = 0;
  std::string stage;
  std::string message;
  int exit_code = 2;
};

struct RunRecord {
  std::string config_hash;
  std::vector<SizeResult> sizes;
  std::vector<StageFailure> failures;
  double wall_ms = 0.0;
  std::vector<std::filesystem::path> artifacts;
  MemCurve curve;
  std::optional<EmmEstimate> emm;
};

/// Subsample (nested by default), train, sample at every checkpoint, score,
/// keep the max ratio per size, then emit curve.csv and emm.txt. A failing
/// stage is recorded with its name; finished sizes are kept.
RunRecord run_sweep(const ExperimentConfig& cfg);

/// Recomputes every report, ratio table, curve and EMM from the stored
/// sample files of a finished sweep.
RunRecord run_metrics(const ExperimentConfig& cfg);

struct ConditioningRow {
  std::string mode;
  Eigen::Index n = 0;
  std::int64_t epoch = 0;
  double ratio = 0.0;
};

struct ConditioningTable {
  std::vector<ConditioningRow> checkpoints;  // per mode, size and checkpoint
  std::vector<ConditioningRow> maxima;       // per mode and size; epoch = best epoch
  std::vector<RunRecord> runs;
};

/// One sweep per mode, sharing every seed and subsample chain; writes
/// compare.csv under the output directory.
ConditioningTable compare_conditioning(const ExperimentConfig& cfg, const std::vector<ConditioningMode>& modes);

/// Builds the (possibly relabeled) training set of a given size.
TrainingSet sweep_training_set(const ExperimentConfig& cfg, const TrainingSet& parent, Eigen::Index n);

}  // namespace memlab
