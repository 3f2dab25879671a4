#include "memlab/harness.hpp"

#include "memlab/kernel_score.hpp"
#include "memlab/memorization.hpp"
#include "memlab/random.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>

namespace memlab {

namespace fs = std::filesystem;

ConditioningMode ConditioningMode::parse(const std::string& text) {
  const auto t = trim(text);
  if (t == "none") return {};
  if (t == "true") return {LabelingMode::True, 0};
  if (t == "unique") return {LabelingMode::Unique, 0};
  if (t.rfind("random:", 0) == 0) {
    const auto c = std::strtoll(t.c_str() + 7, nullptr, 10);
    if (c < 1) throw UsageError("random conditioning needs C >= 1, got '" + t + "'");
    return {LabelingMode::Random, static_cast<std::uint32_t>(c)};
  }
  throw UsageError("unknown conditioning mode '" + t + "' (none, true, random:<C>, unique)");
}

std::string ConditioningMode::to_string() const {
  switch (labeling) {
    case LabelingMode::None: return "none";
    case LabelingMode::True: return "true";
    case LabelingMode::Unique: return "unique";
    case LabelingMode::Random: return "random:" + std::to_string(classes);
  }
  return "?";
}

std::optional<std::uint64_t> env_seed_override() {
  const char* v = std::getenv("MEMLAB_SEED");
  if (!v || !*v) return std::nullopt;
  char* end = nullptr;
  const auto seed = std::strtoull(v, &end, 10);
  if (*end != '\0') throw UsageError(std::string("MEMLAB_SEED is not an unsigned integer: ") + v);
  return seed;
}

namespace {

std::string fmt(const char* pattern, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), pattern, v);
  return buf;
}

std::uint64_t resolve_seed(const Config& cfg, const std::string& key, std::uint64_t master, std::uint64_t stream,
                           bool overridden) {
  if (!overridden && cfg.contains(key)) return cfg.get_u64(key, 0);
  return derive_seed(master, stream);
}

}  // namespace

ExperimentConfig ExperimentConfig::from_config(const Config& cfg, std::optional<std::uint64_t> seed_override) {
  ExperimentConfig e;
  Config c = cfg;
  const bool overridden = seed_override.has_value();
  e.seed = overridden ? *seed_override : cfg.get_u64("seed", 0);
  c.set("seed", std::to_string(e.seed));
  const std::pair<const char*, std::uint64_t> sub_seeds[] = {
      {"dataset.seed", 1},  {"sweep.subsample_seed", 2}, {"conditioning.seed", 3}, {"net.init_seed", 4},
      {"train.seed", 5},    {"sampler.seed", 6},         {"metric.bootstrap_seed", 7}};
  for (const auto& [key, stream] : sub_seeds) {
    c.set(key, std::to_string(resolve_seed(cfg, key, e.seed, stream, overridden)));
  }

  e.conditioning = ConditioningMode::parse(c.get_string("conditioning.mode", "none"));
  if (e.conditioning.labeling == LabelingMode::True) c.set("dataset.labeling", "true");
  else c.set("dataset.labeling", "none");

  for (auto v : c.get_int_list("sweep.sizes")) e.sizes.push_back(static_cast<Eigen::Index>(v));
  if (e.sizes.empty()) throw DataError("sweep.sizes is empty");
  for (std::size_t i = 0; i < e.sizes.size(); ++i) {
    if (e.sizes[i] < 2) throw DataError("sweep sizes must be >= 2 (the criterion needs two neighbours)");
    if (i > 0 && e.sizes[i] <= e.sizes[i - 1]) throw DataError("sweep.sizes must be strictly increasing");
  }
  if (!c.contains("dataset.size")) c.set("dataset.size", std::to_string(e.sizes.back()));
  e.dataset = DatasetSpec::from_config(c, "dataset");
  if (e.dataset.size < e.sizes.back()) throw DataError("dataset.size is smaller than the largest sweep size");

  e.nested = c.get_bool("sweep.nested", true);
  const auto protocol = c.get_string("sweep.protocol", "equal-epochs");
  if (protocol == "equal-epochs") {
    e.protocol = SweepProtocol::EqualEpochs;
  } else if (protocol == "fixed-steps") {
    e.protocol = SweepProtocol::FixedSteps;
    e.fixed_steps = c.get_int("sweep.steps", 0);
    if (e.fixed_steps < 1) throw DataError("fixed-steps protocol needs sweep.steps >= 1");
  } else {
    throw DataError("unknown sweep.protocol '" + protocol + "'");
  }

  e.checkpoints = c.get_int("sweep.checkpoints", 0);
  if (e.checkpoints < 0) throw DataError("sweep.checkpoints must be >= 0");
  e.stop_ratio = c.get_double("sweep.stop_ratio", 0.0);

  const auto model = c.get_string("model.kind", "trained");
  if (model == "trained") e.model = ModelKind::Trained;
  else if (model == "kernel") e.model = ModelKind::Kernel;
  else throw DataError("unknown model.kind '" + model + "' (trained or kernel)");

  e.schedule = NoiseSchedule<double>::from_config(c, "schedule");
  const auto dim = e.dataset.primary.kind == SourceKind::GridImagePatches ? e.dataset.side * e.dataset.side
                                                                          : e.dataset.dim;
  if (e.dataset.primary.kind != SourceKind::File) c.set("net.data_dim", std::to_string(dim));
  e.net = NetConfig::from_config(c, "net");
  e.train = TrainConfig::from_config(c, "train");
  e.sampler = SamplerConfig::from_config(c, "sampler");

  e.metric.tau = c.get_double("metric.tau", e.metric.tau);
  if (!(e.metric.tau > 0.0)) throw DataError("metric.tau must be > 0");
  e.metric.samples = c.get_int("metric.samples", e.metric.samples);
  if (e.metric.samples < 1) throw DataError("metric.samples must be >= 1");
  const auto boot = c.get_int_list("metric.bootstrap");
  if (!boot.empty()) {
    if (boot.size() != 2) throw DataError("metric.bootstrap must be 'M,B'");
    e.metric.bootstrap_m = boot[0];
    e.metric.bootstrap_b = boot[1];
  }

  e.epsilon = c.get_double("emm.epsilon", kDefaultEpsilon);
  e.interpolation = parse_interpolation(c.get_string("emm.interpolation", "linear"));
  e.output_dir = c.get_string("output.dir", e.output_dir.string());
  e.wall_clock = c.get_bool("output.wall_clock", false);
  e.keep_checkpoints = c.get_bool("output.keep_checkpoints", false);

  e.subsample_seed = c.get_u64("sweep.subsample_seed", 0);
  e.label_seed = c.get_u64("conditioning.seed", 0);
  e.bootstrap_seed = c.get_u64("metric.bootstrap_seed", 0);

  // Output location does not change results, so it stays out of the hash.
  for (const auto& key : {"output.dir", "output.wall_clock", "output.keep_checkpoints"}) c.erase(key);
  e.resolved = std::move(c);
  return e;
}

ExperimentConfig ExperimentConfig::with_conditioning(const ConditioningMode& mode, const fs::path& dir) const {
  ExperimentConfig out = *this;
  out.conditioning = mode;
  out.output_dir = dir;
  out.resolved.set("conditioning.mode", mode.to_string());
  out.resolved.set("dataset.labeling", mode.labeling == LabelingMode::True ? "true" : "none");
  out.dataset.labeling = mode.labeling == LabelingMode::True ? LabelingMode::True : LabelingMode::None;
  return out;
}

TrainingSet sweep_training_set(const ExperimentConfig& cfg, const TrainingSet& parent, Eigen::Index n) {
  TrainingSet sub = cfg.nested ? subsample(parent, n, cfg.subsample_seed)
                               : subsample_independent(parent, n, derive_seed(cfg.subsample_seed, static_cast<std::uint64_t>(n)));
  switch (cfg.conditioning.labeling) {
    case LabelingMode::None:
      return relabel(sub, LabelingMode::None, 0, 0);
    case LabelingMode::True:
      return sub;
    case LabelingMode::Random:
      return relabel(sub, LabelingMode::Random, cfg.conditioning.classes, cfg.label_seed);
    case LabelingMode::Unique:
      return relabel(sub, LabelingMode::Unique, 0, 0);
  }
  return sub;
}

namespace {

struct StageError {
  std::string stage;
  std::string message;
  int exit_code;
};

template <typename Fn>
auto run_stage(const std::string& stage, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const NumericalError& e) {
    throw StageError{stage, e.what(), 3};
  } catch (const UsageError& e) {
    throw StageError{stage, e.what(), 1};
  } catch (const std::exception& e) {
    throw StageError{stage, e.what(), 2};
  }
}

fs::path size_dir(const ExperimentConfig& cfg, Eigen::Index n) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "size_%06lld", static_cast<long long>(n));
  return cfg.output_dir / buf;
}

fs::path samples_path(const fs::path& dir, std::int64_t epoch) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "samples_e%06lld.dmem", static_cast<long long>(epoch));
  return dir / buf;
}

fs::path report_path(const fs::path& dir, std::int64_t epoch) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "report_e%06lld.csv", static_cast<long long>(epoch));
  return dir / buf;
}

void store_samples(const Points<double>& samples, const fs::path& path) {
  if (!samples.allFinite()) throw NumericalError("sampler produced non-finite points");
  save(TrainingSet(samples), path);
}

std::ofstream open_csv(const fs::path& path, const std::string& hash) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "# config_hash=" << hash << "\n";
  return out;
}

std::int64_t epochs_for(const ExperimentConfig& cfg, Eigen::Index n) {
  if (cfg.protocol == SweepProtocol::EqualEpochs) return cfg.train.epochs;
  const auto rows = static_cast<std::int64_t>(n) * cfg.train.repeats;
  const auto batches = (rows + cfg.train.batch_size - 1) / cfg.train.batch_size;
  return std::max<std::int64_t>(1, (cfg.fixed_steps + batches - 1) / batches);
}

Points<double> draw_samples(const ScoreModel<double>& model, const ExperimentConfig& cfg) {
  return sample(model, cfg.sampler, cfg.metric.samples);
}

void train_and_sample(const ExperimentConfig& cfg, const TrainingSet& ts, const fs::path& dir) {
  NetConfig net_cfg = cfg.net;
  net_cfg.data_dim = ts.dim();
  net_cfg.num_classes = cfg.conditioning.conditional() ? ts.num_classes() : 0;
  TrainConfig train_cfg = cfg.train;
  train_cfg.epochs = epochs_for(cfg, ts.size());
  if (cfg.checkpoints > 0) train_cfg.checkpoint_every = std::max<std::int64_t>(1, train_cfg.epochs / cfg.checkpoints);
  const ScoreNet<float> net(net_cfg, cfg.schedule);
  const Trainer<float> trainer(net, ts, train_cfg);

  Config ck_cfg;
  net_cfg.write_config(ck_cfg);
  cfg.schedule.write_config(ck_cfg);
  auto curve = open_csv(dir / "train_curve.csv", cfg.hash());
  write_curve_header(curve);

  bool reached = false;
  auto on_checkpoint = [&](const TrainState<float>& s) {
    run_stage("sample", [&] {
      const NetScoreModel<float> model(net, s.ema);
      const auto samples = draw_samples(model, cfg);
      store_samples(samples, samples_path(dir, s.epoch));
      if (cfg.stop_ratio > 0.0) {
        // Scored on the float-rounded copy so the metric stage sees the same points.
        const auto stored = load(samples_path(dir, s.epoch));
        reached = memorization_ratio(stored.data(), ts.data(), cfg.metric.tau).ratio >= cfg.stop_ratio;
      }
      if (cfg.keep_checkpoints) {
        char buf[48];
        std::snprintf(buf, sizeof(buf), "checkpoint_e%06lld.dmnn", static_cast<long long>(s.epoch));
        save_checkpoint({ck_cfg, s.params, s.ema}, dir / buf);
      }
      return 0;
    });
  };
  auto on_epoch = [&](const CurveRow& row) { write_curve_row(curve, row, cfg.wall_clock); };
  auto stop = [&](const TrainState<float>&) { return reached; };
  const auto result = run_stage("train", [&] { return trainer.train(on_checkpoint, on_epoch, stop); });
  save_checkpoint({ck_cfg, result.state.params, result.state.ema}, dir / "model.dmnn");
  if (result.diverged) throw StageError{"train", result.message, 3};
}

SizeResult score_size(const ExperimentConfig& cfg, Eigen::Index n) {
  SizeResult out;
  out.n = n;
  out.dir = size_dir(cfg, n);
  const auto ts = load(out.dir / "train.dmem");
  std::vector<std::pair<std::int64_t, fs::path>> files;
  for (const auto& entry : fs::directory_iterator(out.dir)) {
    const auto name = entry.path().filename().string();
    if (name.rfind("samples_e", 0) == 0 && entry.path().extension() == ".dmem") {
      files.emplace_back(std::strtoll(name.c_str() + 9, nullptr, 10), entry.path());
    }
  }
  if (files.empty()) throw DataError("no stored samples in " + out.dir.string());
  std::sort(files.begin(), files.end());

  auto ratios = open_csv(out.dir / "ratios.csv", cfg.hash());
  ratios << "# dataset_size=" << n << "\nepoch,ratio\n";
  out.max_ratio = -1.0;
  for (const auto& [epoch, path] : files) {
    const auto samples = load(path);
    auto report = memorization_ratio(samples.data(), ts.data(), cfg.metric.tau);
    if (cfg.metric.bootstrap_m > 0) {
      report.bootstrap = bootstrap_ratio(report, cfg.metric.bootstrap_m, cfg.metric.bootstrap_b,
                                         derive_seed(cfg.bootstrap_seed, static_cast<std::uint64_t>(epoch)));
    }
    std::ofstream rep(report_path(out.dir, epoch));
    write_report_csv(rep, report, n, cfg.hash());
    ratios << epoch << "," << fmt("%.9g", report.ratio) << "\n";
    out.checkpoints.push_back({epoch, report.ratio});
    if (report.ratio > out.max_ratio) {
      out.max_ratio = report.ratio;
      out.best_epoch = epoch;
    }
  }
  return out;
}

void write_summaries(const ExperimentConfig& cfg, RunRecord& record) {
  const auto& hash = record.config_hash;
  record.curve.points.clear();
  for (const auto& s : record.sizes) record.curve.points.push_back({static_cast<double>(s.n), s.max_ratio});
  record.curve.metadata = {{"model", cfg.model == ModelKind::Kernel ? "kernel" : "trained"},
                           {"conditioning", cfg.conditioning.to_string()},
                           {"nested", cfg.nested ? "true" : "false"},
                           {"protocol", cfg.protocol == SweepProtocol::EqualEpochs ? "equal-epochs" : "fixed-steps"}};
  {
    auto out = open_csv(cfg.output_dir / "curve.csv", hash);
    write_curve_csv(out, record.curve);
  }
  {
    auto out = open_csv(cfg.output_dir / "trajectories.csv", hash);
    out << "N,epoch,ratio\n";
    for (const auto& s : record.sizes)
      for (const auto& c : s.checkpoints) out << s.n << "," << c.epoch << "," << fmt("%.9g", c.ratio) << "\n";
  }
  {
    auto out = open_csv(cfg.output_dir / "run.csv", hash);
    out << "N,max_ratio,best_epoch,checkpoints\n";
    for (const auto& s : record.sizes)
      out << s.n << "," << fmt("%.9g", s.max_ratio) << "," << s.best_epoch << "," << s.checkpoints.size() << "\n";
    for (const auto& f : record.failures) out << "# failure N=" << f.n << " stage=" << f.stage << ": " << f.message << "\n";
  }
  record.artifacts = {cfg.output_dir / "config.txt", cfg.output_dir / "curve.csv", cfg.output_dir / "trajectories.csv",
                      cfg.output_dir / "run.csv"};
  if (!record.curve.points.empty()) {
    record.emm = estimate_emm(record.curve, cfg.epsilon, cfg.interpolation);
    std::ofstream out(cfg.output_dir / "emm.txt");
    out << "# config_hash=" << hash << "\n";
    write_emm(out, *record.emm);
    record.artifacts.push_back(cfg.output_dir / "emm.txt");
  }
}

void write_config_file(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.output_dir);
  std::ofstream out(cfg.output_dir / "config.txt");
  out << "# config_hash=" << cfg.hash() << "\n" << cfg.resolved.canonical();
}

}  // namespace

RunRecord run_sweep(const ExperimentConfig& cfg) {
  const auto started = std::chrono::steady_clock::now();
  RunRecord record;
  record.config_hash = cfg.hash();
  write_config_file(cfg);

  std::optional<TrainingSet> parent;
  try {
    parent = run_stage("dataset", [&] { return generate(cfg.dataset); });
  } catch (const StageError& e) {
    record.failures.push_back({0, e.stage, e.message, e.exit_code});
    return record;
  }

  for (const auto n : cfg.sizes) {
    const auto size_start = std::chrono::steady_clock::now();
    const auto dir = size_dir(cfg, n);
    try {
      fs::remove_all(dir);
      fs::create_directories(dir);
      const auto ts = run_stage("dataset", [&] {
        auto t = sweep_training_set(cfg, *parent, n);
        save(t, dir / "train.dmem");
        return t;
      });
      std::cerr << "[sweep] N=" << n << " conditioning=" << cfg.conditioning.to_string() << "\n";
      if (cfg.model == ModelKind::Kernel) {
        run_stage("sample", [&] {
          const KernelScoreModel<double> model(ts, cfg.schedule, cfg.conditioning.conditional());
          store_samples(draw_samples(model, cfg), samples_path(dir, 0));
          return 0;
        });
      } else {
        train_and_sample(cfg, ts, dir);
      }
    } catch (const StageError& e) {
      std::cerr << "[sweep] N=" << n << " failed in stage " << e.stage << ": " << e.message << "\n";
      record.failures.push_back({n, e.stage, e.message, e.exit_code});
    }
    // Checkpoints written before a failure are still scored.
    try {
      auto result = run_stage("metrics", [&] { return score_size(cfg, n); });
      result.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - size_start).count();
      std::cerr << "[sweep] N=" << n << " max ratio " << result.max_ratio << " at epoch " << result.best_epoch << "\n";
      record.sizes.push_back(std::move(result));
    } catch (const StageError& e) {
      const bool already = !record.failures.empty() && record.failures.back().n == n;
      if (!already) record.failures.push_back({n, e.stage, e.message, e.exit_code});
    }
  }
  try {
    run_stage("emm", [&] {
      write_summaries(cfg, record);
      return 0;
    });
  } catch (const StageError& e) {
    record.failures.push_back({0, e.stage, e.message, e.exit_code});
  }
  record.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
  std::ofstream(cfg.output_dir / "record.txt") << "config_hash = " << record.config_hash << "\nwall_ms = "
                                                << fmt("%.0f", record.wall_ms) << "\nfailures = "
                                                << record.failures.size() << "\n";
  return record;
}

RunRecord run_metrics(const ExperimentConfig& cfg) {
  RunRecord record;
  record.config_hash = cfg.hash();
  for (const auto n : cfg.sizes) {
    try {
      record.sizes.push_back(run_stage("metrics", [&] { return score_size(cfg, n); }));
    } catch (const StageError& e) {
      record.failures.push_back({n, e.stage, e.message, e.exit_code});
    }
  }
  try {
    run_stage("emm", [&] {
      write_summaries(cfg, record);
      return 0;
    });
  } catch (const StageError& e) {
    record.failures.push_back({0, e.stage, e.message, e.exit_code});
  }
  return record;
}

ConditioningTable compare_conditioning(const ExperimentConfig& cfg, const std::vector<ConditioningMode>& modes) {
  if (modes.empty()) throw UsageError("compare-cond needs at least one conditioning mode");
  ConditioningTable table;
  for (const auto& mode : modes) {
    auto name = mode.to_string();
    std::replace(name.begin(), name.end(), ':', '_');
    const auto sub = cfg.with_conditioning(mode, cfg.output_dir / ("mode_" + name));
    auto record = run_sweep(sub);
    for (const auto& s : record.sizes) {
      for (const auto& c : s.checkpoints) table.checkpoints.push_back({mode.to_string(), s.n, c.epoch, c.ratio});
      table.maxima.push_back({mode.to_string(), s.n, s.best_epoch, s.max_ratio});
    }
    table.runs.push_back(std::move(record));
  }
  fs::create_directories(cfg.output_dir);
  {
    auto out = open_csv(cfg.output_dir / "compare.csv", cfg.hash());
    out << "mode,N,epoch,ratio\n";
    for (const auto& r : table.checkpoints) out << r.mode << "," << r.n << "," << r.epoch << "," << fmt("%.9g", r.ratio) << "\n";
  }
  {
    auto out = open_csv(cfg.output_dir / "compare_max.csv", cfg.hash());
    out << "mode,N,best_epoch,max_ratio\n";
    for (const auto& r : table.maxima) out << r.mode << "," << r.n << "," << r.epoch << "," << fmt("%.9g", r.ratio) << "\n";
  }
  return table;
}

}  // namespace memlab
