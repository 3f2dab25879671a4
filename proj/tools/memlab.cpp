#include "memlab/config.hpp"
#include "memlab/dataset.hpp"
#include "memlab/emm.hpp"
#include "memlab/harness.hpp"
#include "memlab/kernel_score.hpp"
#include "memlab/memorization.hpp"
#include "memlab/parallel.hpp"
#include "memlab/sampler.hpp"
#include "memlab/score_net.hpp"
#include "memlab/trainer.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace memlab;

namespace {

/// Loads a config file whose keys may omit `prefix.`; bare keys are moved
/// under the prefix so one file format serves both standalone and sweep use.
Config load_section(const fs::path& path, const std::string& prefix) {
  const auto raw = Config::load(path);
  const auto dotted = prefix + ".";
  for (const auto& [key, value] : raw.entries()) {
    if (key.rfind(dotted, 0) == 0) return raw;
  }
  Config out;
  for (const auto& [key, value] : raw.entries()) out.set(dotted + key, value);
  return out;
}

void merge_into(Config& dst, const Config& src) {
  for (const auto& [key, value] : src.entries()) dst.set(key, value);
}

void apply_seed_override(Config& cfg, const std::string& key) {
  if (const auto seed = env_seed_override()) cfg.set(key, std::to_string(*seed));
}

/// Points from a .dmem file or from a CSV with one point per line.
Points<double> read_points(const fs::path& path) {
  if (path.extension() == ".dmem") return load(path).data();
  std::ifstream in(path);
  if (!in) throw DataError("cannot open points file " + path.string());
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    const auto t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::vector<double> row;
    bool numeric = true;
    for (const auto& cell : split(t, ',')) {
      const auto c = trim(cell);
      char* end = nullptr;
      const double v = std::strtod(c.c_str(), &end);
      if (c.empty() || *end != '\0') {
        numeric = false;
        break;
      }
      row.push_back(v);
    }
    if (!numeric) {
      if (rows.empty()) continue;  // header
      throw DataError("non-numeric row in " + path.string() + ": " + t);
    }
    if (!rows.empty() && row.size() != rows.front().size()) throw DataError("ragged rows in " + path.string());
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DataError("no points in " + path.string());
  Points<double> p(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) p(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return p;
}

std::string g9(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

int dataset_make(const fs::path& spec_path, const fs::path& out) {
  auto cfg = load_section(spec_path, "dataset");
  apply_seed_override(cfg, "dataset.seed");
  const auto ts = generate(DatasetSpec::from_config(cfg));
  save(ts, out);
  std::cerr << "wrote " << ts.size() << " x " << ts.dim() << " to " << out << "\n";
  return 0;
}

int dataset_subsample(const fs::path& in, Eigen::Index n, std::uint64_t seed, const fs::path& out) {
  if (const auto s = env_seed_override()) seed = *s;
  save(subsample(load(in), n, seed), out);
  return 0;
}

int score_eval(const fs::path& dataset, const fs::path& schedule_path, const fs::path& points_path, double t,
               std::optional<Label> cls) {
  const auto ts = load(dataset);
  const auto cfg = load_section(schedule_path, "schedule");
  const KernelScoreModel<double> model(ts, NoiseSchedule<double>::from_config(cfg), cls.has_value());
  const auto z = read_points(points_path);
  const Vector<double> tv = Vector<double>::Constant(z.rows(), t);
  std::vector<Label> classes;
  if (cls) classes.assign(static_cast<std::size_t>(z.rows()), *cls);
  const auto s = model.score(z, tv, classes);
  const auto w = model.weights_batch(z, tv, classes);
  std::cout << "# config_hash=" << cfg.hash_hex() << "\npoint";
  for (Eigen::Index j = 0; j < s.cols(); ++j) std::cout << ",score_" << j;
  for (Eigen::Index j = 0; j < w.cols(); ++j) std::cout << ",weight_" << j;
  std::cout << "\n";
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    std::cout << i;
    for (Eigen::Index j = 0; j < s.cols(); ++j) std::cout << "," << g9(s(i, j));
    for (Eigen::Index j = 0; j < w.cols(); ++j) std::cout << "," << g9(w(i, j));
    std::cout << "\n";
  }
  return 0;
}

int train(const fs::path& dataset, const fs::path& net_path, const fs::path& train_path,
          const std::optional<fs::path>& schedule_path, const fs::path& out_dir) {
  const auto ts = load(dataset);
  Config cfg = load_section(net_path, "net");
  merge_into(cfg, load_section(train_path, "train"));
  if (schedule_path) merge_into(cfg, load_section(*schedule_path, "schedule"));
  apply_seed_override(cfg, "net.init_seed");
  apply_seed_override(cfg, "train.seed");
  cfg.set("net.data_dim", std::to_string(ts.dim()));
  const auto schedule = NoiseSchedule<double>::from_config(cfg);
  const auto net_cfg = NetConfig::from_config(cfg);
  const auto train_cfg = TrainConfig::from_config(cfg);
  const ScoreNet<float> net(net_cfg, schedule);
  const Trainer<float> trainer(net, ts, train_cfg);

  Config ck;
  net_cfg.write_config(ck);
  schedule.write_config(ck);
  fs::create_directories(out_dir);
  std::ofstream curve(out_dir / "train_curve.csv");
  curve << "# config_hash=" << cfg.hash_hex() << "\n";
  write_curve_header(curve);
  auto on_checkpoint = [&](const TrainState<float>& s) {
    char name[48];
    std::snprintf(name, sizeof(name), "checkpoint_e%06lld.dmnn", static_cast<long long>(s.epoch));
    save_checkpoint({ck, s.params, s.ema}, out_dir / name);
  };
  auto on_epoch = [&](const CurveRow& row) { write_curve_row(curve, row); };
  const auto result = trainer.train(on_checkpoint, on_epoch);
  save_checkpoint({ck, result.state.params, result.state.ema}, out_dir / "model.dmnn");
  if (result.diverged) throw NumericalError("training diverged at " + result.message);
  std::cerr << "trained " << result.state.epoch << " epochs, final loss " << result.curve.back().loss << "\n";
  return 0;
}

int sample_cmd(const std::string& model_arg, const std::optional<fs::path>& dataset, const fs::path& sampler_path,
               const std::optional<fs::path>& schedule_path, bool conditional, Eigen::Index count, const fs::path& out) {
  Config cfg = load_section(sampler_path, "sampler");
  if (schedule_path) merge_into(cfg, load_section(*schedule_path, "schedule"));
  apply_seed_override(cfg, "sampler.seed");
  const auto sampler = SamplerConfig::from_config(cfg);
  Points<double> samples;
  if (model_arg == "kernel") {
    if (!dataset) throw UsageError("--model kernel needs --dataset");
    const auto ts = load(*dataset);
    const KernelScoreModel<double> model(ts, NoiseSchedule<double>::from_config(cfg), conditional);
    samples = sample(model, sampler, count);
  } else if (model_arg.rfind("checkpoint:", 0) == 0) {
    const auto ck = load_checkpoint(model_arg.substr(11));
    const ScoreNet<float> net(NetConfig::from_config(ck.config), NoiseSchedule<double>::from_config(ck.config));
    const NetScoreModel<float> model(net, ck.ema);
    samples = sample(model, sampler, count);
  } else {
    throw UsageError("--model must be 'kernel' or 'checkpoint:<path>'");
  }
  if (!samples.allFinite()) throw NumericalError("sampler produced non-finite points");
  save(TrainingSet(samples), out);
  return 0;
}

int mem_ratio(const fs::path& samples_path, const fs::path& dataset, double tau, const std::string& bootstrap,
              const std::optional<fs::path>& out) {
  const auto samples = load(samples_path);
  const auto ts = load(dataset);
  auto report = memorization_ratio(samples.data(), ts.data(), tau);
  if (!bootstrap.empty()) {
    const auto parts = split(bootstrap, ',');
    if (parts.size() != 2) throw UsageError("--bootstrap expects M,B");
    std::uint64_t seed = 0;
    if (const auto s = env_seed_override()) seed = *s;
    report.bootstrap = bootstrap_ratio(report, std::stoll(parts[0]), std::stoll(parts[1]), seed);
  }
  Config key;
  key.set("samples", samples_path.string());
  key.set("dataset", dataset.string());
  key.set("tau", g9(tau));
  key.set("bootstrap", bootstrap);
  if (out) {
    std::ofstream f(*out);
    if (!f) throw DataError("cannot write " + out->string());
    write_report_csv(f, report, ts.size(), key.hash_hex());
  } else {
    write_report_csv(std::cout, report, ts.size(), key.hash_hex());
  }
  std::cerr << "ratio " << report.ratio << " over " << report.sample_count << " samples\n";
  return 0;
}

int emm_cmd(const fs::path& curve_path, double epsilon, const std::string& interpolation) {
  const auto curve = read_curve_csv(curve_path);
  const auto est = estimate_emm(curve, epsilon, parse_interpolation(interpolation));
  for (const auto& w : est.warnings) std::cerr << "warning: " << w << "\n";
  write_emm(std::cout, est);
  return 0;
}

ExperimentConfig experiment(const fs::path& config_path, const std::optional<fs::path>& out) {
  auto cfg = Config::load(config_path);
  if (out) cfg.set("output.dir", out->string());
  return ExperimentConfig::from_config(cfg, env_seed_override());
}

int report_record(const RunRecord& record) {
  std::cout << "config_hash = " << record.config_hash << "\n";
  for (const auto& s : record.sizes)
    std::cout << "N = " << s.n << " max_ratio = " << g9(s.max_ratio) << " best_epoch = " << s.best_epoch << "\n";
  if (record.emm) write_emm(std::cout, *record.emm);
  int code = 0;
  for (const auto& f : record.failures) {
    std::cerr << "stage " << f.stage << " failed at N=" << f.n << ": " << f.message << "\n";
    if (code == 0) code = f.exit_code;
  }
  return code;
}

int sweep_cmd(const fs::path& config_path, const std::optional<fs::path>& out) {
  return report_record(run_sweep(experiment(config_path, out)));
}

int metrics_cmd(const fs::path& config_path, const std::optional<fs::path>& out) {
  return report_record(run_metrics(experiment(config_path, out)));
}

int compare_cmd(const fs::path& config_path, const std::optional<fs::path>& out, const std::string& modes_arg) {
  std::vector<ConditioningMode> modes;
  for (const auto& m : split(modes_arg, ',')) {
    if (!trim(m).empty()) modes.push_back(ConditioningMode::parse(m));
  }
  const auto table = compare_conditioning(experiment(config_path, out), modes);
  std::cout << "mode,N,best_epoch,max_ratio\n";
  for (const auto& r : table.maxima) std::cout << r.mode << "," << r.n << "," << r.epoch << "," << g9(r.ratio) << "\n";
  int code = 0;
  for (const auto& run : table.runs)
    for (const auto& f : run.failures) {
      std::cerr << "stage " << f.stage << " failed at N=" << f.n << ": " << f.message << "\n";
      if (code == 0) code = f.exit_code;
    }
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"memlab: memorization experiments with diffusion score models"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string("memlab ") + MEMLAB_VERSION + " (" + MEMLAB_BUILD_TYPE + ")");
  unsigned threads = thread_count();
  app.add_option("--threads", threads, "Worker threads; 1 gives bit-reproducible output")->check(CLI::PositiveNumber);

  std::function<int()> action;

  auto* dataset = app.add_subcommand("dataset", "Generate or subsample training sets");
  dataset->require_subcommand(1);
  fs::path spec, ds_in, ds_out;
  Eigen::Index ds_n = 0;
  std::uint64_t ds_seed = 0;
  auto* make = dataset->add_subcommand("make", "Generate a dataset from a spec file");
  make->add_option("--spec", spec, "Dataset config file")->required();
  make->add_option("--out", ds_out, "Output .dmem path")->required();
  make->callback([&] { action = [&] { return dataset_make(spec, ds_out); }; });
  auto* sub = dataset->add_subcommand("subsample", "Draw a nested random subset");
  sub->add_option("--in", ds_in, "Parent .dmem")->required();
  sub->add_option("--n", ds_n, "Subset size")->required();
  sub->add_option("--seed", ds_seed, "Permutation seed");
  sub->add_option("--out", ds_out, "Output .dmem path")->required();
  sub->callback([&] { action = [&] { return dataset_subsample(ds_in, ds_n, ds_seed, ds_out); }; });

  fs::path data_path, schedule_path, points_path;
  double t = 0.0;
  std::optional<Label> cls;
  auto* se = app.add_subcommand("score-eval", "Kernel-optimum scores and posterior weights as CSV");
  se->add_option("--dataset", data_path, "Training set")->required();
  se->add_option("--schedule", schedule_path, "Schedule config file")->required();
  se->add_option("--points", points_path, "Query points (.dmem or CSV)")->required();
  se->add_option("--t", t, "Diffusion time")->required();
  se->add_option("--class", cls, "Condition on this class");
  se->callback([&] { action = [&] { return score_eval(data_path, schedule_path, points_path, t, cls); }; });

  fs::path net_path, train_path, out_dir;
  std::optional<fs::path> opt_schedule;
  auto* tr = app.add_subcommand("train", "Train a score network with the DSM objective");
  tr->add_option("--dataset", data_path, "Training set")->required();
  tr->add_option("--net", net_path, "Network config file")->required();
  tr->add_option("--train", train_path, "Training config file")->required();
  tr->add_option("--schedule", opt_schedule, "Schedule config file (default EDM)");
  tr->add_option("--out", out_dir, "Output directory")->required();
  tr->callback([&] { action = [&] { return train(data_path, net_path, train_path, opt_schedule, out_dir); }; });

  std::string model_arg;
  std::optional<fs::path> opt_dataset;
  fs::path sampler_path, out_path;
  bool conditional = false;
  Eigen::Index count = 1000;
  auto* sa = app.add_subcommand("sample", "Draw samples with the ODE or SDE sampler");
  sa->add_option("--model", model_arg, "kernel or checkpoint:<path>")->required();
  sa->add_option("--dataset", opt_dataset, "Training set (kernel model)");
  sa->add_option("--sampler", sampler_path, "Sampler config file")->required();
  sa->add_option("--schedule", opt_schedule, "Schedule config file (kernel model; default EDM)");
  sa->add_flag("--conditional", conditional, "Condition the kernel model on dataset labels");
  sa->add_option("--count", count, "Number of samples")->check(CLI::PositiveNumber);
  sa->add_option("--out", out_path, "Output .dmem path")->required();
  sa->callback([&] {
    action = [&] { return sample_cmd(model_arg, opt_dataset, sampler_path, opt_schedule, conditional, count, out_path); };
  });

  fs::path samples_path;
  double tau = kDefaultTau;
  std::string bootstrap;
  std::optional<fs::path> opt_out;
  auto* mr = app.add_subcommand("mem-ratio", "Memorization report of samples against a training set");
  mr->add_option("--samples", samples_path, "Samples .dmem")->required();
  mr->add_option("--dataset", data_path, "Training set")->required();
  mr->add_option("--tau", tau, "Ratio threshold d1 < tau * d2");
  mr->add_option("--bootstrap", bootstrap, "Resample size and replicates, M,B");
  mr->add_option("--out", opt_out, "Report CSV (default stdout)");
  mr->callback([&] { action = [&] { return mem_ratio(samples_path, data_path, tau, bootstrap, opt_out); }; });

  fs::path curve_path;
  double epsilon = kDefaultEpsilon;
  std::string interpolation = "linear";
  auto* em = app.add_subcommand("emm", "Effective model memorization from an N,ratio curve");
  em->add_option("--curve", curve_path, "Curve CSV")->required();
  em->add_option("--epsilon", epsilon, "Level is 1 - epsilon");
  em->add_option("--interpolation", interpolation, "linear or log");
  em->callback([&] { action = [&] { return emm_cmd(curve_path, epsilon, interpolation); }; });

  fs::path config_path;
  auto* sw = app.add_subcommand("sweep", "Train, sample and score over dataset sizes");
  sw->add_option("--config", config_path, "Experiment config file")->required();
  sw->add_option("--out", opt_out, "Output directory (overrides output.dir)");
  sw->callback([&] { action = [&] { return sweep_cmd(config_path, opt_out); }; });

  auto* me = app.add_subcommand("metrics", "Rescore the stored samples of a finished sweep");
  me->add_option("--config", config_path, "Experiment config file")->required();
  me->add_option("--out", opt_out, "Output directory (overrides output.dir)");
  me->callback([&] { action = [&] { return metrics_cmd(config_path, opt_out); }; });

  std::string modes;
  auto* cc = app.add_subcommand("compare-cond", "One sweep per conditioning mode with shared seeds");
  cc->add_option("--config", config_path, "Experiment config file")->required();
  cc->add_option("--out", opt_out, "Output directory (overrides output.dir)");
  cc->add_option("--modes", modes, "Comma list of none, true, random:<C>, unique")->required();
  cc->callback([&] { action = [&] { return compare_cmd(config_path, opt_out, modes); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e, std::cerr, std::cerr);
    std::cerr << app.help();
    return 1;
  }
  set_thread_count(threads);
  try {
    return action();
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
