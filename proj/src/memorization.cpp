#include "memlab/memorization.hpp"

#include "memlab/config.hpp"
#include "memlab/parallel.hpp"
#include "memlab/random.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

namespace memlab {

std::vector<Neighbors> nn2(const Points<double>& queries, const Points<double>& train) {
  if (train.rows() < 2) throw DataError("nearest-neighbour criterion needs at least two training rows");
  if (queries.cols() != train.cols()) throw DataError("query dimension does not match training set");
  std::vector<Neighbors> out(static_cast<std::size_t>(queries.rows()));
  constexpr Eigen::Index kChunk = 256;
  const auto chunks = static_cast<std::size_t>((queries.rows() + kChunk - 1) / kChunk);
  parallel_for(chunks, [&](std::size_t c) {
    const Eigen::Index begin = static_cast<Eigen::Index>(c) * kChunk;
    const Eigen::Index end = std::min(queries.rows(), begin + kChunk);
    for (Eigen::Index q = begin; q < end; ++q) {
      double best = std::numeric_limits<double>::infinity();
      double second = best;
      Eigen::Index best_idx = -1;
      for (Eigen::Index n = 0; n < train.rows(); ++n) {
        const double d2 = (train.row(n) - queries.row(q)).squaredNorm();
        if (d2 < best) {
          second = best;
          best = d2;
          best_idx = n;
        } else if (d2 < second) {
          second = d2;
        }
      }
      out[static_cast<std::size_t>(q)] = {best_idx, std::sqrt(best), std::sqrt(second)};
    }
  });
  return out;
}

MemorizationReport memorization_ratio(const Points<double>& samples, const Points<double>& train, double tau) {
  if (!(tau > 0.0)) throw DataError("tau must be > 0");
  if (samples.rows() < 1) throw DataError("no samples to evaluate");
  MemorizationReport report;
  report.tau = tau;
  report.sample_count = samples.rows();
  Eigen::Index hits = 0;
  for (const auto& nb : nn2(samples, train)) {
    SampleVerdict v{nb.index, nb.dist1, nb.dist2, is_memorized(nb.dist1, nb.dist2, tau)};
    if (nb.dist2 == 0.0) ++report.duplicate_hits;
    hits += v.memorized ? 1 : 0;
    report.samples.push_back(v);
  }
  report.ratio = static_cast<double>(hits) / static_cast<double>(report.sample_count);
  return report;
}

BootstrapSummary bootstrap_ratio(const std::vector<std::uint8_t>& verdicts, Eigen::Index resample_size,
                                 Eigen::Index replicates, std::uint64_t seed) {
  if (verdicts.empty()) throw DataError("bootstrap needs a non-empty sample set");
  if (resample_size < 1) throw DataError("bootstrap resample size must be >= 1");
  if (replicates < 2) throw DataError("bootstrap needs at least two replicates");
  auto rng = make_rng(seed, 301);
  std::uniform_int_distribution<std::size_t> pick(0, verdicts.size() - 1);
  std::vector<double> ratios(static_cast<std::size_t>(replicates));
  for (auto& r : ratios) {
    Eigen::Index hits = 0;
    for (Eigen::Index i = 0; i < resample_size; ++i) hits += verdicts[pick(rng)];
    r = static_cast<double>(hits) / static_cast<double>(resample_size);
  }
  double mean = 0.0;
  for (double r : ratios) mean += r;
  mean /= static_cast<double>(ratios.size());
  double var = 0.0;
  for (double r : ratios) var += (r - mean) * (r - mean);
  var /= static_cast<double>(ratios.size() - 1);
  return {resample_size, replicates, mean, std::sqrt(var)};
}

BootstrapSummary bootstrap_ratio(const MemorizationReport& report, Eigen::Index resample_size,
                                 Eigen::Index replicates, std::uint64_t seed) {
  std::vector<std::uint8_t> verdicts;
  verdicts.reserve(report.samples.size());
  for (const auto& s : report.samples) verdicts.push_back(s.memorized ? 1 : 0);
  return bootstrap_ratio(verdicts, resample_size, replicates, seed);
}

void write_report_csv(std::ostream& out, const MemorizationReport& report, Eigen::Index dataset_size,
                      const std::string& config_hash) {
  char buf[256];
  out << "# config_hash=" << config_hash << "\n";
  out << "# dataset_size=" << dataset_size << "\n";
  std::snprintf(buf, sizeof(buf), "# tau=%.17g\n", report.tau);
  out << buf;
  out << "# distance=l2 over flattened raw vectors\n";
  if (report.duplicate_hits > 0) out << "# warning=duplicate_training_rows hits=" << report.duplicate_hits << "\n";
  out << "sample_id,nn1_index,nn1_dist,nn2_dist,memorized\n";
  for (std::size_t i = 0; i < report.samples.size(); ++i) {
    const auto& s = report.samples[i];
    std::snprintf(buf, sizeof(buf), "%zu,%lld,%.9g,%.9g,%d\n", i, static_cast<long long>(s.nn1_index), s.nn1_dist,
                  s.nn2_dist, s.memorized ? 1 : 0);
    out << buf;
  }
  if (report.bootstrap) {
    const auto& b = *report.bootstrap;
    std::snprintf(buf, sizeof(buf), "# bootstrap_M=%lld bootstrap_B=%lld mean=%.9g std=%.9g\n",
                  static_cast<long long>(b.resample_size), static_cast<long long>(b.replicates), b.mean, b.std);
    out << buf;
  }
  std::snprintf(buf, sizeof(buf), "ratio,%.9g\n", report.ratio);
  out << buf;
}

ReportSummary read_report_summary(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open report: " + path.string());
  std::optional<double> size;
  std::optional<double> ratio;
  std::string line;
  auto parse = [&](const std::string& text) {
    char* end = nullptr;
    const double v = std::strtod(text.c_str(), &end);
    if (end == text.c_str() || *end != '\0') throw DataError("report " + path.string() + ": bad number '" + text + "'");
    return v;
  };
  while (std::getline(in, line)) {
    const auto t = trim(line);
    if (t.rfind("# dataset_size=", 0) == 0) size = parse(trim(t.substr(15)));
    if (t.rfind("ratio,", 0) == 0) ratio = parse(trim(t.substr(6)));
  }
  if (!size) throw DataError("report " + path.string() + ": missing dataset_size");
  if (!ratio) throw DataError("report " + path.string() + ": missing ratio footer");
  return {*size, *ratio};
}

}  // namespace memlab
