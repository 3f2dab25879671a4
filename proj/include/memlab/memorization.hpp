#pragma once

#include "memlab/types.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace memlab {

inline constexpr double kDefaultTau = 1.0 / 3.0;

/// Nearest and second-nearest training rows of one query (l2, brute force).
struct Neighbors {
  Eigen::Index index = -1;  // row of the nearest neighbour
  double dist1 = 0.0;
  double dist2 = 0.0;
};

/// Exact search over all rows; requires at least two training rows.
std::vector<Neighbors> nn2(const Points<double>& queries, const Points<double>& train);

/// A sample is a replica when its nearest row is closer than tau times the
/// second-nearest. Duplicated training rows give dist2 = 0 and never count.
inline bool is_memorized(double dist1, double dist2, double tau) { return dist1 < tau * dist2; }

struct SampleVerdict {
  Eigen::Index nn1_index = -1;
  double nn1_dist = 0.0;
  double nn2_dist = 0.0;
  bool memorized = false;
};

struct BootstrapSummary {
  Eigen::Index resample_size = 0;
  Eigen::Index replicates = 0;
  double mean = 0.0;
  double std = 0.0;
};

struct MemorizationReport {
  std::vector<SampleVerdict> samples;
  double ratio = 0.0;
  double tau = kDefaultTau;
  Eigen::Index sample_count = 0;
  Eigen::Index duplicate_hits = 0;  // samples whose two nearest rows coincide
  std::optional<BootstrapSummary> bootstrap;
};

MemorizationReport memorization_ratio(const Points<double>& samples, const Points<double>& train,
                                      double tau = kDefaultTau);

/// Resamples verdicts with replacement: B replicates of size M. std is the
/// sample standard deviation (B - 1 denominator) of the replicate ratios.
BootstrapSummary bootstrap_ratio(const std::vector<std::uint8_t>& verdicts, Eigen::Index resample_size,
                                 Eigen::Index replicates, std::uint64_t seed);
BootstrapSummary bootstrap_ratio(const MemorizationReport& report, Eigen::Index resample_size,
                                 Eigen::Index replicates, std::uint64_t seed);

/// CSV: comment header (`# config_hash=`, `# dataset_size=`, `# tau=`),
/// `sample_id,nn1_index,nn1_dist,nn2_dist,memorized` rows, footer `ratio,<value>`.
void write_report_csv(std::ostream& out, const MemorizationReport& report, Eigen::Index dataset_size,
                      const std::string& config_hash);

/// Dataset size and ratio recovered from a report CSV.
struct ReportSummary {
  double dataset_size = 0.0;
  double ratio = 0.0;
};
ReportSummary read_report_summary(const std::filesystem::path& path);

}  // namespace memlab
