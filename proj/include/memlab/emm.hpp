#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

namespace memlab {

struct CurvePoint {
  double n = 0.0;
  double ratio = 0.0;
};

/// Dataset size vs memorization ratio, N strictly increasing.
struct MemCurve {
  std::vector<CurvePoint> points;
  std::map<std::string, std::string> metadata;

  void validate() const;
};

enum class Censoring { ExactInterpolated, LowerBound, UpperBound };
enum class Interpolation { Linear, Log };

std::string to_string(Censoring c);
std::string to_string(Interpolation m);
Interpolation parse_interpolation(const std::string& text);

inline constexpr double kDefaultEpsilon = 0.1;

struct EmmEstimate {
  double epsilon = kDefaultEpsilon;
  double level = 1.0 - kDefaultEpsilon;
  // Interpolated size, or the bound itself when censored
  // (lower bound: value >= last N; upper bound: value < first N).
  double value = 0.0;
  Censoring censoring = Censoring::ExactInterpolated;
  std::optional<std::pair<double, double>> bracket;
  std::vector<std::string> warnings;
};

/// Consecutive index pairs (i, i+1) where the ratio increases with N.
std::vector<std::pair<std::size_t, std::size_t>> check_monotonicity(const MemCurve& curve);

/// Interpolates the first downward crossing of the level 1 - epsilon. A point
/// sitting exactly on the level counts as a crossing and returns its own N.
EmmEstimate estimate_emm(const MemCurve& curve, double epsilon = kDefaultEpsilon,
                         Interpolation mode = Interpolation::Linear);

/// Parses `N,ratio` rows; a non-numeric first row is treated as a header and
/// `#` lines as comments.
MemCurve read_curve_csv(const std::filesystem::path& path);
void write_curve_csv(std::ostream& out, const MemCurve& curve);

/// Builds a sorted curve from memorization report CSVs; duplicate N is an error.
MemCurve curve_from_runs(const std::vector<std::filesystem::path>& reports);

void write_emm(std::ostream& out, const EmmEstimate& est);

}  // namespace memlab
