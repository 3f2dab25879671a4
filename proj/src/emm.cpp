#include "memlab/emm.hpp"

#include "memlab/config.hpp"
#include "memlab/memorization.hpp"
#include "memlab/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>

namespace memlab {

void MemCurve::validate() const {
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& p = points[i];
    if (!std::isfinite(p.n) || p.n <= 0.0) throw DataError("curve: dataset size must be positive");
    if (!(p.ratio >= 0.0 && p.ratio <= 1.0)) throw DataError("curve: ratio outside [0, 1]");
    if (i > 0 && !(p.n > points[i - 1].n)) throw DataError("curve: dataset sizes must be strictly increasing");
  }
}

std::string to_string(Censoring c) {
  switch (c) {
    case Censoring::ExactInterpolated: return "exact-interpolated";
    case Censoring::LowerBound: return "lower-bound";
    case Censoring::UpperBound: return "upper-bound";
  }
  return "?";
}

std::string to_string(Interpolation m) { return m == Interpolation::Linear ? "linear" : "log"; }

Interpolation parse_interpolation(const std::string& text) {
  if (text == "linear") return Interpolation::Linear;
  if (text == "log") return Interpolation::Log;
  throw UsageError("unknown interpolation '" + text + "' (expected linear or log)");
}

std::vector<std::pair<std::size_t, std::size_t>> check_monotonicity(const MemCurve& curve) {
  curve.validate();
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i + 1 < curve.points.size(); ++i)
    if (curve.points[i + 1].ratio > curve.points[i].ratio) out.emplace_back(i, i + 1);
  return out;
}

EmmEstimate estimate_emm(const MemCurve& curve, double epsilon, Interpolation mode) {
  if (curve.points.empty()) throw DataError("curve is empty");
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw DataError("epsilon must be in (0, 1)");
  const auto violations = check_monotonicity(curve);
  const auto& pts = curve.points;
  EmmEstimate est;
  est.epsilon = epsilon;
  est.level = 1.0 - epsilon;
  for (const auto& [a, b] : violations) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "non-monotone: ratio rises from %.6g at N=%.6g to %.6g at N=%.6g",
                  pts[a].ratio, pts[a].n, pts[b].ratio, pts[b].n);
    est.warnings.emplace_back(buf);
  }

  std::size_t crossings = 0;
  std::optional<std::size_t> first;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    if (pts[i].ratio >= est.level && pts[i + 1].ratio < est.level) {
      ++crossings;
      if (!first) first = i;
    }
  }
  // A trailing point exactly on the level is its own crossing.
  if (!first && pts.back().ratio == est.level && (pts.size() == 1 || pts[pts.size() - 2].ratio >= est.level)) {
    est.value = pts.back().n;
    est.bracket = std::make_pair(pts.back().n, pts.back().n);
    return est;
  }
  if (crossings > 1) est.warnings.emplace_back("multiple crossings; using the first in increasing N");

  if (first) {
    const auto& lo = pts[*first];
    const auto& hi = pts[*first + 1];
    const double frac = (lo.ratio - est.level) / (lo.ratio - hi.ratio);
    if (mode == Interpolation::Linear) {
      est.value = lo.n + frac * (hi.n - lo.n);
    } else {
      est.value = std::exp(std::log(lo.n) + frac * (std::log(hi.n) - std::log(lo.n)));
    }
    est.bracket = std::make_pair(lo.n, hi.n);
    return est;
  }
  if (pts.front().ratio < est.level) {
    est.censoring = Censoring::UpperBound;
    est.value = pts.front().n;
    if (!violations.empty()) est.warnings.emplace_back("ratio below level at the smallest size but rises later");
  } else {
    est.censoring = Censoring::LowerBound;
    est.value = pts.back().n;
  }
  return est;
}

namespace {

bool parse_number(const std::string& text, double& out) {
  const auto t = trim(text);
  if (t.empty()) return false;
  char* end = nullptr;
  out = std::strtod(t.c_str(), &end);
  return end != t.c_str() && *end == '\0';
}

}  // namespace

MemCurve read_curve_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open curve: " + path.string());
  MemCurve curve;
  std::string line;
  std::size_t lineno = 0;
  bool seen_row = false;
  while (std::getline(in, line)) {
    ++lineno;
    const auto t = trim(line);
    if (t.empty()) continue;
    if (t[0] == '#') {
      const auto body = trim(t.substr(1));
      const auto eq = body.find('=');
      if (eq != std::string::npos) curve.metadata[trim(body.substr(0, eq))] = trim(body.substr(eq + 1));
      continue;
    }
    const auto cells = split(t, ',');
    double n = 0.0;
    double r = 0.0;
    if (cells.size() >= 2 && parse_number(cells[0], n) && parse_number(cells[1], r)) {
      curve.points.push_back({n, r});
      seen_row = true;
      continue;
    }
    if (!seen_row && curve.points.empty() && cells.size() >= 2) {
      seen_row = true;  // header
      continue;
    }
    throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 'N,ratio'");
  }
  if (curve.points.empty()) throw DataError(path.string() + ": curve has no points");
  curve.validate();
  return curve;
}

void write_curve_csv(std::ostream& out, const MemCurve& curve) {
  for (const auto& [k, v] : curve.metadata) out << "# " << k << "=" << v << "\n";
  out << "N,ratio\n";
  char buf[64];
  for (const auto& p : curve.points) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.9g\n", p.n, p.ratio);
    out << buf;
  }
}

MemCurve curve_from_runs(const std::vector<std::filesystem::path>& reports) {
  if (reports.empty()) throw DataError("no run reports given");
  MemCurve curve;
  for (const auto& path : reports) {
    const auto s = read_report_summary(path);
    curve.points.push_back({s.dataset_size, s.ratio});
  }
  std::sort(curve.points.begin(), curve.points.end(),
            [](const CurvePoint& a, const CurvePoint& b) { return a.n < b.n; });
  for (std::size_t i = 1; i < curve.points.size(); ++i)
    if (curve.points[i].n == curve.points[i - 1].n)
      throw DataError("duplicate dataset size " + std::to_string(static_cast<long long>(curve.points[i].n)));
  curve.validate();
  return curve;
}

void write_emm(std::ostream& out, const EmmEstimate& est) {
  char buf[256];
  switch (est.censoring) {
    case Censoring::ExactInterpolated:
      std::snprintf(buf, sizeof(buf), "EMM = %.4f (epsilon=%g, between N=%g and N=%g)\n", est.value, est.epsilon,
                    est.bracket->first, est.bracket->second);
      break;
    case Censoring::LowerBound:
      std::snprintf(buf, sizeof(buf), "EMM >= %g (epsilon=%g, every ratio at or above %g)\n", est.value, est.epsilon,
                    est.level);
      break;
    case Censoring::UpperBound:
      std::snprintf(buf, sizeof(buf), "EMM < %g (epsilon=%g, ratio already below %g)\n", est.value, est.epsilon,
                    est.level);
      break;
  }
  out << buf;
  out << "{\n";
  std::snprintf(buf, sizeof(buf), "  \"value\": %.10g,\n", est.value);
  out << buf;
  out << "  \"censoring\": \"" << to_string(est.censoring) << "\",\n";
  std::snprintf(buf, sizeof(buf), "  \"epsilon\": %g,\n", est.epsilon);
  out << buf;
  if (est.bracket) {
    std::snprintf(buf, sizeof(buf), "  \"bracket\": [%.10g, %.10g],\n", est.bracket->first, est.bracket->second);
    out << buf;
  } else {
    out << "  \"bracket\": null,\n";
  }
  out << "  \"warnings\": [";
  for (std::size_t i = 0; i < est.warnings.size(); ++i) out << (i ? ", " : "") << "\"" << est.warnings[i] << "\"";
  out << "]\n}\n";
}

}  // namespace memlab
