#pragma once

#include "memlab/dataset.hpp"
#include "memlab/random.hpp"
#include "memlab/schedule.hpp"
#include "memlab/score_model.hpp"

#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace memlab {

/// lambda(t) in the weighted DSM objective.
enum class LossWeighting { Sigma2, Uniform };
/// Density of t on [t_min, T].
enum class TimeSampling { Uniform, LogUniform };

inline LossWeighting parse_loss_weighting(const std::string& s) {
  if (s == "sigma2") return LossWeighting::Sigma2;
  if (s == "uniform") return LossWeighting::Uniform;
  throw DataError("unknown loss weighting: " + s);
}

inline TimeSampling parse_time_sampling(const std::string& s) {
  if (s == "uniform") return TimeSampling::Uniform;
  if (s == "log-uniform") return TimeSampling::LogUniform;
  throw DataError("unknown t sampling: " + s);
}

inline std::string to_string(LossWeighting w) { return w == LossWeighting::Sigma2 ? "sigma2" : "uniform"; }
inline std::string to_string(TimeSampling s) { return s == TimeSampling::Uniform ? "uniform" : "log-uniform"; }

template <typename Scalar>
Scalar loss_weight(LossWeighting w, Scalar sigma) {
  return w == LossWeighting::Sigma2 ? sigma * sigma : Scalar(1);
}

/// Per-row diffusion time and Gaussian draw.
template <typename Scalar>
struct NoiseDraws {
  Vector<Scalar> t;
  Points<Scalar> eps;
};

/// Draws t first, then d normals, row by row, so that row i depends only on
/// the rng state after row i-1.
template <typename Scalar>
NoiseDraws<Scalar> draw_noise(Eigen::Index rows, Eigen::Index dim, const NoiseSchedule<Scalar>& schedule,
                              TimeSampling sampling, Rng& rng) {
  std::uniform_real_distribution<double> unit;
  std::normal_distribution<double> normal;
  NoiseDraws<Scalar> out{Vector<Scalar>(rows), Points<Scalar>(rows, dim)};
  const double lo = static_cast<double>(schedule.t_min());
  const double hi = static_cast<double>(schedule.t_max());
  for (Eigen::Index i = 0; i < rows; ++i) {
    const double u = unit(rng);
    const double t = sampling == TimeSampling::Uniform ? lo + u * (hi - lo)
                                                       : std::exp(std::log(lo) + u * (std::log(hi) - std::log(lo)));
    out.t(i) = Scalar(std::min(hi, std::max(lo, t)));
    for (Eigen::Index j = 0; j < dim; ++j) out.eps(i, j) = Scalar(normal(rng));
  }
  return out;
}

/// Monte-Carlo draws of the full objective: a training row index plus noise.
template <typename Scalar>
struct DsmDraws {
  std::vector<Eigen::Index> rows;
  NoiseDraws<Scalar> noise;
};

template <typename Scalar>
DsmDraws<Scalar> draw_dsm(const TrainingSet& ts, Eigen::Index count, const NoiseSchedule<Scalar>& schedule,
                          TimeSampling sampling, std::uint64_t seed) {
  auto index_rng = make_rng(seed, 101);
  auto noise_rng = make_rng(seed, 102);
  std::uniform_int_distribution<Eigen::Index> pick(0, ts.size() - 1);
  DsmDraws<Scalar> out;
  out.rows.resize(static_cast<std::size_t>(count));
  for (auto& r : out.rows) r = pick(index_rng);
  out.noise = draw_noise<Scalar>(count, ts.dim(), schedule, sampling, noise_rng);
  return out;
}

/// Noised inputs z = alpha_t x + sigma_t eps for the given clean rows.
template <typename Scalar>
Points<Scalar> noised(const Points<Scalar>& x, const NoiseDraws<Scalar>& noise, const NoiseSchedule<Scalar>& schedule) {
  Points<Scalar> z(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const Scalar t = noise.t(i);
    z.row(i) = schedule.alpha(t) * x.row(i) + schedule.sigma(t) * noise.eps.row(i);
  }
  return z;
}

/// Per-draw terms lambda(t) * 0.5 * ||s(z, t) + eps / sigma_t||^2 for any score model.
template <typename Scalar>
Vector<Scalar> dsm_terms(const ScoreModel<Scalar>& model, const TrainingSet& ts, const DsmDraws<Scalar>& draws,
                         LossWeighting weighting, Eigen::Index chunk = 4096) {
  const auto& sched = model.schedule();
  const Eigen::Index count = static_cast<Eigen::Index>(draws.rows.size());
  Vector<Scalar> out(count);
  for (Eigen::Index start = 0; start < count; start += chunk) {
    const Eigen::Index m = std::min(chunk, count - start);
    Points<Scalar> x(m, ts.dim());
    std::vector<Label> classes;
    for (Eigen::Index i = 0; i < m; ++i) {
      const auto r = draws.rows[static_cast<std::size_t>(start + i)];
      x.row(i) = ts.data().row(r).template cast<Scalar>();
      if (model.conditional()) classes.push_back(ts.labels()[static_cast<std::size_t>(r)]);
    }
    NoiseDraws<Scalar> part{draws.noise.t.segment(start, m), draws.noise.eps.middleRows(start, m)};
    const auto z = noised(x, part, sched);
    const auto s = model.score(z, part.t, classes);
    for (Eigen::Index i = 0; i < m; ++i) {
      const Scalar sig = sched.sigma(part.t(i));
      out(start + i) =
          loss_weight(weighting, sig) * Scalar(0.5) * (s.row(i) + part.eps.row(i) / sig).squaredNorm();
    }
  }
  return out;
}

}  // namespace memlab
