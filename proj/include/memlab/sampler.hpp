#pragma once

#include "memlab/config.hpp"
#include "memlab/parallel.hpp"
#include "memlab/random.hpp"
#include "memlab/schedule.hpp"
#include "memlab/score_model.hpp"

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace memlab {

enum class SamplerMethod { OdeEuler, SdeEuler };
/// Spacing of t_1 = t_min < ... < t_n = T; t_0 = 0 is always appended.
enum class GridKind { Uniform, Geometric };
/// Variance of the SDE noise term.
///   appendix:       2 c (t_n - t_{n+1}), the discretized update rule as derived,
///   euler-maruyama: -2 c, i.e. g^2 |dt| to first order,
/// with c = sigma_{n+1} sigma_n - alpha_n sigma_{n+1}^2 / alpha_{n+1}.
enum class SdeNoise { Appendix, EulerMaruyama };

SamplerMethod parse_sampler_method(const std::string& s);
GridKind parse_grid_kind(const std::string& s);
SdeNoise parse_sde_noise(const std::string& s);
std::string to_string(SamplerMethod m);
std::string to_string(GridKind g);
std::string to_string(SdeNoise n);

struct SamplerConfig {
  SamplerMethod method = SamplerMethod::OdeEuler;
  Eigen::Index num_steps = 100;
  GridKind grid = GridKind::Uniform;
  SdeNoise sde_noise = SdeNoise::Appendix;
  std::uint64_t seed = 0;
  Eigen::Index batch_size = 256;

  void validate() const;
  static SamplerConfig from_config(const Config& cfg, const std::string& prefix = "sampler");
  void write_config(Config& cfg, const std::string& prefix = "sampler") const;
};

/// Descending times T = t_n > ... > t_1 = t_min > t_0 = 0 (num_steps + 1 entries).
template <typename Scalar>
std::vector<Scalar> time_grid(const NoiseSchedule<Scalar>& schedule, Eigen::Index num_steps, GridKind kind) {
  if (num_steps < 2) throw DataError("sampler needs num_steps >= 2");
  const Scalar hi = schedule.t_max();
  const Scalar lo = schedule.t_min();
  std::vector<Scalar> grid(static_cast<std::size_t>(num_steps) + 1);
  for (Eigen::Index k = 0; k < num_steps; ++k) {
    const Scalar u = Scalar(k) / Scalar(num_steps - 1);
    grid[static_cast<std::size_t>(k)] =
        kind == GridKind::Uniform ? hi + u * (lo - hi) : std::exp(std::log(hi) + u * (std::log(lo) - std::log(hi)));
  }
  grid.front() = hi;
  grid[static_cast<std::size_t>(num_steps) - 1] = lo;
  grid.back() = Scalar(0);
  return grid;
}

/// c = sigma_from sigma_to - alpha_to sigma_from^2 / alpha_from, the shared
/// score coefficient of both Euler updates.
template <typename Scalar>
Scalar step_coefficient(const NoiseSchedule<Scalar>& sched, Scalar t_from, Scalar t_to) {
  const Scalar s_from = sched.sigma(t_from);
  if (!(s_from > Scalar(0))) throw NumericalError("sigma_t = 0 at the start of a step");
  return s_from * sched.sigma(t_to) - sched.alpha(t_to) * s_from * s_from / sched.alpha(t_from);
}

/// z_to = (alpha_to / alpha_from) z - c s(z, t_from). For t_to = 0 this is
/// z_0 = z / alpha + sigma^2 / alpha s, the weighted mean of training rows
/// under the kernel score.
template <typename Scalar>
Points<Scalar> ode_step(const ScoreModel<Scalar>& model, const Points<Scalar>& z, Scalar t_from, Scalar t_to,
                        std::span<const Label> classes = {}) {
  const auto& sched = model.schedule();
  const Scalar c = step_coefficient(sched, t_from, t_to);
  const Scalar ratio = sched.alpha(t_to) / sched.alpha(t_from);
  return ratio * z - c * model.score(z, t_from, classes);
}

/// Euler-Maruyama step with doubled score coefficient and explicit noise.
template <typename Scalar>
Points<Scalar> sde_step(const ScoreModel<Scalar>& model, const Points<Scalar>& z, Scalar t_from, Scalar t_to,
                        const Points<Scalar>& noise, std::span<const Label> classes = {},
                        SdeNoise mode = SdeNoise::Appendix) {
  const auto& sched = model.schedule();
  const Scalar c = step_coefficient(sched, t_from, t_to);
  const Scalar var = mode == SdeNoise::Appendix ? Scalar(2) * c * (t_to - t_from) : -Scalar(2) * c;
  if (var < Scalar(0)) {
    throw NumericalError("negative SDE variance between t=" + std::to_string(static_cast<double>(t_from)) +
                         " and t=" + std::to_string(static_cast<double>(t_to)));
  }
  const Scalar ratio = sched.alpha(t_to) / sched.alpha(t_from);
  Points<Scalar> out = ratio * z - (Scalar(2) * c) * model.score(z, t_from, classes);
  out += std::sqrt(var) * noise;
  return out;
}

/// Supplies the Gaussian draw for step k (0 = first step from T) of a batch.
template <typename Scalar>
using NoiseSource = std::function<Points<Scalar>(std::size_t step, Eigen::Index rows, Eigen::Index dim)>;

/// Integrates a batch from z at grid[0] down to t = 0.
template <typename Scalar>
Points<Scalar> integrate(const ScoreModel<Scalar>& model, const SamplerConfig& cfg, const std::vector<Scalar>& grid,
                         Points<Scalar> z, std::span<const Label> classes, const NoiseSource<Scalar>& noise = {}) {
  for (std::size_t k = 0; k + 1 < grid.size(); ++k) {
    if (cfg.method == SamplerMethod::OdeEuler) {
      z = ode_step(model, z, grid[k], grid[k + 1], classes);
    } else {
      const Points<Scalar> eps = noise ? noise(k, z.rows(), z.cols()) : Points<Scalar>::Zero(z.rows(), z.cols());
      z = sde_step(model, z, grid[k], grid[k + 1], eps, classes, cfg.sde_noise);
    }
  }
  return z;
}

/// Standard deviation of the prior at T: sigma_T for EDM/VE, 1 for VP.
template <typename Scalar>
Scalar prior_scale(const NoiseSchedule<Scalar>& sched) {
  return sched.kind() == ScheduleKind::VP ? Scalar(1) : sched.sigma(sched.t_max());
}

/// Draws `count` samples. Trajectory i uses its own stream derived from
/// (seed, i), so output is independent of batch size and thread count.
/// `classes` is empty, one label for every sample, or one label per sample;
/// conditional models default to class i mod C.
template <typename Scalar>
Points<Scalar> sample(const ScoreModel<Scalar>& model, const SamplerConfig& cfg, Eigen::Index count,
                      std::span<const Label> classes = {}) {
  cfg.validate();
  if (count < 1) throw DataError("sample count must be >= 1");
  const auto grid = time_grid(model.schedule(), cfg.num_steps, cfg.grid);
  const Eigen::Index d = model.dim();
  std::vector<Label> labels;
  if (model.conditional()) {
    if (!classes.empty() && classes.size() != 1 && static_cast<Eigen::Index>(classes.size()) != count) {
      throw DataError("class list must have one entry or one per sample");
    }
    labels.resize(static_cast<std::size_t>(count));
    for (Eigen::Index i = 0; i < count; ++i) {
      const auto u = static_cast<std::size_t>(i);
      labels[u] = classes.empty() ? static_cast<Label>(i % model.num_classes())
                                  : classes.size() == 1 ? classes[0] : classes[u];
    }
  } else if (!classes.empty()) {
    throw DataError("classes given to an unconditional model");
  }

  Points<Scalar> out(count, d);
  const Scalar scale = prior_scale(model.schedule());
  const auto batches = static_cast<std::size_t>((count + cfg.batch_size - 1) / cfg.batch_size);
  parallel_for(batches, [&](std::size_t b) {
    const Eigen::Index start = static_cast<Eigen::Index>(b) * cfg.batch_size;
    const Eigen::Index m = std::min(cfg.batch_size, count - start);
    std::vector<Rng> rngs;
    rngs.reserve(static_cast<std::size_t>(m));
    for (Eigen::Index i = 0; i < m; ++i) rngs.push_back(make_rng(cfg.seed, static_cast<std::uint64_t>(start + i)));
    std::normal_distribution<double> normal;
    auto draw = [&](Eigen::Index rows, Eigen::Index cols) {
      Points<Scalar> e(rows, cols);
      for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) e(i, j) = Scalar(normal(rngs[static_cast<std::size_t>(i)]));
      }
      return e;
    };
    Points<Scalar> z = scale * draw(m, d);
    std::span<const Label> cls;
    if (!labels.empty()) cls = std::span<const Label>(labels).subspan(static_cast<std::size_t>(start), static_cast<std::size_t>(m));
    NoiseSource<Scalar> noise = [&](std::size_t, Eigen::Index rows, Eigen::Index cols) { return draw(rows, cols); };
    out.middleRows(start, m) = integrate(model, cfg, grid, std::move(z), cls, noise);
  });
  return out;
}

}  // namespace memlab
