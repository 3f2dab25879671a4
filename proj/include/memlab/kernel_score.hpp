#pragma once

#include "memlab/dataset.hpp"
#include "memlab/dsm.hpp"
#include "memlab/schedule.hpp"
#include "memlab/score_model.hpp"

#include <cmath>
#include <limits>
#include <optional>
#include <span>
#include <vector>

namespace memlab {

/// Closed-form minimizer of the empirical DSM objective:
///
///   s*(z, t) = sum_n softmax_n(-||alpha_t x_n - z||^2 / (2 sigma_t^2)) (alpha_t x_n - z) / sigma_t^2
///
/// With `conditional` the softmax for class c runs over {n : y_n = c} only.
/// Exponents are max-shifted before exponentiation; at small sigma they reach
/// -1e6 and the unshifted form underflows to 0/0.
template <typename Scalar>
class KernelScoreModel final : public ScoreModel<Scalar> {
 public:
  KernelScoreModel(const TrainingSet& ts, NoiseSchedule<Scalar> schedule, bool conditional = false)
      : x_(ts.data().template cast<Scalar>()), schedule_(std::move(schedule)) {
    norms_ = x_.rowwise().squaredNorm();
    if (conditional) {
      if (!ts.labeled()) throw DataError("conditional kernel model requires a labeled training set");
      num_classes_ = ts.num_classes();
      members_.resize(num_classes_);
      const auto& y = ts.labels();
      for (std::size_t i = 0; i < y.size(); ++i) members_[y[i]].push_back(static_cast<Eigen::Index>(i));
    }
  }

  Eigen::Index dim() const override { return x_.cols(); }
  Eigen::Index size() const { return x_.rows(); }
  const NoiseSchedule<Scalar>& schedule() const override { return schedule_; }
  std::uint32_t num_classes() const override { return num_classes_; }
  const Points<Scalar>& points() const { return x_; }

  /// Posterior weights over training rows (zero outside the class subset).
  Vector<Scalar> weights(const Vector<Scalar>& z, Scalar t, std::optional<Label> cls = std::nullopt) const {
    Points<Scalar> zb = z.transpose();
    Vector<Scalar> tb = Vector<Scalar>::Constant(1, t);
    std::vector<Label> c;
    if (cls) c.push_back(*cls);
    return weights_batch(zb, tb, c).row(0).transpose();
  }

  /// Row i holds the weights for query i; shape M x N.
  Points<Scalar> weights_batch(const Points<Scalar>& z, const Vector<Scalar>& t, std::span<const Label> classes) const {
    check_query(z, t, classes);
    Points<Scalar> w = Points<Scalar>::Zero(z.rows(), x_.rows());
    if (!this->conditional()) {
      fill_weights(z, t, w);
      return w;
    }
    for_each_class(classes, [&](Label c, const std::vector<Eigen::Index>& rows) {
      fill_weights_subset(z, t, rows, members_[c], w);
    });
    return w;
  }

  /// Weighted mean of training rows: D*(z, t) = (sigma^2 s* + z) / alpha.
  Points<Scalar> denoise(const Points<Scalar>& z, const Vector<Scalar>& t, std::span<const Label> classes = {}) const {
    return weights_batch(z, t, classes) * x_;
  }

  Points<Scalar> denoise(const Points<Scalar>& z, Scalar t, std::span<const Label> classes = {}) const {
    return denoise(z, Vector<Scalar>::Constant(z.rows(), t), classes);
  }

  Points<Scalar> score(const Points<Scalar>& z, const Vector<Scalar>& t,
                       std::span<const Label> classes) const override {
    const auto d = denoise(z, t, classes);
    Points<Scalar> s(z.rows(), z.cols());
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      const Scalar a = schedule_.alpha(t(i));
      const Scalar sig = schedule_.sigma(t(i));
      s.row(i) = (a * d.row(i) - z.row(i)) / (sig * sig);
    }
    return s;
  }

  using ScoreModel<Scalar>::score;

  /// eps*(z, t) = -sigma_t s*(z, t).
  Points<Scalar> noise_prediction(const Points<Scalar>& z, const Vector<Scalar>& t,
                                  std::span<const Label> classes = {}) const {
    Points<Scalar> s = score(z, t, classes);
    for (Eigen::Index i = 0; i < z.rows(); ++i) s.row(i) *= -schedule_.sigma(t(i));
    return s;
  }

 private:
  void check_query(const Points<Scalar>& z, const Vector<Scalar>& t, std::span<const Label> classes) const {
    if (z.cols() != x_.cols()) throw DataError("query dimension does not match training set");
    if (t.size() != z.rows()) throw DataError("one time per query row required");
    for (Eigen::Index i = 0; i < t.size(); ++i) {
      if (!(schedule_.sigma(t(i)) > Scalar(0))) throw NumericalError("kernel score is degenerate at sigma_t = 0");
    }
    if (this->conditional()) {
      if (static_cast<Eigen::Index>(classes.size()) != z.rows()) {
        throw DataError("conditional model needs one class per query row");
      }
      for (Label c : classes) {
        if (c >= num_classes_) throw DataError("class " + std::to_string(c) + " outside [0, C)");
        if (members_[c].empty()) throw DataError("class " + std::to_string(c) + " has no training rows");
      }
    } else if (!classes.empty()) {
      throw DataError("class given to an unconditional kernel model");
    }
  }

  template <typename Fn>
  void for_each_class(std::span<const Label> classes, Fn&& fn) const {
    std::vector<std::vector<Eigen::Index>> groups(num_classes_);
    for (std::size_t i = 0; i < classes.size(); ++i) groups[classes[i]].push_back(static_cast<Eigen::Index>(i));
    for (Label c = 0; c < num_classes_; ++c) {
      if (!groups[c].empty()) fn(c, groups[c]);
    }
  }

  void fill_weights(const Points<Scalar>& z, const Vector<Scalar>& t, Points<Scalar>& w) const {
    // Exponent row i: (2 a z_i.x_n - a^2 |x_n|^2) / (2 sigma^2); |z_i|^2 cancels in the softmax.
    const Points<Scalar> dots = z * x_.transpose();
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      const Scalar a = schedule_.alpha(t(i));
      const Scalar inv = Scalar(1) / (Scalar(2) * square(schedule_.sigma(t(i))));
      auto row = w.row(i);
      row = ((Scalar(2) * a) * dots.row(i) - (a * a) * norms_.transpose()) * inv;
      normalize_row(row);
    }
  }

  void fill_weights_subset(const Points<Scalar>& z, const Vector<Scalar>& t, const std::vector<Eigen::Index>& queries,
                           const std::vector<Eigen::Index>& members, Points<Scalar>& w) const {
    const auto m = static_cast<Eigen::Index>(members.size());
    Points<Scalar> xs(m, x_.cols());
    Vector<Scalar> ns(m);
    for (Eigen::Index k = 0; k < m; ++k) {
      xs.row(k) = x_.row(members[static_cast<std::size_t>(k)]);
      ns(k) = norms_(members[static_cast<std::size_t>(k)]);
    }
    for (auto qi : queries) {
      const Scalar a = schedule_.alpha(t(qi));
      const Scalar inv = Scalar(1) / (Scalar(2) * square(schedule_.sigma(t(qi))));
      RowVector<Scalar> e = ((Scalar(2) * a) * (xs * z.row(qi).transpose()).transpose() - (a * a) * ns.transpose()) * inv;
      normalize_row(e);
      for (Eigen::Index k = 0; k < m; ++k) w(qi, members[static_cast<std::size_t>(k)]) = e(k);
    }
  }

  template <typename Row>
  static void normalize_row(Row&& row) {
    row.array() -= row.maxCoeff();
    // Eigen's vectorized exp clamps its argument instead of underflowing to 0.
    static const Scalar floor = std::log(std::numeric_limits<Scalar>::denorm_min());
    row = (row.array() < floor).select(Scalar(0), row.array().exp()).matrix();
    row /= row.sum();
  }

  static Scalar square(Scalar v) { return v * v; }

  Points<Scalar> x_;
  Vector<Scalar> norms_;
  NoiseSchedule<Scalar> schedule_;
  std::uint32_t num_classes_ = 0;
  std::vector<std::vector<Eigen::Index>> members_;
};

/// Monte-Carlo estimate of the irreducible part C of the DSM objective, i.e.
/// the loss of the kernel optimum itself on the given draws.
template <typename Scalar>
Scalar dsm_loss_at_optimum_residual(const TrainingSet& ts, const NoiseSchedule<Scalar>& schedule,
                                    const DsmDraws<Scalar>& draws, LossWeighting weighting = LossWeighting::Sigma2,
                                    bool conditional = false) {
  if (draws.rows.empty()) throw DataError("at least one Monte-Carlo draw required");
  KernelScoreModel<Scalar> model(ts, schedule, conditional);
  return dsm_terms(model, ts, draws, weighting).mean();
}

template <typename Scalar>
Scalar dsm_loss_at_optimum_residual(const TrainingSet& ts, const NoiseSchedule<Scalar>& schedule,
                                    Eigen::Index mc_samples, std::uint64_t seed,
                                    LossWeighting weighting = LossWeighting::Sigma2,
                                    TimeSampling sampling = TimeSampling::Uniform, bool conditional = false) {
  if (mc_samples < 1) throw DataError("mc_samples must be >= 1");
  const auto draws = draw_dsm(ts, mc_samples, schedule, sampling, seed);
  return dsm_loss_at_optimum_residual(ts, schedule, draws, weighting, conditional);
}

}  // namespace memlab
