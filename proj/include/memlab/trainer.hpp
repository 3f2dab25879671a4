#pragma once

#include "memlab/config.hpp"
#include "memlab/dataset.hpp"
#include "memlab/dsm.hpp"
#include "memlab/random.hpp"
#include "memlab/score_net.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace memlab {

struct TrainConfig {
  std::int64_t epochs = 1000;
  std::int64_t batch_size = 64;
  double lr_per_sample = 2e-4 / 512;  // effective lr = lr_per_sample * batch_size
  double weight_decay = 0.0;
  double ema_rate = 0.99929;
  std::int64_t warmup_epochs = 200;
  LossWeighting loss_weighting = LossWeighting::Sigma2;
  TimeSampling t_sampling = TimeSampling::Uniform;
  std::int64_t repeats = 1;           // passes over the data per epoch
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::int64_t checkpoint_every = 0;  // 0: max(1, epochs / 50)
  std::uint64_t seed = 0;

  void validate() const;
  static TrainConfig from_config(const Config& cfg, const std::string& prefix = "train");
  void write_config(Config& cfg, const std::string& prefix = "train") const;

  std::int64_t checkpoint_cadence() const { return checkpoint_every > 0 ? checkpoint_every : std::max<std::int64_t>(1, epochs / 50); }
  /// Linear ramp from 0 to 1 over warmup_epochs, evaluated per epoch (0-based).
  double warmup_factor(std::int64_t epoch) const {
    if (warmup_epochs <= 0) return 1.0;
    return std::min(1.0, static_cast<double>(epoch + 1) / static_cast<double>(warmup_epochs));
  }
  double effective_lr(std::int64_t epoch) const { return lr_per_sample * static_cast<double>(batch_size) * warmup_factor(epoch); }
  double ema_rate_at(std::int64_t epoch) const { return ema_rate * warmup_factor(epoch); }
};

template <typename Scalar>
struct TrainState {
  Vector<Scalar> params;
  Vector<Scalar> ema;
  Vector<Scalar> m;
  Vector<Scalar> v;
  std::int64_t step = 0;
  std::int64_t epoch = 0;  // completed epochs
  Rng rng;
};

struct CurveRow {
  std::int64_t epoch = 0;
  std::int64_t step = 0;
  double loss = 0.0;
  double lr = 0.0;
  double ema_rate = 0.0;
  double wall_ms = 0.0;
};

void write_curve_header(std::ostream& out);
void write_curve_row(std::ostream& out, const CurveRow& row, bool with_wall_clock = true);

template <typename Scalar>
struct MinibatchLoss {
  Scalar loss;
  Vector<Scalar> grad;
};

/// Mean over the batch of lambda(t) * 0.5 * ||s_theta(alpha x + sigma eps, t, y) + eps / sigma||^2.
template <typename Scalar>
MinibatchLoss<Scalar> dsm_minibatch_loss(const ScoreNet<Scalar>& net, const Vector<Scalar>& params,
                                         const Points<Scalar>& x, std::span<const Label> classes,
                                         const NoiseDraws<double>& noise, LossWeighting weighting) {
  const auto& sched = net.schedule();
  const Eigen::Index b = x.rows();
  if (b < 1) throw DataError("empty minibatch");
  Points<Scalar> z(b, x.cols());
  Vector<Scalar> sig(b), lam(b);
  for (Eigen::Index i = 0; i < b; ++i) {
    const double t = noise.t(i);
    const double s = sched.sigma(t);
    sig(i) = Scalar(s);
    lam(i) = Scalar(loss_weight(weighting, s));
    z.row(i) = Scalar(sched.alpha(t)) * x.row(i) + Scalar(s) * noise.eps.row(i).template cast<Scalar>();
  }
  const Scalar inv_b = Scalar(1) / Scalar(b);
  auto loss_fn = [&](const Points<Scalar>& s) {
    Points<Scalar> resid(b, x.cols());
    for (Eigen::Index i = 0; i < b; ++i) resid.row(i) = s.row(i) + noise.eps.row(i).template cast<Scalar>() / sig(i);
    const Vector<Scalar> sq = resid.rowwise().squaredNorm();
    const Scalar loss = Scalar(0.5) * lam.dot(sq) * inv_b;
    Points<Scalar> g = (lam * inv_b).asDiagonal() * resid;
    return std::pair<Scalar, Points<Scalar>>{loss, std::move(g)};
  };
  try {
    auto [loss, grad] = net.value_and_gradient(params, z, noise.t, classes, loss_fn);
    return {loss, std::move(grad)};
  } catch (const NumericalError& e) {
    const auto worst = static_cast<Eigen::Index>(std::min_element(noise.t.data(), noise.t.data() + b) - noise.t.data());
    throw NumericalError(std::string(e.what()) + " (batch min t=" + std::to_string(noise.t(worst)) +
                         ", sigma_t=" + std::to_string(sched.sigma(noise.t(worst))) + ")");
  }
}

template <typename Scalar>
struct TrainResult {
  TrainState<Scalar> state;
  std::vector<CurveRow> curve;
  bool diverged = false;
  std::string message;
};

/// Adam with decoupled weight decay, EMA, and epoch-wise linear warmup of both
/// the learning rate and the EMA rate.
template <typename Scalar>
class Trainer {
 public:
  using CheckpointFn = std::function<void(const TrainState<Scalar>&)>;
  using EpochFn = std::function<void(const CurveRow&)>;
  using StopFn = std::function<bool(const TrainState<Scalar>&)>;

  Trainer(const ScoreNet<Scalar>& net, const TrainingSet& ts, TrainConfig cfg)
      : net_(net), ts_(ts), cfg_(std::move(cfg)), x_(ts.data().template cast<Scalar>()) {
    cfg_.validate();
    if (ts.dim() != net.config().data_dim) throw DataError("network dimension does not match dataset");
    if (net.config().num_classes > 0) {
      if (!ts.labeled()) throw DataError("conditional network requires a labeled dataset");
      if (ts.num_classes() > net.config().num_classes) throw DataError("dataset has more classes than the network");
    }
  }

  const TrainConfig& config() const { return cfg_; }

  TrainState<Scalar> init_state() const {
    TrainState<Scalar> s;
    s.params = net_.init_params();
    s.ema = s.params;
    s.m = Vector<Scalar>::Zero(s.params.size());
    s.v = Vector<Scalar>::Zero(s.params.size());
    s.rng = make_rng(cfg_.seed, 501);
    return s;
  }

  /// One optimizer step at learning rate `lr` and EMA rate `beta`.
  void apply_update(TrainState<Scalar>& s, const Vector<Scalar>& grad, double lr, double beta) const {
    ++s.step;
    const double b1 = cfg_.adam_beta1;
    const double b2 = cfg_.adam_beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(s.step));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(s.step));
    s.m = Scalar(b1) * s.m + Scalar(1.0 - b1) * grad;
    s.v = Scalar(b2) * s.v + Scalar(1.0 - b2) * grad.cwiseAbs2();
    if (lr != 0.0) {
      const Vector<Scalar> dir = (s.m / Scalar(c1)).array() / ((s.v / Scalar(c2)).array().sqrt() + Scalar(cfg_.adam_eps));
      s.params -= Scalar(lr) * dir;
      if (cfg_.weight_decay != 0.0) s.params -= Scalar(lr * cfg_.weight_decay) * s.params;
    }
    s.ema = Scalar(beta) * s.ema + Scalar(1.0 - beta) * s.params;
  }

  /// Runs one epoch; returns the mean minibatch loss.
  double run_epoch(TrainState<Scalar>& s) const {
    const Eigen::Index n = ts_.size();
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n * cfg_.repeats));
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<Eigen::Index>(i % static_cast<std::size_t>(n));
    std::shuffle(order.begin(), order.end(), s.rng);
    const double lr = cfg_.effective_lr(s.epoch);
    const double beta = cfg_.ema_rate_at(s.epoch);
    const auto total = static_cast<Eigen::Index>(order.size());
    double loss_sum = 0.0;
    int batches = 0;
    const bool conditional = net_.config().num_classes > 0;
    for (Eigen::Index start = 0; start < total; start += cfg_.batch_size) {
      const Eigen::Index m = std::min<Eigen::Index>(cfg_.batch_size, total - start);
      Points<Scalar> xb(m, x_.cols());
      std::vector<Label> yb;
      for (Eigen::Index i = 0; i < m; ++i) {
        const auto r = order[static_cast<std::size_t>(start + i)];
        xb.row(i) = x_.row(r);
        if (conditional) yb.push_back(ts_.labels()[static_cast<std::size_t>(r)]);
      }
      const auto noise = draw_noise<double>(m, x_.cols(), net_.schedule(), cfg_.t_sampling, s.rng);
      auto [loss, grad] = dsm_minibatch_loss(net_, s.params, xb, yb, noise, cfg_.loss_weighting);
      apply_update(s, grad, lr, beta);
      loss_sum += static_cast<double>(loss);
      ++batches;
    }
    ++s.epoch;
    return loss_sum / batches;
  }

  /// Full run. `on_checkpoint` fires every checkpoint_cadence() epochs and
  /// after the final epoch; `stop` is asked after each checkpoint and ends
  /// the run early when it returns true.
  TrainResult<Scalar> train(const CheckpointFn& on_checkpoint = {}, const EpochFn& on_epoch = {},
                            const StopFn& stop = {}) const {
    return train_from(init_state(), on_checkpoint, on_epoch, stop);
  }

  TrainResult<Scalar> train_from(TrainState<Scalar> state, const CheckpointFn& on_checkpoint = {},
                                 const EpochFn& on_epoch = {}, const StopFn& stop = {}) const {
    TrainResult<Scalar> result;
    TrainState<Scalar> last_good = state;
    const auto started = std::chrono::steady_clock::now();
    const auto cadence = cfg_.checkpoint_cadence();
    while (state.epoch < cfg_.epochs) {
      const auto epoch = state.epoch;
      double loss = 0.0;
      try {
        loss = run_epoch(state);
      } catch (const NumericalError& e) {
        result.diverged = true;
        result.message = "epoch " + std::to_string(epoch) + ": " + e.what();
        result.state = std::move(last_good);
        return result;
      }
      CurveRow row{epoch, state.step, loss, cfg_.effective_lr(epoch), cfg_.ema_rate_at(epoch),
                   std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count()};
      result.curve.push_back(row);
      if (on_epoch) on_epoch(row);
      if (state.epoch % cadence == 0 || state.epoch == cfg_.epochs) {
        last_good = state;
        if (on_checkpoint) on_checkpoint(state);
        if (stop && stop(state)) break;
      }
    }
    result.state = std::move(state);
    return result;
  }

 private:
  const ScoreNet<Scalar>& net_;
  const TrainingSet& ts_;
  TrainConfig cfg_;
  Points<Scalar> x_;
};

}  // namespace memlab
