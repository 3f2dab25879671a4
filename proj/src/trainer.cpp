#include "memlab/trainer.hpp"

#include <cstdio>

namespace memlab {

void TrainConfig::validate() const {
  if (epochs < 0) throw DataError("train.epochs must be >= 0");
  if (batch_size < 1) throw DataError("train.batch_size must be >= 1");
  if (!(lr_per_sample >= 0.0)) throw DataError("train.lr_per_sample must be >= 0");
  if (!(weight_decay >= 0.0)) throw DataError("train.weight_decay must be >= 0");
  if (!(ema_rate >= 0.0 && ema_rate < 1.0)) throw DataError("train.ema_rate must lie in [0, 1)");
  if (warmup_epochs < 0) throw DataError("train.warmup_epochs must be >= 0");
  if (repeats < 1) throw DataError("train.repeats must be >= 1");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    throw DataError("Adam betas must lie in [0, 1)");
  }
  if (!(adam_eps > 0.0)) throw DataError("train.adam_eps must be > 0");
}

TrainConfig TrainConfig::from_config(const Config& cfg, const std::string& prefix) {
  const auto p = prefix + ".";
  TrainConfig c;
  c.epochs = cfg.get_int(p + "epochs", c.epochs);
  c.batch_size = cfg.get_int(p + "batch_size", c.batch_size);
  c.lr_per_sample = cfg.get_double(p + "lr_per_sample", c.lr_per_sample);
  if (auto lr = cfg.find(p + "lr")) {
    // Convenience: a base lr is converted with the linear scaling rule.
    c.lr_per_sample = cfg.get_double(p + "lr", 0.0) / static_cast<double>(c.batch_size);
  }
  c.weight_decay = cfg.get_double(p + "weight_decay", c.weight_decay);
  c.ema_rate = cfg.get_double(p + "ema_rate", c.ema_rate);
  c.warmup_epochs = cfg.get_int(p + "warmup_epochs", c.warmup_epochs);
  if (auto v = cfg.find(p + "loss_weighting")) c.loss_weighting = parse_loss_weighting(*v);
  if (auto v = cfg.find(p + "t_sampling")) c.t_sampling = parse_time_sampling(*v);
  c.repeats = cfg.get_int(p + "repeats", c.repeats);
  c.adam_beta1 = cfg.get_double(p + "adam_beta1", c.adam_beta1);
  c.adam_beta2 = cfg.get_double(p + "adam_beta2", c.adam_beta2);
  c.adam_eps = cfg.get_double(p + "adam_eps", c.adam_eps);
  c.checkpoint_every = cfg.get_int(p + "checkpoint_every", c.checkpoint_every);
  c.seed = cfg.get_u64(p + "seed", c.seed);
  c.validate();
  return c;
}

void TrainConfig::write_config(Config& cfg, const std::string& prefix) const {
  const auto p = prefix + ".";
  auto num = [](double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  cfg.set(p + "epochs", std::to_string(epochs));
  cfg.set(p + "batch_size", std::to_string(batch_size));
  cfg.set(p + "lr_per_sample", num(lr_per_sample));
  cfg.set(p + "weight_decay", num(weight_decay));
  cfg.set(p + "ema_rate", num(ema_rate));
  cfg.set(p + "warmup_epochs", std::to_string(warmup_epochs));
  cfg.set(p + "loss_weighting", to_string(loss_weighting));
  cfg.set(p + "t_sampling", to_string(t_sampling));
  cfg.set(p + "repeats", std::to_string(repeats));
  cfg.set(p + "adam_beta1", num(adam_beta1));
  cfg.set(p + "adam_beta2", num(adam_beta2));
  cfg.set(p + "adam_eps", num(adam_eps));
  cfg.set(p + "checkpoint_every", std::to_string(checkpoint_every));
  cfg.set(p + "seed", std::to_string(seed));
}

void write_curve_header(std::ostream& out) { out << "epoch,step,loss,lr,ema_rate,wall_ms\n"; }

void write_curve_row(std::ostream& out, const CurveRow& row, bool with_wall_clock) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%lld,%lld,%.9g,%.9g,%.9g,%.0f\n", static_cast<long long>(row.epoch),
                static_cast<long long>(row.step), row.loss, row.lr, row.ema_rate,
                with_wall_clock ? row.wall_ms : 0.0);
  out << buf;
}

}  // namespace memlab
