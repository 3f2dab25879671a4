#pragma once

#include "memlab/config.hpp"
#include "memlab/types.hpp"

#include <cmath>
#include <cstdio>
#include <string>

namespace memlab {

enum class ScheduleKind { VP, VE, EDM };

inline ScheduleKind parse_schedule_kind(const std::string& text) {
  if (text == "vp" || text == "VP") return ScheduleKind::VP;
  if (text == "ve" || text == "VE") return ScheduleKind::VE;
  if (text == "edm" || text == "EDM") return ScheduleKind::EDM;
  throw DataError("unknown schedule kind: " + text);
}

inline std::string to_string(ScheduleKind kind) {
  switch (kind) {
    case ScheduleKind::VP: return "vp";
    case ScheduleKind::VE: return "ve";
    case ScheduleKind::EDM: return "edm";
  }
  return "?";
}

template <typename Scalar>
struct DriftDiffusion {
  Scalar f;   // d log(alpha_t) / dt
  Scalar g2;  // d sigma_t^2 / dt - 2 f sigma_t^2
};

/// Forward-process coefficients: q_t(z | x) = N(alpha_t x, sigma_t^2 I).
///
///   EDM: alpha_t = 1, sigma_t = t.
///   VP:  alpha_t = exp(-t^2 (beta_max - beta_min) / 4 - t beta_min / 2),
///        sigma_t = sqrt(1 - alpha_t^2).
///   VE:  alpha_t = 1, sigma_t^2 = sigma_min^2 ((sigma_max / sigma_min)^(2t/T) - 1),
///        so that sigma_0 = 0.
///
/// Derivatives are analytic; the backward SDE/ODE uses f and g^2 directly.
template <typename Scalar>
class NoiseSchedule {
 public:
  NoiseSchedule() = default;

  static NoiseSchedule edm(Scalar t_min = Scalar(1e-3), Scalar t_max = Scalar(80)) {
    NoiseSchedule s;
    s.kind_ = ScheduleKind::EDM;
    s.t_min_ = t_min;
    s.t_max_ = t_max;
    s.validate();
    return s;
  }

  static NoiseSchedule vp(Scalar beta_min = Scalar(0.1), Scalar beta_max = Scalar(20), Scalar t_min = Scalar(1e-3),
                          Scalar t_max = Scalar(1)) {
    NoiseSchedule s;
    s.kind_ = ScheduleKind::VP;
    s.beta_min_ = beta_min;
    s.beta_max_ = beta_max;
    s.t_min_ = t_min;
    s.t_max_ = t_max;
    s.validate();
    return s;
  }

  static NoiseSchedule ve(Scalar sigma_min = Scalar(0.01), Scalar sigma_max = Scalar(50), Scalar t_min = Scalar(1e-3),
                          Scalar t_max = Scalar(1)) {
    NoiseSchedule s;
    s.kind_ = ScheduleKind::VE;
    s.sigma_min_ = sigma_min;
    s.sigma_max_ = sigma_max;
    s.t_min_ = t_min;
    s.t_max_ = t_max;
    s.validate();
    return s;
  }

  /// Reads `<prefix>.kind`, `.t_min`, `.t_max` and kind-specific keys.
  static NoiseSchedule from_config(const Config& cfg, const std::string& prefix = "schedule") {
    const auto p = prefix + ".";
    const auto kind = parse_schedule_kind(cfg.get_string(p + "kind", "edm"));
    switch (kind) {
      case ScheduleKind::EDM:
        return edm(Scalar(cfg.get_double(p + "t_min", 1e-3)), Scalar(cfg.get_double(p + "t_max", 80.0)));
      case ScheduleKind::VP:
        return vp(Scalar(cfg.get_double(p + "beta_min", 0.1)), Scalar(cfg.get_double(p + "beta_max", 20.0)),
                  Scalar(cfg.get_double(p + "t_min", 1e-3)), Scalar(cfg.get_double(p + "t_max", 1.0)));
      case ScheduleKind::VE:
        return ve(Scalar(cfg.get_double(p + "sigma_min", 0.01)), Scalar(cfg.get_double(p + "sigma_max", 50.0)),
                  Scalar(cfg.get_double(p + "t_min", 1e-3)), Scalar(cfg.get_double(p + "t_max", 1.0)));
    }
    throw DataError("unknown schedule kind");
  }

  void write_config(Config& cfg, const std::string& prefix = "schedule") const {
    const auto p = prefix + ".";
    auto num = [](Scalar v) {
      char buf[64];
      std::snprintf(buf, sizeof(buf), "%.17g", static_cast<double>(v));
      return std::string(buf);
    };
    cfg.set(p + "kind", to_string(kind_));
    cfg.set(p + "t_min", num(t_min_));
    cfg.set(p + "t_max", num(t_max_));
    if (kind_ == ScheduleKind::VP) {
      cfg.set(p + "beta_min", num(beta_min_));
      cfg.set(p + "beta_max", num(beta_max_));
    } else if (kind_ == ScheduleKind::VE) {
      cfg.set(p + "sigma_min", num(sigma_min_));
      cfg.set(p + "sigma_max", num(sigma_max_));
    }
  }

  ScheduleKind kind() const { return kind_; }
  Scalar t_min() const { return t_min_; }
  Scalar t_max() const { return t_max_; }

  Scalar alpha(Scalar t) const {
    check_range(t);
    if (kind_ != ScheduleKind::VP) return Scalar(1);
    return std::exp(log_alpha(t));
  }

  Scalar sigma(Scalar t) const {
    check_range(t);
    switch (kind_) {
      case ScheduleKind::EDM:
        return t;
      case ScheduleKind::VP:
        // 1 - alpha^2 = -expm1(2 log alpha), accurate near t = 0.
        return std::sqrt(-std::expm1(Scalar(2) * log_alpha(t)));
      case ScheduleKind::VE:
        return sigma_min_ * std::sqrt(std::expm1(Scalar(2) * t / t_max_ * std::log(sigma_max_ / sigma_min_)));
    }
    return Scalar(0);
  }

  /// DDPM's cumulative product: z_t = sqrt(abar) x + sqrt(1 - abar) eps.
  Scalar alpha_bar(Scalar t) const {
    const Scalar a = alpha(t);
    return a * a;
  }

  /// d log(alpha_t) / dt.
  Scalar dlog_alpha(Scalar t) const {
    check_range(t);
    if (kind_ != ScheduleKind::VP) return Scalar(0);
    return -Scalar(0.5) * t * (beta_max_ - beta_min_) - Scalar(0.5) * beta_min_;
  }

  /// d sigma_t^2 / dt.
  Scalar dsigma2(Scalar t) const {
    check_range(t);
    switch (kind_) {
      case ScheduleKind::EDM:
        return Scalar(2) * t;
      case ScheduleKind::VP: {
        const Scalar a = alpha(t);
        return -Scalar(2) * a * a * dlog_alpha(t);
      }
      case ScheduleKind::VE: {
        const Scalar r = std::log(sigma_max_ / sigma_min_);
        return sigma_min_ * sigma_min_ * std::exp(Scalar(2) * t / t_max_ * r) * Scalar(2) * r / t_max_;
      }
    }
    return Scalar(0);
  }

  DriftDiffusion<Scalar> drift_diffusion(Scalar t) const {
    if (!(t > Scalar(0))) throw DataError("drift_diffusion requires t in (0, T]");
    const Scalar f = dlog_alpha(t);
    const Scalar s = sigma(t);
    const Scalar g2 = dsigma2(t) - Scalar(2) * f * s * s;
    if (!std::isfinite(f) || !std::isfinite(g2)) {
      throw NumericalError("non-finite drift/diffusion at t=" + std::to_string(static_cast<double>(t)));
    }
    return {f, g2 < Scalar(0) ? Scalar(0) : g2};
  }

 private:
  Scalar log_alpha(Scalar t) const {
    return -Scalar(0.25) * t * t * (beta_max_ - beta_min_) - Scalar(0.5) * t * beta_min_;
  }

  void check_range(Scalar t) const {
    if (!(t >= Scalar(0) && t <= t_max_)) {
      throw DataError("time " + std::to_string(static_cast<double>(t)) + " outside [0, T]");
    }
  }

  void validate() const {
    if (!(t_min_ > Scalar(0) && t_min_ < t_max_)) throw DataError("schedule requires 0 < t_min < t_max");
    if (kind_ == ScheduleKind::VP && !(beta_min_ >= Scalar(0) && beta_max_ >= beta_min_ && beta_max_ > Scalar(0))) {
      throw DataError("VP schedule requires 0 <= beta_min <= beta_max, beta_max > 0");
    }
    if (kind_ == ScheduleKind::VE && !(sigma_min_ > Scalar(0) && sigma_max_ >= sigma_min_)) {
      throw DataError("VE schedule requires 0 < sigma_min <= sigma_max");
    }
  }

  ScheduleKind kind_ = ScheduleKind::EDM;
  Scalar t_min_ = Scalar(1e-3);
  Scalar t_max_ = Scalar(80);
  Scalar beta_min_ = Scalar(0.1);
  Scalar beta_max_ = Scalar(20);
  Scalar sigma_min_ = Scalar(0.01);
  Scalar sigma_max_ = Scalar(50);
};

}  // namespace memlab
