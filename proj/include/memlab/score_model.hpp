#pragma once

#include "memlab/schedule.hpp"
#include "memlab/types.hpp"

#include <cstdint>
#include <span>

namespace memlab {

/// Anything that maps noisy points to scores s(z, t [, class]).
///
/// Implemented by the closed-form kernel optimum and by the trainable
/// network; samplers and the DSM objective only talk to this interface.
template <typename Scalar>
class ScoreModel {
 public:
  virtual ~ScoreModel() = default;

  virtual Eigen::Index dim() const = 0;
  virtual const NoiseSchedule<Scalar>& schedule() const = 0;
  /// 0 for unconditional models.
  virtual std::uint32_t num_classes() const = 0;

  /// Batched scores; row i is evaluated at time t(i) and, for conditional
  /// models, class classes[i]. `classes` is empty for unconditional use.
  virtual Points<Scalar> score(const Points<Scalar>& z, const Vector<Scalar>& t,
                               std::span<const Label> classes) const = 0;

  Points<Scalar> score(const Points<Scalar>& z, Scalar t, std::span<const Label> classes = {}) const {
    return score(z, Vector<Scalar>::Constant(z.rows(), t), classes);
  }

  bool conditional() const { return num_classes() > 0; }
};

}  // namespace memlab
