#include "memlab/kernel_score.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

using namespace memlab;
using Sched = NoiseSchedule<double>;

namespace {

TrainingSet points(std::initializer_list<std::initializer_list<double>> rows,
                   std::optional<std::vector<Label>> labels = std::nullopt, std::uint32_t classes = 0) {
  Points<double> x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
  Eigen::Index i = 0;
  for (const auto& r : rows) {
    Eigen::Index j = 0;
    for (double v : r) x(i, j++) = v;
    ++i;
  }
  return TrainingSet(x, std::move(labels), classes);
}

TrainingSet random_set(Eigen::Index n, Eigen::Index d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  Points<double> x(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < d; ++j) x(i, j) = normal(rng);
  return TrainingSet(x);
}

// Unstabilized textbook evaluation, only valid when no exponent underflows.
Vector<double> naive_weights(const Points<double>& x, const Vector<double>& z, double a, double s) {
  Vector<double> w(x.rows());
  for (Eigen::Index n = 0; n < x.rows(); ++n) {
    double d2 = 0.0;
    for (Eigen::Index j = 0; j < x.cols(); ++j) d2 += (a * x(n, j) - z(j)) * (a * x(n, j) - z(j));
    w(n) = std::exp(-d2 / (2 * s * s));
  }
  return w / w.sum();
}

Vector<double> vec(std::initializer_list<double> v) {
  Vector<double> out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double e : v) out(i++) = e;
  return out;
}

}  // namespace

// At t = 1 the EDM schedule has alpha = 1, sigma = 1.
TEST(KernelScore, TwoPointWeightsMatchNaiveFormula) {
  const KernelScoreModel<double> m(points({{0, 0}, {2, 0}}), Sched::edm());
  const auto w = m.weights(vec({0.5, 0}), 1.0);
  const double e1 = std::exp(-0.125);
  const double e2 = std::exp(-1.125);
  EXPECT_NEAR(w(0), e1 / (e1 + e2), 1e-12);
  EXPECT_NEAR(w(1), e2 / (e1 + e2), 1e-12);
  EXPECT_NEAR(w(0), 0.73106, 1e-5);
  EXPECT_NEAR(w(1), 0.26894, 1e-5);
}

TEST(KernelScore, TwoPointScoreAndDenoiser) {
  const KernelScoreModel<double> m(points({{0, 0}, {2, 0}}), Sched::edm());
  Points<double> z(1, 2);
  z << 0.5, 0;
  const auto w = naive_weights(m.points(), z.row(0).transpose(), 1.0, 1.0);
  const double oracle = w(0) * (0 - 0.5) + w(1) * (2 - 0.5);
  const auto s = m.score(z, 1.0);
  EXPECT_NEAR(s(0, 0), oracle, 1e-12);
  EXPECT_NEAR(s(0, 0), 0.03788, 1e-5);
  EXPECT_NEAR(s(0, 1), 0.0, 1e-15);
  const auto d = m.denoise(z, 1.0);
  EXPECT_NEAR(d(0, 0), 0.53788, 1e-5);
  EXPECT_NEAR(d(0, 0), s(0, 0) + z(0, 0), 1e-12);
}

TEST(KernelScore, SinglePointScore) {
  const KernelScoreModel<double> m(points({{1, 0}}), Sched::edm());
  const auto s = m.score(Points<double>::Zero(1, 2), 1.0);
  EXPECT_DOUBLE_EQ(s(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(s(0, 1), 0.0);
}

TEST(KernelScore, SymmetricPairsCancel) {
  const KernelScoreModel<double> m(points({{1, 0}, {-1, 0}}), Sched::edm());
  const auto s = m.score(Points<double>::Zero(1, 2), 1.0);
  EXPECT_NEAR(s.norm(), 0.0, 1e-15);
  const KernelScoreModel<double> m2(points({{0, 1}, {0, -1}}), Sched::edm());
  const auto w = m2.weights(vec({0.3, 0}), 1e-3);
  EXPECT_DOUBLE_EQ(w(0), 0.5);
  EXPECT_DOUBLE_EQ(w(1), 0.5);
}

TEST(KernelScore, SmallSigmaIsOneHotWithoutOverflow) {
  const KernelScoreModel<double> m(points({{0, 0}, {1, 0}, {5, 5}}), Sched::edm());
  const auto w = m.weights(vec({0.9, 0.1}), 1e-3);  // exponent gap near -4e5
  ASSERT_TRUE(w.allFinite());
  EXPECT_DOUBLE_EQ(w(1), 1.0);
  EXPECT_DOUBLE_EQ(w(0), 0.0);
}

TEST(KernelScore, SinglePointDenoisesToItself) {
  const auto ts = points({{0.25, -1.5, 3.0}});
  const KernelScoreModel<double> m(ts, Sched::vp());
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal;
  for (int k = 0; k < 20; ++k) {
    Points<double> z(1, 3);
    for (int j = 0; j < 3; ++j) z(0, j) = 10 * normal(rng);
    const double t = 0.01 + 0.049 * k;
    EXPECT_LT((m.denoise(z, t).row(0) - ts.data().row(0)).norm(), 1e-12);
  }
}

TEST(KernelScore, HugeSigmaDenoisesToMean) {
  const auto ts = random_set(20, 3, 5);
  const KernelScoreModel<double> m(ts, Sched::edm(1e-3, 2e6));
  const auto d = m.denoise(Points<double>::Constant(1, 3, 0.4), 1e6);
  EXPECT_LT((d.row(0) - ts.data().colwise().mean()).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(KernelScore, ParameterizationIdentities) {
  const auto ts = random_set(30, 4, 9);
  for (const auto& sched : {Sched::edm(), Sched::vp(), Sched::ve()}) {
    const KernelScoreModel<double> m(ts, sched);
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> unit;
    std::normal_distribution<double> normal;
    const Eigen::Index b = 200;
    Points<double> z(b, 4);
    Vector<double> t(b);
    for (Eigen::Index i = 0; i < b; ++i) {
      t(i) = sched.t_min() + unit(rng) * (sched.t_max() - sched.t_min());
      for (int j = 0; j < 4; ++j) z(i, j) = sched.alpha(t(i)) * normal(rng) + sched.sigma(t(i)) * normal(rng);
    }
    const auto s = m.score(z, t, {});
    const auto e = m.noise_prediction(z, t);
    const auto d = m.denoise(z, t);
    for (Eigen::Index i = 0; i < b; ++i) {
      const double a = sched.alpha(t(i));
      const double sg = sched.sigma(t(i));
      const RowVector<double> e_id = -sg * s.row(i);
      const RowVector<double> d_id = (sg * sg * s.row(i) + z.row(i)) / a;
      EXPECT_LE((e.row(i) - e_id).norm(), 1e-10 * std::max(1.0, e_id.norm()));
      EXPECT_LE((d.row(i) - d_id).norm(), 1e-10 * std::max(1.0, d_id.norm()));
    }
  }
}

TEST(KernelScore, StabilizedMatchesNaive) {
  const auto ts = random_set(6, 2, 21);
  const KernelScoreModel<double> m(ts, Sched::vp());
  std::mt19937_64 rng(2);
  std::normal_distribution<double> normal;
  for (int k = 0; k < 50; ++k) {
    const double t = 0.05 + 0.019 * k;
    const Vector<double> z = vec({normal(rng), normal(rng)});
    const auto stable = m.weights(z, t);
    const auto naive = naive_weights(ts.data(), z, m.schedule().alpha(t), m.schedule().sigma(t));
    EXPECT_NEAR(stable.sum(), 1.0, 1e-12);
    for (Eigen::Index n = 0; n < 6; ++n) EXPECT_LE(std::abs(stable(n) - naive(n)), 1e-8 * std::max(naive(n), 1e-300) + 1e-300);
  }
}

TEST(KernelScore, DenoiserStaysInBoundingBox) {
  const auto ts = random_set(16, 2, 33);
  const KernelScoreModel<double> m(ts, Sched::edm());
  const auto lo = ts.data().colwise().minCoeff();
  const auto hi = ts.data().colwise().maxCoeff();
  std::mt19937_64 rng(4);
  std::normal_distribution<double> normal;
  for (int k = 0; k < 100; ++k) {
    Points<double> z(1, 2);
    z << 5 * normal(rng), 5 * normal(rng);
    const auto d = m.denoise(z, 0.01 + 0.3 * k);
    EXPECT_TRUE((d.row(0).array() >= lo.array() - 1e-12).all() && (d.row(0).array() <= hi.array() + 1e-12).all());
  }
}

TEST(KernelScore, UniqueLabelsCollapseToSingleRow) {
  auto base = random_set(10, 3, 8);
  const auto ts = relabel(base, LabelingMode::Unique, 0, 0);
  const KernelScoreModel<double> m(ts, Sched::edm(), true);
  std::mt19937_64 rng(6);
  std::normal_distribution<double> normal;
  for (Label c = 0; c < 10; ++c) {
    Points<double> z(1, 3);
    z << 30 * normal(rng), normal(rng), normal(rng);
    const std::vector<Label> cls{c};
    const auto d = m.denoise(z, 0.5 + c, cls);
    EXPECT_TRUE(d.row(0) == ts.data().row(c));
  }
}

TEST(KernelScore, ConditionalUsesOnlyClassMembers) {
  const auto ts = points({{0, 0}, {1, 0}, {10, 10}, {11, 10}}, std::vector<Label>{0, 0, 1, 1}, 2);
  const KernelScoreModel<double> m(ts, Sched::edm(), true);
  const auto w = m.weights(vec({10.5, 10}), 50.0, Label{0});
  EXPECT_EQ(w(2), 0.0);
  EXPECT_EQ(w(3), 0.0);
  EXPECT_NEAR(w(0) + w(1), 1.0, 1e-12);
}

TEST(KernelScore, ConditionalSingleClassEqualsUnconditional) {
  const auto base = random_set(12, 2, 40);
  const auto ts = relabel(base, LabelingMode::Random, 1, 3);
  const KernelScoreModel<double> cond(ts, Sched::edm(), true);
  const KernelScoreModel<double> uncond(ts, Sched::edm());
  Points<double> z(3, 2);
  z << 0.1, 0.2, -1, 3, 2, 2;
  const std::vector<Label> cls(3, 0);
  EXPECT_LT((cond.score(z, 0.7, cls) - uncond.score(z, 0.7)).norm(), 1e-12);
}

TEST(KernelScore, Errors) {
  const auto ts = points({{0, 0}, {1, 0}}, std::vector<Label>{0, 0}, 2);
  const KernelScoreModel<double> m(ts, Sched::edm(), true);
  EXPECT_THROW(m.weights(vec({0, 0}), 1.0, Label{1}), DataError);  // empty class
  EXPECT_THROW(m.weights(vec({0, 0}), 1.0, Label{2}), DataError);
  EXPECT_THROW(m.weights(vec({0, 0}), 0.0, Label{0}), NumericalError);
  const KernelScoreModel<double> u(points({{0, 0}}), Sched::edm());
  EXPECT_THROW(u.weights(vec({0, 0}), 1.0, Label{0}), DataError);
}

TEST(KernelScore, SinglePointResidualIsExactlyZero) {
  const auto ts = points({{0.5, -0.25}});
  const auto sched = Sched::edm();
  const auto draws = draw_dsm(ts, 500, sched, TimeSampling::Uniform, 1);
  const KernelScoreModel<double> m(ts, sched);
  const auto terms = dsm_terms(m, ts, draws, LossWeighting::Sigma2);
  EXPECT_LT(terms.maxCoeff(), 1e-20);
}

TEST(KernelScore, SeparatedPairResidualVanishesAtSmallSigma) {
  const auto ts = points({{-1, 0}, {1, 0}});
  const auto sched = Sched::edm(1e-3, 0.05);
  const double c = dsm_loss_at_optimum_residual(ts, sched, 4000, 2, LossWeighting::Uniform);
  EXPECT_LT(c, 1e-6);
}

TEST(KernelScore, ResidualIsPermutationInvariant) {
  const auto ts = random_set(8, 2, 12);
  Points<double> rev = ts.data().colwise().reverse();
  const TrainingSet flipped(rev);
  const auto sched = Sched::edm();
  const auto draws = draw_dsm(ts, 3000, sched, TimeSampling::Uniform, 4);
  auto remapped = draws;
  for (auto& r : remapped.rows) r = ts.size() - 1 - r;
  const double a = dsm_loss_at_optimum_residual(ts, sched, draws);
  const double b = dsm_loss_at_optimum_residual(flipped, sched, remapped);
  EXPECT_NEAR(a, b, 1e-12 * std::abs(a));
}
