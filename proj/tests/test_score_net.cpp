#include "grad_check.hpp"
#include "memlab/score_net.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

using namespace memlab;
using memlab::testing::random_params;

namespace {

NetConfig small_config(std::uint32_t classes = 0, Preconditioning pre = Preconditioning::Edm,
                       ClassInput class_input = ClassInput::Add) {
  NetConfig c;
  c.class_input = class_input;
  c.width = 12;
  c.depth = 2;
  c.embedding_dim = 8;
  c.num_classes = classes;
  c.preconditioning = pre;
  c.init_seed = 42;
  return c;
}

// Element-by-element forward pass written against the documented layout.
std::vector<double> scalar_forward(const ScoreNet<double>& net, const Vector<double>& p, const std::vector<double>& z,
                                   double t, std::optional<Label> y) {
  const auto& cfg = net.config();
  const auto& lay = net.layout();
  const auto& sched = net.schedule();
  const double a = sched.alpha(t);
  const double sg = sched.sigma(t);
  double in_scale = 1.0;
  double kz = 0.0;
  double kf = 1.0;
  double label = t;
  if (cfg.preconditioning == Preconditioning::Edm) {
    const double st = sg / a;
    const double sd = cfg.sigma_data;
    in_scale = 1.0 / (a * std::sqrt(st * st + sd * sd));
    kz = -1.0 / (a * a * (st * st + sd * sd));
    kf = sd / (sg * std::sqrt(st * st + sd * sd));
    label = std::log(st) / 4.0;
  }
  std::vector<double> h;
  for (double v : z) h.push_back(in_scale * v);
  const Eigen::Index half = cfg.embedding_dim / 2;
  const bool concat = cfg.class_input == ClassInput::Concat;
  auto class_entry = [&](Eigen::Index j) {
    return p(lay.class_embedding.offset + static_cast<Eigen::Index>(*y) * cfg.embedding_dim + j);
  };
  for (Eigen::Index k = 0; k < half; ++k) {
    const double w = std::pow(10000.0, -static_cast<double>(k) / static_cast<double>(half));
    double s = std::sin(label * w);
    double c = std::cos(label * w);
    if (y && !concat) {
      s += class_entry(2 * k);
      c += class_entry(2 * k + 1);
    }
    h.push_back(s);
    h.push_back(c);
  }
  if (y && concat)
    for (Eigen::Index j = 0; j < cfg.embedding_dim; ++j) h.push_back(class_entry(j));
  for (std::size_t l = 0; l < lay.weights.size(); ++l) {
    const auto& W = lay.weights[l];
    const auto& B = lay.biases[l];
    std::vector<double> next(static_cast<std::size_t>(W.rows));
    for (Eigen::Index o = 0; o < W.rows; ++o) {
      double acc = p(B.offset + o);
      for (Eigen::Index i = 0; i < W.cols; ++i) acc += p(W.offset + o * W.cols + i) * h[static_cast<std::size_t>(i)];
      const bool hidden = l + 1 < lay.weights.size();
      next[static_cast<std::size_t>(o)] = hidden ? acc / (1.0 + std::exp(-acc)) : acc;
    }
    h = std::move(next);
  }
  std::vector<double> out;
  for (std::size_t j = 0; j < z.size(); ++j) out.push_back(kz * z[j] + kf * h[j]);
  return out;
}

}  // namespace

TEST(ScoreNet, PositionalEmbeddingAtZero) {
  const ScoreNet<double> net(small_config(0, Preconditioning::None), NoiseSchedule<double>::edm());
  const auto e = net.embed_time(0.0);
  for (Eigen::Index k = 0; k < e.size(); ++k) EXPECT_DOUBLE_EQ(e(k), k % 2 ? 1.0 : 0.0);
}

TEST(ScoreNet, FourierEmbeddingIsFrozenAndBounded) {
  auto cfg = small_config();
  cfg.time_embedding = TimeEmbedding::Fourier;
  const ScoreNet<double> a(cfg, NoiseSchedule<double>::edm());
  const ScoreNet<double> b(cfg, NoiseSchedule<double>::edm());
  for (double t : {0.0, 0.3, -1.2, 4.0}) {
    EXPECT_TRUE(a.embed_time(t) == b.embed_time(t));
    EXPECT_LE(a.embed_time(t).cwiseAbs().maxCoeff(), 1.0);
  }
}

TEST(ScoreNet, ZeroHeadGivesZeroOutput) {
  const ScoreNet<double> net(small_config(0, Preconditioning::None), NoiseSchedule<double>::edm());
  const auto p = net.init_params();
  Points<double> z(3, 2);
  z << 1, 2, -3, 0.5, 100, -7;
  Vector<double> t(3);
  t << 0.01, 1.0, 79.0;
  EXPECT_EQ(net.forward(p, z, t, {}).cwiseAbs().maxCoeff(), 0.0);
}

TEST(ScoreNet, InitIsDeterministic) {
  const ScoreNet<double> a(small_config(), NoiseSchedule<double>::edm());
  const ScoreNet<double> b(small_config(), NoiseSchedule<double>::edm());
  EXPECT_TRUE(a.init_params() == b.init_params());
}

TEST(ScoreNet, ForwardMatchesScalarOracle) {
  for (auto pre : {Preconditioning::None, Preconditioning::Edm}) {
    for (auto [classes, mode] : {std::pair{0u, ClassInput::Add}, std::pair{4u, ClassInput::Add},
                                 std::pair{4u, ClassInput::Concat}}) {
      const ScoreNet<double> net(small_config(classes, pre, mode), NoiseSchedule<double>::vp());
      const auto p = random_params(net, 5);
      std::mt19937_64 rng(1);
      std::normal_distribution<double> normal;
      std::uniform_real_distribution<double> unit(0.01, 1.0);
      const Eigen::Index b = 5;
      Points<double> z(b, 2);
      Vector<double> t(b);
      std::vector<Label> y;
      for (Eigen::Index i = 0; i < b; ++i) {
        z(i, 0) = normal(rng);
        z(i, 1) = normal(rng);
        t(i) = unit(rng);
        if (classes) y.push_back(static_cast<Label>(i % classes));
      }
      const auto out = net.forward(p, z, t, y);
      for (Eigen::Index i = 0; i < b; ++i) {
        std::optional<Label> yi;
        if (classes) yi = y[static_cast<std::size_t>(i)];
        const auto ref = scalar_forward(net, p, {z(i, 0), z(i, 1)}, t(i), yi);
        EXPECT_NEAR(out(i, 0), ref[0], 1e-6 * std::max(1.0, std::abs(ref[0])));
        EXPECT_NEAR(out(i, 1), ref[1], 1e-6 * std::max(1.0, std::abs(ref[1])));
      }
    }
  }
}

TEST(ScoreNet, BatchEqualsRowByRow) {
  const ScoreNet<double> net(small_config(3), NoiseSchedule<double>::edm());
  const auto p = random_params(net, 8);
  Points<double> z(4, 2);
  z << 0.1, 0.2, -1, 1, 3, 4, 0, 0;
  Vector<double> t(4);
  t << 0.01, 0.5, 2.0, 60.0;
  const std::vector<Label> y{0, 2, 1, 0};
  const auto batch = net.forward(p, z, t, y);
  for (Eigen::Index i = 0; i < 4; ++i) {
    const Points<double> zi = z.row(i);
    const Vector<double> ti = t.segment(i, 1);
    const std::vector<Label> yi{y[static_cast<std::size_t>(i)]};
    EXPECT_LT((net.forward(p, zi, ti, yi).row(0) - batch.row(i)).norm(), 1e-12);
  }
}

TEST(ScoreNet, LastLayerGradientOfZeroHeadNetwork) {
  // With a zero head and "none" preconditioning the output is b_head = 0 and
  // dL/dW_head = (s - target)^T h for L = 0.5 * mean ||s - target||^2.
  const ScoreNet<double> net(small_config(0, Preconditioning::None), NoiseSchedule<double>::edm());
  const auto p = net.init_params();
  Points<double> z(3, 2);
  z << 1, 0, 0, 1, -1, -1;
  Vector<double> t(3);
  t << 0.5, 1.0, 2.0;
  Points<double> target(3, 2);
  target << 1, 2, 3, 4, 5, 6;
  ScoreNet<double>::Cache cache;
  net.forward(p, z, t, {}, &cache);
  auto [loss, grad] = net.value_and_gradient(p, z, t, {}, [&](const Points<double>& s) {
    const Points<double> r = s - target;
    return std::pair<double, Points<double>>{0.5 * r.squaredNorm() / 3.0, r / 3.0};
  });
  EXPECT_NEAR(loss, 0.5 * target.squaredNorm() / 3.0, 1e-12);
  const auto& head = net.layout().weights.back();
  const Points<double> expected = (-target / 3.0).transpose() * cache.post.back();
  const auto got = ScoreNet<double>::block(grad, head);
  EXPECT_LT((got - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ScoreNet, BatchGradientIsMeanOfPerSampleGradients) {
  const ScoreNet<double> net(small_config(2), NoiseSchedule<double>::edm());
  const auto p = random_params(net, 3);
  Points<double> x(4, 2);
  x << 0, 1, 1, 0, -1, 2, 0.5, 0.5;
  const std::vector<Label> y{0, 1, 1, 0};
  Rng rng = make_rng(1, 1);
  const auto noise = draw_noise<double>(4, 2, net.schedule(), TimeSampling::Uniform, rng);
  const auto full = dsm_minibatch_loss(net, p, x, y, noise, LossWeighting::Sigma2);
  Vector<double> mean = Vector<double>::Zero(p.size());
  for (Eigen::Index i = 0; i < 4; ++i) {
    const NoiseDraws<double> one{noise.t.segment(i, 1), noise.eps.middleRows(i, 1)};
    const Points<double> xi = x.row(i);
    const std::vector<Label> yi{y[static_cast<std::size_t>(i)]};
    mean += dsm_minibatch_loss(net, p, xi, yi, one, LossWeighting::Sigma2).grad / 4.0;
  }
  EXPECT_LT((full.grad - mean).cwiseAbs().maxCoeff(), 1e-10 * std::max(1.0, mean.cwiseAbs().maxCoeff()));
}

TEST(ScoreNet, GradientMatchesFiniteDifferencesAcrossMatrix) {
  for (const auto& cfg : memlab::testing::gradient_test_matrix()) {
    const auto r = memlab::testing::check_dsm_gradient(cfg, 32, cfg.init_seed + 100);
    EXPECT_LT(r.max_rel_error, 1e-4) << "width=" << cfg.width << " depth=" << cfg.depth
                                     << " emb=" << to_string(cfg.time_embedding) << " C=" << cfg.num_classes;
  }
}

TEST(ScoreNet, ShapeAndClassErrors) {
  const ScoreNet<double> net(small_config(2), NoiseSchedule<double>::edm());
  const auto p = net.init_params();
  const Points<double> z = Points<double>::Zero(1, 2);
  const Vector<double> t = Vector<double>::Constant(1, 1.0);
  const std::vector<Label> bad{5};
  EXPECT_THROW(net.forward(p, z, t, bad), DataError);
  EXPECT_THROW(net.forward(p, z, t, {}), DataError);
  EXPECT_THROW(net.forward(p, Points<double>::Zero(1, 3), t, std::vector<Label>{0}), DataError);
  EXPECT_THROW(net.forward(Vector<double>::Zero(3), z, t, std::vector<Label>{0}), DataError);
  NetConfig odd = small_config();
  odd.embedding_dim = 7;
  EXPECT_THROW(odd.validate(), DataError);
}

TEST(ScoreNet, CheckpointRoundTripIsBitExact) {
  const auto cfg = small_config(3);
  const ScoreNet<float> net(cfg, NoiseSchedule<double>::edm());
  Checkpoint ck;
  cfg.write_config(ck.config);
  ck.params = net.init_params();
  ck.ema = ck.params * 0.5f;
  ck.params(0) = 1.0f / 3.0f;
  const auto path = std::filesystem::temp_directory_path() / "memlab_ckpt_test.dmnn";
  save_checkpoint(ck, path);
  const auto back = load_checkpoint(path);
  EXPECT_TRUE(back.params == ck.params);
  EXPECT_TRUE(back.ema == ck.ema);
  EXPECT_EQ(back.config.canonical(), ck.config.canonical());
  EXPECT_EQ(ParamLayout::build(NetConfig::from_config(back.config)).total, net.param_count());
}
