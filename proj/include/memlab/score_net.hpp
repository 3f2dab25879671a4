#pragma once

#include "memlab/config.hpp"
#include "memlab/random.hpp"
#include "memlab/schedule.hpp"
#include "memlab/score_model.hpp"
#include "memlab/types.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace memlab {

enum class TimeEmbedding { Positional, Fourier };
/// How raw network output F becomes a score.
///   none: s = F, network sees (z, embed(t)).
///   edm:  s = (alpha D - z) / sigma^2 with D = c_skip z/alpha + c_out F and the
///         network seeing (c_in z/alpha, embed(log(sigma/alpha) / 4)).
enum class Preconditioning { None, Edm };
/// add: class embedding summed into the time embedding.
/// concat: class embedding appended as e extra input features.
enum class ClassInput { Add, Concat };

TimeEmbedding parse_time_embedding(const std::string& s);
Preconditioning parse_preconditioning(const std::string& s);
ClassInput parse_class_input(const std::string& s);
std::string to_string(TimeEmbedding e);
std::string to_string(Preconditioning p);
std::string to_string(ClassInput c);

struct NetConfig {
  Eigen::Index data_dim = 2;
  Eigen::Index width = 64;
  Eigen::Index depth = 2;
  TimeEmbedding time_embedding = TimeEmbedding::Positional;
  Eigen::Index embedding_dim = 16;
  double fourier_scale = 16.0;
  std::uint32_t num_classes = 0;
  ClassInput class_input = ClassInput::Add;
  Preconditioning preconditioning = Preconditioning::Edm;
  double sigma_data = 0.5;
  std::uint64_t init_seed = 0;

  void validate() const;
  static NetConfig from_config(const Config& cfg, const std::string& prefix = "net");
  void write_config(Config& cfg, const std::string& prefix = "net") const;
  /// Width of the first-layer input: d + e, plus e for concatenated classes.
  Eigen::Index input_dim() const {
    return data_dim + embedding_dim + (num_classes > 0 && class_input == ClassInput::Concat ? embedding_dim : 0);
  }
};

/// Offsets of every parameter block inside the flat parameter vector.
struct ParamLayout {
  struct Block {
    Eigen::Index offset = 0;
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
    Eigen::Index size() const { return rows * cols; }
  };
  Block class_embedding;             // C x e, empty when unconditional
  std::vector<Block> weights;        // depth hidden layers then the head, each out x in
  std::vector<Block> biases;         // out x 1
  Eigen::Index total = 0;

  static ParamLayout build(const NetConfig& cfg);
};

/// Sinusoidal features of a scalar: [sin(v w_0), cos(v w_0), sin(v w_1), ...].
/// Positional: w_k = 10000^(-k / (e/2)). Fourier: w_k = 2 pi B_k with frozen B.
template <typename Scalar>
RowVector<Scalar> sinusoidal_features(Scalar value, const Vector<Scalar>& freqs) {
  RowVector<Scalar> out(2 * freqs.size());
  for (Eigen::Index k = 0; k < freqs.size(); ++k) {
    out(2 * k) = std::sin(value * freqs(k));
    out(2 * k + 1) = std::cos(value * freqs(k));
  }
  return out;
}

/// Small MLP score network on concat(z, embed_time(t) + class_embedding[y]),
/// or concat(z, embed_time(t), class_embedding[y]) with ClassInput::Concat.
template <typename Scalar>
class ScoreNet {
 public:
  using Params = Vector<Scalar>;
  using Mat = Points<Scalar>;

  struct Cache {
    Mat input;                     // B x input_dim()
    std::vector<Mat> pre;          // pre-activations per hidden layer
    std::vector<Mat> post;         // activations per hidden layer
    Vector<Scalar> score_from_z;   // per-row coefficient on z
    Vector<Scalar> score_from_f;   // per-row coefficient on F
    std::vector<Label> classes;
  };

  ScoreNet(NetConfig cfg, NoiseSchedule<double> schedule)
      : cfg_(std::move(cfg)), schedule_(std::move(schedule)), layout_(ParamLayout::build(cfg_)) {
    const Eigen::Index half = cfg_.embedding_dim / 2;
    freqs_.resize(half);
    if (cfg_.time_embedding == TimeEmbedding::Positional) {
      for (Eigen::Index k = 0; k < half; ++k) {
        freqs_(k) = Scalar(std::pow(10000.0, -static_cast<double>(k) / static_cast<double>(half)));
      }
    } else {
      auto rng = make_rng(cfg_.init_seed, 7001);
      std::normal_distribution<double> normal;
      for (Eigen::Index k = 0; k < half; ++k) {
        freqs_(k) = Scalar(2.0 * std::numbers::pi * cfg_.fourier_scale * normal(rng));
      }
    }
  }

  const NetConfig& config() const { return cfg_; }
  const ParamLayout& layout() const { return layout_; }
  const NoiseSchedule<double>& schedule() const { return schedule_; }
  Eigen::Index param_count() const { return layout_.total; }

  /// Fan-in scaled Gaussian weights, zero biases, zero head.
  Params init_params() const {
    Params p = Params::Zero(layout_.total);
    // Separate streams keep add-mode hidden-layer init identical with and without classes.
    auto rng = make_rng(cfg_.init_seed, 7002);
    auto class_rng = make_rng(cfg_.init_seed, 7003);
    std::normal_distribution<double> normal;
    const auto& ce = layout_.class_embedding;
    for (Eigen::Index i = 0; i < ce.size(); ++i) p(ce.offset + i) = Scalar(normal(class_rng));
    for (std::size_t l = 0; l + 1 < layout_.weights.size(); ++l) {
      const auto& w = layout_.weights[l];
      const double scale = 1.0 / std::sqrt(static_cast<double>(w.cols));
      for (Eigen::Index i = 0; i < w.size(); ++i) p(w.offset + i) = Scalar(scale * normal(rng));
    }
    return p;
  }

  RowVector<Scalar> embed_time(Scalar value) const { return sinusoidal_features(value, freqs_); }

  /// Scalar fed to the time embedding for diffusion time t.
  Scalar noise_label(double t) const {
    if (cfg_.preconditioning == Preconditioning::None) return Scalar(t);
    const double s = schedule_.sigma(t) / schedule_.alpha(t);
    return Scalar(std::log(s) / 4.0);
  }

  Mat forward(const Params& params, const Mat& z, const Vector<double>& t, std::span<const Label> classes,
              Cache* cache = nullptr) const {
    check_inputs(params, z, t, classes);
    const Eigen::Index b = z.rows();
    const Eigen::Index d = cfg_.data_dim;
    const Eigen::Index e = cfg_.embedding_dim;
    Cache local;
    Cache& c = cache ? *cache : local;
    c.classes.assign(classes.begin(), classes.end());
    const bool concat = cfg_.num_classes > 0 && cfg_.class_input == ClassInput::Concat;
    c.input.resize(b, cfg_.input_dim());
    c.score_from_z.resize(b);
    c.score_from_f.resize(b);
    for (Eigen::Index i = 0; i < b; ++i) {
      const double ti = t(i);
      double in_scale = 1.0;
      if (cfg_.preconditioning == Preconditioning::Edm) {
        const double a = schedule_.alpha(ti);
        const double sig = schedule_.sigma(ti);
        const double st = sig / a;
        const double sd = cfg_.sigma_data;
        const double norm = std::sqrt(st * st + sd * sd);
        in_scale = 1.0 / (a * norm);
        c.score_from_z(i) = Scalar(-1.0 / (a * a * (st * st + sd * sd)));
        c.score_from_f(i) = Scalar(sd / (sig * norm));
      } else {
        c.score_from_z(i) = Scalar(0);
        c.score_from_f(i) = Scalar(1);
      }
      c.input.row(i).head(d) = Scalar(in_scale) * z.row(i);
      RowVector<Scalar> emb = embed_time(noise_label(ti));
      if (cfg_.num_classes > 0) {
        const auto ce = block(params, layout_.class_embedding).row(classes[static_cast<std::size_t>(i)]);
        if (concat) c.input.row(i).tail(e) = ce;
        else emb += ce;
      }
      c.input.row(i).segment(d, e) = emb;
    }

    c.pre.resize(static_cast<std::size_t>(cfg_.depth));
    c.post.resize(static_cast<std::size_t>(cfg_.depth));
    const Mat* h = &c.input;
    for (Eigen::Index l = 0; l < cfg_.depth; ++l) {
      const auto L = static_cast<std::size_t>(l);
      c.pre[L].noalias() = (*h) * block(params, layout_.weights[L]).transpose();
      c.pre[L].rowwise() += bias(params, layout_.biases[L]);
      c.post[L] = c.pre[L].unaryExpr([](Scalar x) { return silu(x); });
      if (!c.post[L].allFinite()) throw NumericalError("non-finite activation in hidden layer " + std::to_string(l));
      h = &c.post[L];
    }
    const auto H = static_cast<std::size_t>(cfg_.depth);
    Mat f = (*h) * block(params, layout_.weights[H]).transpose();
    f.rowwise() += bias(params, layout_.biases[H]);
    Mat out = c.score_from_f.asDiagonal() * f;
    out.noalias() += c.score_from_z.asDiagonal() * z;
    if (!out.allFinite()) throw NumericalError("non-finite network output");
    return out;
  }

  /// Reverse-mode gradient given dL/d(score) for the batch cached by `forward`.
  Params backward(const Params& params, const Cache& c, const Mat& grad_score) const {
    Params grad = Params::Zero(layout_.total);
    const auto H = static_cast<std::size_t>(cfg_.depth);
    Mat delta = c.score_from_f.asDiagonal() * grad_score;  // dL/dF
    const Mat& last = cfg_.depth > 0 ? c.post[H - 1] : c.input;
    block(grad, layout_.weights[H]).noalias() = delta.transpose() * last;
    bias(grad, layout_.biases[H]) = delta.colwise().sum();
    Mat dh = delta * block(params, layout_.weights[H]);
    for (Eigen::Index l = cfg_.depth - 1; l >= 0; --l) {
      const auto L = static_cast<std::size_t>(l);
      Mat da = dh.cwiseProduct(c.pre[L].unaryExpr([](Scalar x) { return silu_grad(x); }));
      const Mat& below = l > 0 ? c.post[L - 1] : c.input;
      block(grad, layout_.weights[L]).noalias() = da.transpose() * below;
      bias(grad, layout_.biases[L]) = da.colwise().sum();
      dh = da * block(params, layout_.weights[L]);
    }
    if (cfg_.num_classes > 0) {
      auto ce = block(grad, layout_.class_embedding);
      for (std::size_t i = 0; i < c.classes.size(); ++i) {
        // The class features sit in the last e inputs in both modes.
        ce.row(c.classes[i]) += dh.row(static_cast<Eigen::Index>(i)).tail(cfg_.embedding_dim);
      }
    }
    if (!grad.allFinite()) throw NumericalError("non-finite gradient");
    return grad;
  }

  /// Mean-reduced loss and its gradient. `loss_fn(score)` returns the summed
  /// (already batch-averaged) loss and dL/d(score).
  template <typename LossFn>
  std::pair<Scalar, Params> value_and_gradient(const Params& params, const Mat& z, const Vector<double>& t,
                                               std::span<const Label> classes, LossFn&& loss_fn) const {
    Cache cache;
    const Mat s = forward(params, z, t, classes, &cache);
    auto [loss, grad_score] = loss_fn(s);
    if (!std::isfinite(static_cast<double>(loss))) throw NumericalError("non-finite loss");
    return {loss, backward(params, cache, grad_score)};
  }

  static Scalar silu(Scalar x) { return x / (Scalar(1) + std::exp(-x)); }
  static Scalar silu_grad(Scalar x) {
    const Scalar s = Scalar(1) / (Scalar(1) + std::exp(-x));
    return s * (Scalar(1) + x * (Scalar(1) - s));
  }

  static Eigen::Map<Mat> block(Params& p, const ParamLayout::Block& b) {
    return Eigen::Map<Mat>(p.data() + b.offset, b.rows, b.cols);
  }
  static Eigen::Map<const Mat> block(const Params& p, const ParamLayout::Block& b) {
    return Eigen::Map<const Mat>(p.data() + b.offset, b.rows, b.cols);
  }

 private:
  static Eigen::Map<RowVector<Scalar>> bias(Params& p, const ParamLayout::Block& b) {
    return Eigen::Map<RowVector<Scalar>>(p.data() + b.offset, b.rows);
  }
  static Eigen::Map<const RowVector<Scalar>> bias(const Params& p, const ParamLayout::Block& b) {
    return Eigen::Map<const RowVector<Scalar>>(p.data() + b.offset, b.rows);
  }

  void check_inputs(const Params& params, const Mat& z, const Vector<double>& t, std::span<const Label> classes) const {
    if (params.size() != layout_.total) throw DataError("parameter vector length does not match network layout");
    if (z.cols() != cfg_.data_dim) throw DataError("input dimension does not match network");
    if (t.size() != z.rows()) throw DataError("one time per input row required");
    if (cfg_.num_classes > 0) {
      if (static_cast<Eigen::Index>(classes.size()) != z.rows()) throw DataError("one class per input row required");
      for (Label y : classes) {
        if (y >= cfg_.num_classes) throw DataError("unknown class " + std::to_string(y));
      }
    } else if (!classes.empty()) {
      throw DataError("class given to an unconditional network");
    }
  }

  NetConfig cfg_;
  NoiseSchedule<double> schedule_;
  ParamLayout layout_;
  Vector<Scalar> freqs_;
};

/// Presents a network with fixed parameters as a double-precision ScoreModel.
template <typename NetScalar>
class NetScoreModel final : public ScoreModel<double> {
 public:
  NetScoreModel(const ScoreNet<NetScalar>& net, Vector<NetScalar> params) : net_(net), params_(std::move(params)) {}

  Eigen::Index dim() const override { return net_.config().data_dim; }
  const NoiseSchedule<double>& schedule() const override { return net_.schedule(); }
  std::uint32_t num_classes() const override { return net_.config().num_classes; }

  Points<double> score(const Points<double>& z, const Vector<double>& t,
                       std::span<const Label> classes) const override {
    return net_.forward(params_, z.cast<NetScalar>(), t, classes).template cast<double>();
  }
  using ScoreModel<double>::score;

 private:
  const ScoreNet<NetScalar>& net_;
  Vector<NetScalar> params_;
};

/// Checkpoint: "DMNN" | u32 version | u32 config length | config text |
/// u64 param count | float32 params | float32 EMA params.
struct Checkpoint {
  Config config;
  Vector<float> params;
  Vector<float> ema;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace memlab
