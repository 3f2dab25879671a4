#include "memlab/score_net.hpp"

#include <cstdio>
#include <cstring>
#include <fstream>

namespace memlab {

TimeEmbedding parse_time_embedding(const std::string& s) {
  if (s == "positional") return TimeEmbedding::Positional;
  if (s == "fourier") return TimeEmbedding::Fourier;
  throw DataError("unknown time embedding: " + s);
}

Preconditioning parse_preconditioning(const std::string& s) {
  if (s == "none") return Preconditioning::None;
  if (s == "edm") return Preconditioning::Edm;
  throw DataError("unknown preconditioning: " + s);
}

ClassInput parse_class_input(const std::string& s) {
  if (s == "add") return ClassInput::Add;
  if (s == "concat") return ClassInput::Concat;
  throw DataError("unknown class embedding input: " + s);
}

std::string to_string(TimeEmbedding e) { return e == TimeEmbedding::Positional ? "positional" : "fourier"; }
std::string to_string(Preconditioning p) { return p == Preconditioning::None ? "none" : "edm"; }
std::string to_string(ClassInput c) { return c == ClassInput::Add ? "add" : "concat"; }

void NetConfig::validate() const {
  if (data_dim < 1) throw DataError("net.data_dim must be >= 1");
  if (width < 1) throw DataError("net.width must be >= 1");
  if (depth < 1) throw DataError("net.depth must be >= 1");
  if (embedding_dim < 2 || embedding_dim % 2 != 0) throw DataError("net.embedding_dim must be even and >= 2");
  if (!(fourier_scale > 0.0)) throw DataError("net.fourier_scale must be > 0");
  if (!(sigma_data > 0.0)) throw DataError("net.sigma_data must be > 0");
}

NetConfig NetConfig::from_config(const Config& cfg, const std::string& prefix) {
  const auto p = prefix + ".";
  NetConfig c;
  c.data_dim = cfg.get_int(p + "data_dim", c.data_dim);
  c.width = cfg.get_int(p + "width", c.width);
  c.depth = cfg.get_int(p + "depth", c.depth);
  if (auto v = cfg.find(p + "time_embedding")) c.time_embedding = parse_time_embedding(*v);
  c.embedding_dim = cfg.get_int(p + "embedding_dim", c.embedding_dim);
  c.fourier_scale = cfg.get_double(p + "fourier_scale", c.fourier_scale);
  c.num_classes = static_cast<std::uint32_t>(cfg.get_int(p + "num_classes", c.num_classes));
  if (auto v = cfg.find(p + "class_embedding")) c.class_input = parse_class_input(*v);
  if (auto v = cfg.find(p + "preconditioning")) c.preconditioning = parse_preconditioning(*v);
  c.sigma_data = cfg.get_double(p + "sigma_data", c.sigma_data);
  c.init_seed = cfg.get_u64(p + "init_seed", c.init_seed);
  if (auto v = cfg.find(p + "activation"); v && *v != "silu") throw DataError("only the silu activation is supported");
  c.validate();
  return c;
}

void NetConfig::write_config(Config& cfg, const std::string& prefix) const {
  const auto p = prefix + ".";
  char buf[64];
  cfg.set(p + "data_dim", std::to_string(data_dim));
  cfg.set(p + "width", std::to_string(width));
  cfg.set(p + "depth", std::to_string(depth));
  cfg.set(p + "time_embedding", to_string(time_embedding));
  cfg.set(p + "embedding_dim", std::to_string(embedding_dim));
  std::snprintf(buf, sizeof(buf), "%.17g", fourier_scale);
  cfg.set(p + "fourier_scale", buf);
  cfg.set(p + "num_classes", std::to_string(num_classes));
  cfg.set(p + "class_embedding", to_string(class_input));
  cfg.set(p + "preconditioning", to_string(preconditioning));
  std::snprintf(buf, sizeof(buf), "%.17g", sigma_data);
  cfg.set(p + "sigma_data", buf);
  cfg.set(p + "init_seed", std::to_string(init_seed));
  cfg.set(p + "activation", "silu");
}

ParamLayout ParamLayout::build(const NetConfig& cfg) {
  cfg.validate();
  ParamLayout layout;
  Eigen::Index offset = 0;
  auto add = [&offset](Eigen::Index rows, Eigen::Index cols) {
    Block b{offset, rows, cols};
    offset += rows * cols;
    return b;
  };
  layout.class_embedding = add(cfg.num_classes, cfg.num_classes > 0 ? cfg.embedding_dim : 0);
  Eigen::Index in = cfg.input_dim();
  for (Eigen::Index l = 0; l < cfg.depth; ++l) {
    layout.weights.push_back(add(cfg.width, in));
    layout.biases.push_back(add(cfg.width, 1));
    in = cfg.width;
  }
  layout.weights.push_back(add(cfg.data_dim, in));
  layout.biases.push_back(add(cfg.data_dim, 1));
  layout.total = offset;
  return layout;
}

namespace {

constexpr char kMagic[4] = {'D', 'M', 'N', 'N'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw DataError("truncated checkpoint");
  return v;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  if (ckpt.params.size() != ckpt.ema.size()) throw DataError("EMA and parameter vectors differ in length");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  const auto text = ckpt.config.canonical();
  out.write(kMagic, 4);
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  put<std::uint64_t>(out, static_cast<std::uint64_t>(ckpt.params.size()));
  const auto bytes = static_cast<std::streamsize>(ckpt.params.size() * sizeof(float));
  out.write(reinterpret_cast<const char*>(ckpt.params.data()), bytes);
  out.write(reinterpret_cast<const char*>(ckpt.ema.data()), bytes);
  if (!out) throw DataError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path.string());
  char magic[4];
  if (!in.read(magic, 4)) throw DataError("truncated checkpoint");
  if (std::memcmp(magic, kMagic, 4) != 0) throw DataError("bad magic");
  if (get<std::uint32_t>(in) != kVersion) throw DataError("version mismatch");
  const auto len = get<std::uint32_t>(in);
  std::string text(len, '\0');
  if (!in.read(text.data(), len)) throw DataError("truncated checkpoint");
  Checkpoint ckpt;
  ckpt.config = Config::parse(text);
  const auto count = get<std::uint64_t>(in);
  ckpt.params.resize(static_cast<Eigen::Index>(count));
  ckpt.ema.resize(static_cast<Eigen::Index>(count));
  const auto bytes = static_cast<std::streamsize>(count * sizeof(float));
  if (!in.read(reinterpret_cast<char*>(ckpt.params.data()), bytes)) throw DataError("truncated checkpoint");
  if (!in.read(reinterpret_cast<char*>(ckpt.ema.data()), bytes)) throw DataError("truncated checkpoint");
  return ckpt;
}

}  // namespace memlab
