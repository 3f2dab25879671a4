#include "memlab/dataset.hpp"

#include "memlab/random.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>

namespace memlab {

static_assert(std::endian::native == std::endian::little, "dataset IO assumes a little-endian host");

SourceKind parse_source_kind(const std::string& text) {
  if (text == "gaussian-mixture") return SourceKind::GaussianMixture;
  if (text == "grid-image-patches") return SourceKind::GridImagePatches;
  if (text == "file") return SourceKind::File;
  throw DataError("unknown dataset source: " + text);
}

LabelingMode parse_labeling_mode(const std::string& text) {
  if (text == "none") return LabelingMode::None;
  if (text == "true") return LabelingMode::True;
  if (text == "random") return LabelingMode::Random;
  if (text == "unique") return LabelingMode::Unique;
  throw DataError("unknown labeling mode: " + text);
}

std::string to_string(SourceKind kind) {
  switch (kind) {
    case SourceKind::GaussianMixture: return "gaussian-mixture";
    case SourceKind::GridImagePatches: return "grid-image-patches";
    case SourceKind::File: return "file";
  }
  return "?";
}

std::string to_string(LabelingMode mode) {
  switch (mode) {
    case LabelingMode::None: return "none";
    case LabelingMode::True: return "true";
    case LabelingMode::Random: return "random";
    case LabelingMode::Unique: return "unique";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// TrainingSet

TrainingSet::TrainingSet(Points<double> data, std::optional<std::vector<Label>> labels,
                         std::uint32_t num_classes, std::uint64_t seed)
    : data_(data.cast<float>().cast<double>()), labels_(std::move(labels)), num_classes_(num_classes), seed_(seed) {
  if (data_.rows() < 1 || data_.cols() < 1) throw DataError("training set must have N >= 1 and d >= 1");
  if (!data_.allFinite()) throw DataError("training set contains non-finite entries");
  if (labels_) {
    if (static_cast<Eigen::Index>(labels_->size()) != data_.rows()) {
      throw DataError("label count does not match number of rows");
    }
    if (num_classes_ == 0) throw DataError("labeled training set requires num_classes >= 1");
    for (Label y : *labels_) {
      if (y >= num_classes_) throw DataError("label " + std::to_string(y) + " outside [0, C)");
    }
  }
}

const std::vector<Label>& TrainingSet::labels() const {
  if (!labels_) throw DataError("training set is unlabeled");
  return *labels_;
}

void TrainingSet::set_secondary_flags(std::vector<std::uint8_t> flags) {
  if (!flags.empty() && static_cast<Eigen::Index>(flags.size()) != size()) {
    throw DataError("secondary flag count does not match number of rows");
  }
  secondary_ = std::move(flags);
}

std::vector<Eigen::Index> TrainingSet::class_members(Label c) const {
  std::vector<Eigen::Index> out;
  const auto& y = labels();
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] == c) out.push_back(static_cast<Eigen::Index>(i));
  }
  return out;
}

bool operator==(const TrainingSet& a, const TrainingSet& b) {
  return a.data_.rows() == b.data_.rows() && a.data_.cols() == b.data_.cols() && a.data_ == b.data_ &&
         a.labels_ == b.labels_ && a.num_classes_ == b.num_classes_;
}

// ---------------------------------------------------------------------------
// Spec

void DatasetSpec::validate() const {
  if (size < 1) throw DataError("dataset size must be >= 1");
  if (!(blend >= 0.0 && blend <= 1.0)) throw DataError("blend ratio must lie in [0, 1]");
  if (primary.kind == SourceKind::GridImagePatches) {
    if (side < 1) throw DataError("patch side must be >= 1");
  } else if (primary.kind == SourceKind::GaussianMixture) {
    if (dim < 1) throw DataError("dimension must be >= 1");
  } else if (blend > 0.0) {
    throw DataError("blending is not supported for file sources");
  }
  if (primary.kind != SourceKind::File && primary.components < 1) throw DataError("components must be >= 1");
  if (blend > 0.0 && secondary.kind == SourceKind::File) throw DataError("secondary source cannot be a file");
  if (blend > 0.0 && secondary.kind != primary.kind) {
    throw DataError("blended sources must share a kind so rows have equal dimension");
  }
  switch (labeling) {
    case LabelingMode::None:
    case LabelingMode::Unique:
      break;
    case LabelingMode::Random:
      if (class_count < 1) throw DataError("random labeling requires class_count >= 1");
      break;
    case LabelingMode::True: {
      const auto classes = class_count ? class_count : primary.components;
      if (classes < 1) throw DataError("true labeling requires class_count >= 1");
      if (size < classes) throw DataError("true labeling needs N >= C so every class is populated");
      break;
    }
  }
}

namespace {

SourceParams source_from_config(const Config& cfg, const std::string& prefix, SourceParams fallback) {
  SourceParams p = fallback;
  if (auto v = cfg.find(prefix + "source")) p.kind = parse_source_kind(*v);
  p.components = static_cast<std::uint32_t>(cfg.get_int(prefix + "components", p.components));
  p.component_std = cfg.get_double(prefix + "component_std", p.component_std);
  p.spread = cfg.get_double(prefix + "spread", p.spread);
  if (auto v = cfg.find(prefix + "path")) p.path = *v;
  return p;
}

}  // namespace

DatasetSpec DatasetSpec::from_config(const Config& cfg, const std::string& prefix) {
  const auto pre = prefix.empty() ? std::string{} : prefix + ".";
  DatasetSpec s;
  s.primary = source_from_config(cfg, pre, s.primary);
  s.secondary = source_from_config(cfg, pre + "secondary.", s.secondary);
  if (!cfg.contains(pre + "secondary.source")) s.secondary.kind = s.primary.kind;
  s.size = static_cast<std::uint32_t>(cfg.get_int(pre + "size", s.size));
  s.dim = static_cast<std::uint32_t>(cfg.get_int(pre + "dim", s.dim));
  s.side = static_cast<std::uint32_t>(cfg.get_int(pre + "side", s.side));
  s.blend = cfg.get_double(pre + "blend", s.blend);
  s.class_count = static_cast<std::uint32_t>(cfg.get_int(pre + "class_count", s.class_count));
  if (auto v = cfg.find(pre + "labeling")) s.labeling = parse_labeling_mode(*v);
  s.seed = cfg.get_u64(pre + "seed", s.seed);
  return s;
}

// ---------------------------------------------------------------------------
// Generation

namespace {

struct Drawn {
  Points<double> rows;
  std::vector<Label> component;
};

Drawn draw_mixture(const SourceParams& p, std::uint32_t count, std::uint32_t dim, std::uint64_t seed) {
  auto centre_rng = make_rng(seed, 1);
  auto point_rng = make_rng(seed, 2);
  std::normal_distribution<double> normal;
  Points<double> centres(p.components, dim);
  for (Eigen::Index i = 0; i < centres.size(); ++i) centres.data()[i] = p.spread * normal(centre_rng);
  Drawn out{Points<double>(count, dim), std::vector<Label>(count)};
  for (std::uint32_t i = 0; i < count; ++i) {
    const Label k = i % p.components;
    out.component[i] = k;
    for (std::uint32_t j = 0; j < dim; ++j) out.rows(i, j) = centres(k, j) + p.component_std * normal(point_rng);
  }
  return out;
}

// Procedural single-channel patches. Family k selects an orientation and a
// spatial frequency; each sample gets its own phase, contrast and pixel noise.
Drawn draw_patches(const SourceParams& p, std::uint32_t count, std::uint32_t side, std::uint64_t seed) {
  auto rng = make_rng(seed, 3);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unit;
  Drawn out{Points<double>(count, static_cast<Eigen::Index>(side) * side), std::vector<Label>(count)};
  const double two_pi = 2.0 * std::numbers::pi;
  for (std::uint32_t i = 0; i < count; ++i) {
    const Label k = i % p.components;
    out.component[i] = k;
    const int orientation = static_cast<int>(k % 4);
    const double freq = 1.0 + static_cast<double>((k / 4) % 3);
    const double phase = two_pi * unit(rng);
    const double contrast = p.spread * (0.5 + 0.5 * unit(rng));
    for (std::uint32_t r = 0; r < side; ++r) {
      for (std::uint32_t c = 0; c < side; ++c) {
        const double u = (static_cast<double>(r) + 0.5) / side;
        const double v = (static_cast<double>(c) + 0.5) / side;
        double s = 0.0;
        switch (orientation) {
          case 0: s = std::sin(two_pi * freq * u + phase); break;
          case 1: s = std::sin(two_pi * freq * v + phase); break;
          case 2: s = std::sin(two_pi * freq * (u + v) / 2.0 + phase); break;
          default: s = std::sin(two_pi * freq * u + phase) * std::sin(two_pi * freq * v + phase); break;
        }
        out.rows(i, static_cast<Eigen::Index>(r) * side + c) = contrast * s + p.component_std * normal(rng);
      }
    }
  }
  return out;
}

Drawn draw_source(const SourceParams& p, std::uint32_t count, const DatasetSpec& spec, std::uint64_t seed) {
  if (p.kind == SourceKind::GridImagePatches) return draw_patches(p, count, spec.side, seed);
  return draw_mixture(p, count, spec.dim, seed);
}

std::vector<Eigen::Index> shuffled_indices(Eigen::Index n, std::uint64_t seed, std::uint64_t stream) {
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  auto rng = make_rng(seed, stream);
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

TrainingSet take_rows(const TrainingSet& parent, const std::vector<Eigen::Index>& rows, std::uint64_t seed) {
  Points<double> data(static_cast<Eigen::Index>(rows.size()), parent.dim());
  for (std::size_t i = 0; i < rows.size(); ++i) data.row(static_cast<Eigen::Index>(i)) = parent.data().row(rows[i]);
  std::optional<std::vector<Label>> labels;
  if (parent.labeled()) {
    labels.emplace();
    for (auto r : rows) labels->push_back(parent.labels()[static_cast<std::size_t>(r)]);
  }
  TrainingSet out(std::move(data), std::move(labels), parent.num_classes(), seed);
  if (!parent.secondary_flags().empty()) {
    std::vector<std::uint8_t> flags;
    for (auto r : rows) flags.push_back(parent.secondary_flags()[static_cast<std::size_t>(r)]);
    out.set_secondary_flags(std::move(flags));
  }
  return out;
}

}  // namespace

TrainingSet generate(const DatasetSpec& spec) {
  spec.validate();
  if (spec.primary.kind == SourceKind::File) {
    auto base = load(spec.primary.path);
    if (spec.size < base.size()) base = subsample(base, spec.size, spec.seed);
    if (spec.size > base.size()) throw DataError("file source has fewer rows than requested size");
    if (spec.labeling == LabelingMode::None || spec.labeling == LabelingMode::True) {
      if (spec.labeling == LabelingMode::True && !base.labeled()) throw DataError("file source carries no labels");
      if (spec.labeling == LabelingMode::None) return TrainingSet(base.data(), std::nullopt, 0, spec.seed);
      return base;
    }
    return relabel(base, spec.labeling, spec.class_count, spec.seed);
  }

  const auto n_secondary = static_cast<std::uint32_t>(std::llround(spec.blend * spec.size));
  const auto n_primary = spec.size - n_secondary;
  const std::uint32_t classes = spec.labeling == LabelingMode::True && spec.class_count ? spec.class_count
                                                                                        : spec.primary.components;
  SourceParams primary = spec.primary;
  if (spec.labeling == LabelingMode::True) primary.components = classes;

  auto a = draw_source(primary, n_primary, spec, derive_seed(spec.seed, 10));
  auto b = draw_source(spec.secondary, n_secondary, spec, derive_seed(spec.seed, 11));
  const Eigen::Index d = n_primary ? a.rows.cols() : b.rows.cols();

  const auto order = shuffled_indices(spec.size, spec.seed, 12);
  Points<double> data(spec.size, d);
  std::vector<Label> component(spec.size);
  std::vector<std::uint8_t> from_b(spec.size);
  for (std::uint32_t i = 0; i < spec.size; ++i) {
    const auto src = static_cast<std::uint32_t>(order[i]);
    if (src < n_primary) {
      data.row(i) = a.rows.row(src);
      component[i] = a.component[src];
    } else {
      data.row(i) = b.rows.row(src - n_primary);
      component[i] = b.component[src - n_primary] % classes;
      from_b[i] = 1;
    }
  }

  std::optional<std::vector<Label>> labels;
  std::uint32_t num_classes = 0;
  if (spec.labeling == LabelingMode::True) {
    labels = std::move(component);
    num_classes = classes;
  }
  TrainingSet ts(std::move(data), std::move(labels), num_classes, spec.seed);
  if (spec.blend > 0.0) ts.set_secondary_flags(std::move(from_b));
  if (spec.labeling == LabelingMode::Random || spec.labeling == LabelingMode::Unique) {
    auto flags = ts.secondary_flags();
    auto out = relabel(ts, spec.labeling, spec.class_count, spec.seed);
    out.set_secondary_flags(std::move(flags));
    return out;
  }
  return ts;
}

TrainingSet relabel(const TrainingSet& ts, LabelingMode mode, std::uint32_t num_classes, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(ts.size());
  switch (mode) {
    case LabelingMode::None:
      return TrainingSet(ts.data(), std::nullopt, 0, ts.seed());
    case LabelingMode::True:
      if (!ts.labeled()) throw DataError("true labeling requested but the set has no labels");
      return ts;
    case LabelingMode::Unique: {
      std::vector<Label> y(n);
      std::iota(y.begin(), y.end(), Label{0});
      return TrainingSet(ts.data(), std::move(y), static_cast<std::uint32_t>(n), ts.seed());
    }
    case LabelingMode::Random: {
      if (num_classes < 1) throw DataError("random labeling requires C >= 1");
      auto rng = make_rng(seed, 13);
      std::uniform_int_distribution<Label> pick(0, num_classes - 1);
      std::vector<Label> y(n);
      for (auto& v : y) v = pick(rng);
      return TrainingSet(ts.data(), std::move(y), num_classes, ts.seed());
    }
  }
  throw DataError("unknown labeling mode");
}

TrainingSet subsample(const TrainingSet& parent, Eigen::Index n, std::uint64_t seed) {
  if (n < 1) throw DataError("subsample size must be >= 1");
  if (n > parent.size()) throw DataError("subsample size exceeds parent size");
  auto order = shuffled_indices(parent.size(), seed, 20);
  order.resize(static_cast<std::size_t>(n));
  std::sort(order.begin(), order.end());
  return take_rows(parent, order, seed);
}

TrainingSet subsample_independent(const TrainingSet& parent, Eigen::Index n, std::uint64_t seed) {
  if (n < 1) throw DataError("subsample size must be >= 1");
  if (n > parent.size()) throw DataError("subsample size exceeds parent size");
  auto order = shuffled_indices(parent.size(), derive_seed(seed, static_cast<std::uint64_t>(n)), 21);
  order.resize(static_cast<std::size_t>(n));
  std::sort(order.begin(), order.end());
  return take_rows(parent, order, seed);
}

TrainingSet downsample_images(const TrainingSet& ts, std::uint32_t side, std::uint32_t factor,
                              std::uint32_t channels) {
  if (factor < 1 || side < 1 || channels < 1) throw DataError("side, factor and channels must be >= 1");
  if (side % factor != 0) throw DataError("image side is not divisible by the downsampling factor");
  const Eigen::Index pixels = static_cast<Eigen::Index>(side) * side;
  if (ts.dim() != pixels * channels) throw DataError("dimension does not match channels * side^2");
  const std::uint32_t out_side = side / factor;
  const Eigen::Index out_pixels = static_cast<Eigen::Index>(out_side) * out_side;
  const double inv = 1.0 / (static_cast<double>(factor) * factor);

  Points<double> out(ts.size(), out_pixels * channels);
  for (Eigen::Index i = 0; i < ts.size(); ++i) {
    for (std::uint32_t ch = 0; ch < channels; ++ch) {
      // Map the channel plane as a row-major side x side image.
      Eigen::Map<const Points<double>> img(ts.data().row(i).data() + ch * pixels, side, side);
      for (std::uint32_t r = 0; r < out_side; ++r) {
        for (std::uint32_t c = 0; c < out_side; ++c) {
          out(i, ch * out_pixels + static_cast<Eigen::Index>(r) * out_side + c) =
              img.block(r * factor, c * factor, factor, factor).sum() * inv;
        }
      }
    }
  }
  std::optional<std::vector<Label>> labels;
  if (ts.labeled()) labels = ts.labels();
  return TrainingSet(std::move(out), std::move(labels), ts.num_classes(), ts.seed());
}

// ---------------------------------------------------------------------------
// Binary IO: "DMEM" | u32 version | u32 N | u32 d | u8 has_labels | u32 C |
// N*d float32 row-major | N u32 labels (if has_labels)

namespace {

constexpr char kMagic[4] = {'D', 'M', 'E', 'M'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ofstream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::ifstream& in) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T))) throw DataError("truncated file");
  return v;
}

}  // namespace

void save(const TrainingSet& ts, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot open for writing: " + path.string());
  out.write(kMagic, 4);
  put<std::uint32_t>(out, kVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ts.size()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ts.dim()));
  put<std::uint8_t>(out, ts.labeled() ? 1 : 0);
  put<std::uint32_t>(out, ts.labeled() ? ts.num_classes() : 0);
  const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> f = ts.data().cast<float>();
  out.write(reinterpret_cast<const char*>(f.data()), static_cast<std::streamsize>(f.size() * sizeof(float)));
  if (ts.labeled()) {
    out.write(reinterpret_cast<const char*>(ts.labels().data()),
              static_cast<std::streamsize>(ts.labels().size() * sizeof(Label)));
  }
  if (!out) throw DataError("write failed: " + path.string());
}

TrainingSet load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset: " + path.string());
  char magic[4];
  if (!in.read(magic, 4)) throw DataError("truncated file");
  if (std::memcmp(magic, kMagic, 4) != 0) throw DataError("bad magic");
  if (get<std::uint32_t>(in) != kVersion) throw DataError("version mismatch");
  const auto n = get<std::uint32_t>(in);
  const auto d = get<std::uint32_t>(in);
  const auto has_labels = get<std::uint8_t>(in);
  const auto c = get<std::uint32_t>(in);
  if (has_labels > 1) throw DataError("invalid label flag");
  if (!has_labels && c != 0) throw DataError("label flag inconsistent with class count");
  Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> f(n, d);
  if (!in.read(reinterpret_cast<char*>(f.data()), static_cast<std::streamsize>(f.size() * sizeof(float)))) {
    throw DataError("truncated file");
  }
  std::optional<std::vector<Label>> labels;
  if (has_labels) {
    labels.emplace(n);
    if (!in.read(reinterpret_cast<char*>(labels->data()), static_cast<std::streamsize>(n * sizeof(Label)))) {
      throw DataError("truncated file");
    }
  }
  if (in.peek() != std::ifstream::traits_type::eof()) throw DataError("trailing bytes after payload");
  return TrainingSet(f.cast<double>(), std::move(labels), c, 0);
}

}  // namespace memlab
