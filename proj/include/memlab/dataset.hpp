#pragma once

#include "memlab/config.hpp"
#include "memlab/types.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace memlab {

enum class SourceKind { GaussianMixture, GridImagePatches, File };
enum class LabelingMode { None, True, Random, Unique };

SourceKind parse_source_kind(const std::string& text);
LabelingMode parse_labeling_mode(const std::string& text);
std::string to_string(SourceKind kind);
std::string to_string(LabelingMode mode);

/// An immutable empirical data distribution: N points in R^d, optionally labeled.
///
/// Entries are rounded to float32 on construction so that the binary file
/// format round-trips bit-exactly.
class TrainingSet {
 public:
  TrainingSet(Points<double> data, std::optional<std::vector<Label>> labels = std::nullopt,
              std::uint32_t num_classes = 0, std::uint64_t seed = 0);

  Eigen::Index size() const { return data_.rows(); }
  Eigen::Index dim() const { return data_.cols(); }
  const Points<double>& data() const { return data_; }
  bool labeled() const { return labels_.has_value(); }
  const std::vector<Label>& labels() const;
  std::uint32_t num_classes() const { return num_classes_; }
  std::uint64_t seed() const { return seed_; }

  /// Rows drawn from the secondary source of a blended spec; empty when unblended.
  const std::vector<std::uint8_t>& secondary_flags() const { return secondary_; }
  void set_secondary_flags(std::vector<std::uint8_t> flags);

  /// Row indices carrying label `c`.
  std::vector<Eigen::Index> class_members(Label c) const;

  friend bool operator==(const TrainingSet& a, const TrainingSet& b);

 private:
  Points<double> data_;
  std::optional<std::vector<Label>> labels_;
  std::uint32_t num_classes_ = 0;
  std::uint64_t seed_ = 0;
  std::vector<std::uint8_t> secondary_;
};

struct SourceParams {
  SourceKind kind = SourceKind::GaussianMixture;
  std::uint32_t components = 8;   // mixture modes / patch pattern families
  double component_std = 0.1;     // within-mode spread (mixture) or pixel noise (patches)
  double spread = 1.0;            // scale of mode centres
  std::filesystem::path path;     // SourceKind::File
};

struct DatasetSpec {
  SourceParams primary;
  SourceParams secondary{SourceKind::GaussianMixture, 32, 0.2, 1.0, {}};
  std::uint32_t size = 64;
  std::uint32_t dim = 2;          // ignored for patches: dim = side * side
  std::uint32_t side = 8;
  double blend = 0.0;
  std::uint32_t class_count = 0;  // 0 = one class per primary component
  LabelingMode labeling = LabelingMode::None;
  std::uint64_t seed = 0;

  void validate() const;
  /// Reads `<prefix>.*` keys (e.g. `dataset.size = 64`).
  static DatasetSpec from_config(const Config& cfg, const std::string& prefix = "dataset");
};

TrainingSet generate(const DatasetSpec& spec);

/// Seeded shuffle then prefix; selected rows keep parent order. For a fixed
/// seed the results for increasing n form a chain under inclusion.
TrainingSet subsample(const TrainingSet& parent, Eigen::Index n, std::uint64_t seed);

/// Independent draw of n rows (no nesting across n).
TrainingSet subsample_independent(const TrainingSet& parent, Eigen::Index n, std::uint64_t seed);

/// Replaces labels according to `mode`. `num_classes` is used by Random and
/// must cover the existing labels for True.
TrainingSet relabel(const TrainingSet& ts, LabelingMode mode, std::uint32_t num_classes, std::uint64_t seed);

/// k x k box filter on `channels` stacked side x side images.
TrainingSet downsample_images(const TrainingSet& ts, std::uint32_t side, std::uint32_t factor,
                              std::uint32_t channels = 1);

void save(const TrainingSet& ts, const std::filesystem::path& path);
TrainingSet load(const std::filesystem::path& path);

}  // namespace memlab
