#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "debias/tensor.hpp"

namespace debias {

/// Read-only view of one row of a Dataset.
struct Sample {
  std::span<const double> x;
  int y = 0;
  int a = 0;
  int g = 0;
};

/// Feature matrix plus class label and spurious attribute per row.
/// Subgroup id g = y * num_attributes + a.
class Dataset {
 public:
  Dataset() = default;
  Dataset(Tensor2 features, std::vector<int> labels, std::vector<int> attributes, int num_classes,
          int num_attributes);

  std::size_t size() const { return labels_.size(); }
  std::size_t dim() const { return features_.cols(); }
  int num_classes() const { return num_classes_; }
  int num_attributes() const { return num_attributes_; }
  int num_groups() const { return num_classes_ * num_attributes_; }

  const Tensor2& features() const { return features_; }
  const std::vector<int>& labels() const { return labels_; }
  const std::vector<int>& attributes() const { return attributes_; }
  const std::vector<int>& groups() const { return groups_; }

  Sample sample(std::size_t i) const;
  int group_of(int y, int a) const { return y * num_attributes_ + a; }
  int class_of_group(int g) const { return g / num_attributes_; }
  int attribute_of_group(int g) const { return g % num_attributes_; }

  /// Per-subgroup sample counts over `indices` (all rows when empty span is not wanted,
  /// use group_counts()).
  std::vector<std::size_t> group_counts(std::span<const std::size_t> indices) const;
  std::vector<std::size_t> group_counts() const;

  /// Rows of `indices` gathered into a new dataset.
  Dataset subset(std::span<const std::size_t> indices) const;

  /// Canonical byte image (for determinism checks).
  std::uint64_t checksum() const;

 private:
  Tensor2 features_;
  std::vector<int> labels_;
  std::vector<int> attributes_;
  std::vector<int> groups_;
  int num_classes_ = 0;
  int num_attributes_ = 0;
};

/// Rows of `b` appended after rows of `a`; both must agree on dims and group structure.
Dataset concat(const Dataset& a, const Dataset& b);

struct SubgroupSpec {
  int num_classes = 2;
  int num_attributes = 2;
  /// counts[y][a]
  std::vector<std::vector<std::size_t>> counts;
  double core_separation = 2.0;
  double spurious_strength = 4.0;
  double noise_sigma = 1.0;
  /// Fraction of every subgroup drawn with the core mean shrunk to the origin.
  double hard_fraction = 0.0;
};

/// Throws ConfigError if the spec is degenerate.
void validate(const SubgroupSpec& spec);

/// Converts per-attribute class percentages (pct[y][a], each column summing to ~100)
/// into integer counts with `column_total` samples per attribute; largest-remainder
/// rounding keeps each column total exact. Approximates percentage-only tables.
std::vector<std::vector<std::size_t>> counts_from_column_percentages(
    const std::vector<std::vector<double>>& pct, std::size_t column_total);

/// Gaussian blobs: x = [core(y) + noise, spur(a) + noise]. Class means are spaced
/// core_separation apart along the diagonal of the core block; attribute means
/// spurious_strength apart along the diagonal of the spurious block. Hard samples
/// have their core mean replaced by the origin. Row order is shuffled.
Dataset generate(const SubgroupSpec& spec, std::size_t dim_core, std::size_t dim_spurious,
                 std::uint64_t seed);

struct CsvSchema {
  std::string label_column = "label";
  std::string attribute_column = "attribute";
  int num_classes = 0;     // 0: infer as max label + 1
  int num_attributes = 0;  // 0: infer as max attribute + 1
};

/// Every column other than the label/attribute columns is a feature, in header order.
Dataset load_csv(const std::string& path, const CsvSchema& schema = {});
void save_csv(const Dataset& ds, const std::string& path);

struct SplitSet {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
  std::vector<std::size_t> test;
};

/// Splits `indices` into train/val/test by `fractions`. Stratified splitting cuts
/// each subgroup separately (round-to-nearest cumulative boundaries, subgroups
/// processed in ascending id order).
SplitSet split_indices(const Dataset& ds, std::span<const std::size_t> indices,
                       const std::vector<double>& fractions, std::uint64_t seed, bool stratify);
SplitSet split(const Dataset& ds, const std::vector<double>& fractions, std::uint64_t seed,
               bool stratify);

struct BalancedSubset {
  std::vector<std::size_t> indices;
  bool with_replacement = false;
};

/// Exactly per_group indices per subgroup (ascending subgroup order).
BalancedSubset balanced_subset(const Dataset& ds, std::span<const std::size_t> indices,
                               std::size_t per_group, std::uint64_t seed);

/// Every subgroup present in `indices` resampled with replacement up to the largest one.
std::vector<std::size_t> upsample_to_max(const Dataset& ds, std::span<const std::size_t> indices,
                                         std::uint64_t seed);

std::vector<std::size_t> iota_indices(std::size_t n);

}  // namespace debias
