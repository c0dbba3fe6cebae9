#pragma once

// Run configuration: a JSON document describing the dataset, splits, the
// methods to train, evaluation options and seeds.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "debias/dataset.hpp"
#include "debias/methods.hpp"
#include "debias/metrics.hpp"
#include "debias/som.hpp"

namespace debias {

struct DatasetConfig {
  enum class Kind { kSynthetic, kCsv };
  Kind kind = Kind::kSynthetic;

  SubgroupSpec spec;
  std::size_t dim_core = 4;
  std::size_t dim_spurious = 4;
  /// When set, a second block with these counts is generated per seed and
  /// supplies val/test; the first block is used for training only.
  std::optional<std::vector<std::vector<std::size_t>>> eval_counts;

  std::string csv_path;
  CsvSchema schema;
};

struct SplitConfig {
  /// train/val/test fractions (single-block datasets)
  std::vector<double> fractions{0.6, 0.2, 0.2};
  /// val/test fractions of the evaluation block (eval_counts datasets)
  std::vector<double> eval_fractions{0.2, 0.8};
  bool stratify = true;
};

struct EvalConfig {
  bool som = true;
  SomParams som_params;
  bool purity_unweighted = false;
  bool auc = false;
  AucNegatives auc_negatives = AucNegatives::kWithinAttribute;
  std::vector<std::string> subgroup_names;  // one per subgroup, id order
  std::vector<std::string> bias_conflicting;
  std::vector<int> bias_conflicting_ids;    // resolved from the names
};

struct MethodEntry {
  std::string name;  // unique label, defaults to the method id
  MethodConfig config;
};

struct RunConfig {
  DatasetConfig dataset;
  SplitConfig split;
  std::vector<MethodEntry> methods;
  EvalConfig eval;
  std::vector<std::uint64_t> seeds;
  std::string output_dir = "runs/default";
  std::size_t workers = 1;
  /// The parsed document, re-serialized (stored in every RunRecord).
  std::string snapshot;
};

/// Parses and validates. Errors are ConfigError with the offending key path,
/// e.g. "methods[2].id: unknown method id 'foo' ...". Relative csv paths are
/// resolved against base_dir.
RunConfig parse_run_config(const std::string& json_text, const std::string& base_dir = ".");
RunConfig load_run_config(const std::string& path);

/// JSON object with every MethodConfig field.
std::string method_config_json(const MethodConfig& cfg);

struct PreparedData {
  Dataset ds;
  SplitSet splits;
};

/// Builds the dataset and splits for one seed.
PreparedData prepare_data(const RunConfig& cfg, std::uint64_t seed);

std::vector<std::string> default_subgroup_names(int num_classes, int num_attributes);

}  // namespace debias
