#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace debias {

/// Per-subgroup values (accuracy or AUC). Absent subgroups are std::nullopt and are
/// excluded from average/worst/best. average is the unweighted mean over present
/// subgroups; ties for worst/best resolve to the lowest subgroup id.
struct SubgroupMetrics {
  std::vector<std::optional<double>> values;
  std::vector<std::size_t> counts;
  double average = 0.0;
  double worst = 0.0;
  double best = 0.0;
  int worst_group = -1;
  int best_group = -1;

  std::size_t present() const;
};

/// Fills average/worst/best from `values`. Throws ConfigError when nothing is present.
SubgroupMetrics summarize(std::vector<std::optional<double>> values, std::vector<std::size_t> counts = {});

SubgroupMetrics subgroup_accuracy(std::span<const int> predictions, std::span<const int> labels,
                                  std::span<const int> groups, int num_groups);

/// Mann-Whitney AUC (ties count 0.5). nullopt when positives or negatives are missing.
std::optional<double> auc(std::span<const double> scores, std::span<const std::uint8_t> positive);

enum class AucNegatives {
  kWithinAttribute,  // negatives: other classes sharing attribute a
  kAllAttributes,    // negatives: other classes of any attribute
};

/// One-vs-rest AUC for class c: positives are class-c samples with attribute a.
std::optional<double> subgroup_auc(std::span<const double> scores, std::span<const int> labels,
                                   std::span<const int> attributes, int c, int a,
                                   AucNegatives negatives = AucNegatives::kWithinAttribute);

struct DisparityReport {
  double delta_best_worst = 0.0;
  double delta_avg_worst = 0.0;
  /// max - min within each class's subgroups (nullopt if a class has no present subgroup).
  std::vector<std::optional<double>> per_class;
  double class_mean = 0.0;
};

/// class_partition[c] lists subgroup ids belonging to class c.
DisparityReport disparity(const SubgroupMetrics& metrics,
                          const std::vector<std::vector<int>>& class_partition);

struct ErrorSetComposition {
  std::vector<double> share;  // per subgroup, sums to 1
  std::vector<std::size_t> counts;
  double bias_conflicting_share = 0.0;
};

/// Throws ConfigError on an empty error set.
ErrorSetComposition error_set_composition(std::span<const std::size_t> error_set,
                                          std::span<const int> groups, int num_groups,
                                          std::span<const int> bias_conflicting_ids);

/// Sample mean and (n-1) standard deviation; std is 0 for n < 2.
struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
  std::size_t n = 0;
};
MeanStd mean_std(std::span<const double> xs);

}  // namespace debias
