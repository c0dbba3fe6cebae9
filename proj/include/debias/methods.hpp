#pragma once

// Training strategies for spurious-correlation debiasing.
//
// Every train_* call is single-threaded, owns its model, and is a pure function
// of (dataset, splits, config, seed). Random streams are derived from the seed
// and a component name ("encoder", "shuffle", ...), not from the method, so that
// degenerate configurations of one method reproduce another bit for bit.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "debias/dataset.hpp"
#include "debias/metrics.hpp"
#include "debias/model.hpp"

namespace debias {

enum class MethodId { kErm, kIw, kGdro, kGdroAdj, kJtt, kDann, kDfr, kProposed };

std::string_view to_string(MethodId id);
/// Accepts erm | iw | gdro | gdro_adj | jtt | dann | dfr | proposed.
MethodId parse_method(std::string_view id);
bool has_domain_head(MethodId id);

enum class Selection { kDefault, kWorstGroup, kAverage, kLast };
std::string_view to_string(Selection s);
Selection parse_selection(std::string_view s);

enum class JttErrorMode { kMisclassified, kTopLoss };

struct MethodConfig {
  MethodId method = MethodId::kErm;
  std::size_t epochs = 30;
  std::size_t batch_size = 128;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;

  double eta_q = 0.02;
  double adj_c = 1.0;
  /// Group adjustment inside the proposed method's adversary.
  bool proposed_adjust = true;

  std::size_t jtt_epochs = 2;
  double jtt_lambda = 20.0;
  JttErrorMode jtt_error_mode = JttErrorMode::kMisclassified;
  double jtt_top_fraction = 0.1;

  double dann_lambda = 1.0;

  std::size_t per_group_finetune = 100;
  std::size_t finetune_epochs = 100;
  std::size_t finetune_batch_size = 64;
  double finetune_lr = 0.002;
  bool finetune_reinit = true;

  Selection selection = Selection::kDefault;
  ArchConfig arch;
};

void validate(const MethodConfig& cfg);
/// Selection actually used for the method's main stage.
Selection effective_selection(const MethodConfig& cfg);

/// Probability vector over subgroups (the GDRO adversary state).
struct GroupWeights {
  std::vector<double> q;

  static GroupWeights uniform(std::size_t groups);
  /// Throws ConfigError unless q >= 0 and |sum - 1| <= 1e-9.
  void validate() const;
};

/// q'_g = q_g exp(eta L_g) / sum_h q_h exp(eta L_h). Throws NumericError on
/// non-finite losses.
GroupWeights gdro_weight_update(const GroupWeights& q, std::span<const double> losses, double eta_q);

/// Same update restricted to the groups with a loss: absent groups keep their
/// weight exactly, and the present groups share their previous total mass.
GroupWeights gdro_weight_update(const GroupWeights& q, std::span<const std::optional<double>> losses,
                                double eta_q);

/// L_g + C / sqrt(N_g). Enters only the adversary, never the descent loss.
double adjusted_group_loss(double loss, std::size_t group_size, double c);

/// Mean of `per_sample` over each subgroup's members; nullopt for absent subgroups.
std::vector<std::optional<double>> group_means(std::span<const double> per_sample,
                                               std::span<const int> groups, int num_groups);

/// Mean per-sample cross-entropy of the task head per subgroup over `indices`.
std::vector<std::optional<double>> group_losses(const ModelStack& model, const Dataset& ds,
                                                std::span<const std::size_t> indices);

/// Importance weights proportional to 1/N_g, normalized to average 1 over `groups`.
/// Exactly 1.0 for every sample when all N_g are equal.
std::vector<double> importance_weights(std::span<const int> groups, std::span<const std::size_t> group_sizes);

/// Attribute-prediction accuracy of the domain head, sliced by subgroup.
SubgroupMetrics domain_probe_accuracy(const ModelStack& model, const Dataset& ds,
                                      std::span<const std::size_t> indices);

struct EpochRecord {
  std::string stage;
  std::size_t epoch = 0;
  double train_objective = 0.0;
  std::vector<std::optional<double>> group_loss;
  /// adversary weights: mean over the epoch's steps, and at epoch end (GDRO-style methods only)
  std::vector<double> group_weight_mean;
  std::vector<double> group_weight_end;
  std::vector<std::optional<double>> val_accuracy;
  double val_average = 0.0;
  double val_worst = 0.0;
  /// domain-head accuracy per subgroup on the validation split (domain-head methods only)
  std::vector<std::optional<double>> domain_accuracy;
};

struct Trajectory {
  std::vector<EpochRecord> epochs;
  std::optional<std::size_t> selected_epoch;  // index into epochs
  /// Simplex checks over every adversary step.
  std::size_t adversary_steps = 0;
  double max_simplex_deviation = 0.0;
  double min_weight = 1.0;
  /// JTT stage-1 error set composition (counts per subgroup).
  std::vector<std::size_t> error_set_counts;
};

/// One JSON object per line.
std::string trajectory_jsonl(const Trajectory& t);

struct TrainResult {
  ModelStack model;
  Trajectory trajectory;
  std::vector<std::size_t> error_set;
  bool finetune_with_replacement = false;
  std::optional<std::uint64_t> encoder_checksum_before_finetune;
  std::optional<std::uint64_t> encoder_checksum_after_finetune;
  std::vector<std::string> warnings;
};

TrainResult train_erm(const Dataset& ds, const SplitSet& splits, const MethodConfig& cfg, std::uint64_t seed);
TrainResult train_iw(const Dataset& ds, const SplitSet& splits, const MethodConfig& cfg, std::uint64_t seed);
TrainResult train_gdro(const Dataset& ds, const SplitSet& splits, const MethodConfig& cfg, std::uint64_t seed,
                       bool with_adjustment);
TrainResult train_jtt(const Dataset& ds, const SplitSet& splits, const MethodConfig& cfg, std::uint64_t seed);
TrainResult train_dann(const Dataset& ds, const SplitSet& splits, const MethodConfig& cfg, std::uint64_t seed);
TrainResult train_dfr(const Dataset& ds, const SplitSet& splits, const MethodConfig& cfg, std::uint64_t seed);
TrainResult train_proposed(const Dataset& ds, const SplitSet& splits, const MethodConfig& cfg,
                           std::uint64_t seed);

/// Dispatches on cfg.method.
TrainResult train(const Dataset& ds, const SplitSet& splits, const MethodConfig& cfg, std::uint64_t seed);

}  // namespace debias
