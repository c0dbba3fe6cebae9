#include "debias/methods.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "debias/error.hpp"
#include "debias/rng.hpp"

namespace debias {

namespace {

// a cross-entropy this large only happens once the weights have blown up
constexpr double kDivergedLoss = 1e6;

constexpr std::string_view kMethodNames[] = {"erm", "iw", "gdro", "gdro_adj", "jtt", "dann", "dfr", "proposed"};

}  // namespace

std::string_view to_string(MethodId id) { return kMethodNames[static_cast<int>(id)]; }

MethodId parse_method(std::string_view id) {
  for (std::size_t i = 0; i < std::size(kMethodNames); ++i) {
    if (kMethodNames[i] == id) return static_cast<MethodId>(i);
  }
  throw ConfigError("unknown method id '" + std::string(id) +
                    "' (expected erm|iw|gdro|gdro_adj|jtt|dann|dfr|proposed)");
}

bool has_domain_head(MethodId id) { return id == MethodId::kDann || id == MethodId::kProposed; }

std::string_view to_string(Selection s) {
  switch (s) {
    case Selection::kDefault: return "default";
    case Selection::kWorstGroup: return "worst_group";
    case Selection::kAverage: return "average";
    case Selection::kLast: return "last";
  }
  return "default";
}

Selection parse_selection(std::string_view s) {
  if (s == "default") return Selection::kDefault;
  if (s == "worst_group") return Selection::kWorstGroup;
  if (s == "average") return Selection::kAverage;
  if (s == "last") return Selection::kLast;
  throw ConfigError("unknown selection '" + std::string(s) + "' (expected default|worst_group|average|last)");
}

void validate(const MethodConfig& cfg) {
  validate(SgdConfig{cfg.lr, cfg.momentum, cfg.weight_decay});
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(cfg.eta_q >= 0.0) || !std::isfinite(cfg.eta_q)) throw ConfigError("eta_q must be >= 0");
  if (!(cfg.adj_c >= 0.0)) throw ConfigError("adj_c must be >= 0");
  if (!(cfg.jtt_lambda > 0.0)) throw ConfigError("jtt_lambda must be > 0");
  if (!(cfg.jtt_top_fraction > 0.0 && cfg.jtt_top_fraction <= 1.0)) {
    throw ConfigError("jtt_top_fraction must be in (0,1]");
  }
  if (!(cfg.dann_lambda >= 0.0)) throw ConfigError("dann_lambda must be >= 0");
  if (cfg.per_group_finetune < 1) throw ConfigError("per_group_finetune must be >= 1");
  if (cfg.finetune_batch_size < 1) throw ConfigError("finetune_batch_size must be >= 1");
  if (!(cfg.finetune_lr > 0.0)) throw ConfigError("finetune_lr must be > 0");
  if (cfg.arch.representation_width < 1) throw ConfigError("arch.representation_width must be >= 1");
}

Selection effective_selection(const MethodConfig& cfg) {
  if (cfg.selection != Selection::kDefault) return cfg.selection;
  switch (cfg.method) {
    case MethodId::kErm:
    case MethodId::kDfr:
      return Selection::kAverage;
    default:
      return Selection::kWorstGroup;
  }
}

GroupWeights GroupWeights::uniform(std::size_t groups) {
  if (groups == 0) throw ConfigError("GroupWeights: need >= 1 group");
  return {std::vector<double>(groups, 1.0 / static_cast<double>(groups))};
}

void GroupWeights::validate() const {
  if (q.empty()) throw ConfigError("GroupWeights: empty");
  double s = 0.0;
  for (double v : q) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError("GroupWeights: negative or non-finite weight");
    s += v;
  }
  if (std::abs(s - 1.0) > 1e-9) throw ConfigError("GroupWeights: weights do not sum to 1");
}

GroupWeights gdro_weight_update(const GroupWeights& q, std::span<const double> losses, double eta_q) {
  std::vector<std::optional<double>> all(losses.begin(), losses.end());
  return gdro_weight_update(q, std::span<const std::optional<double>>(all), eta_q);
}

GroupWeights gdro_weight_update(const GroupWeights& q, std::span<const std::optional<double>> losses,
                                double eta_q) {
  if (losses.size() != q.q.size()) throw ShapeError("gdro_weight_update: loss count != group count");
  if (!std::isfinite(eta_q)) throw NumericError("gdro_weight_update: non-finite eta_q");
  double max_loss = -std::numeric_limits<double>::infinity();
  for (const auto& l : losses) {
    if (!l) continue;
    if (!std::isfinite(*l)) throw NumericError("gdro_weight_update: non-finite group loss");
    max_loss = std::max(max_loss, eta_q * *l);
  }
  GroupWeights out = q;
  if (!std::isfinite(max_loss)) return out;  // no group present

  // Exponents are shifted by their maximum; the normalization cancels the shift.
  double mass = 0.0;
  double z = 0.0;
  std::vector<double> unnorm(q.q.size(), 0.0);
  for (std::size_t g = 0; g < q.q.size(); ++g) {
    if (!losses[g]) continue;
    mass += q.q[g];
    unnorm[g] = q.q[g] * std::exp(eta_q * *losses[g] - max_loss);
    z += unnorm[g];
  }
  if (!(z > 0.0)) return out;  // present groups carry zero mass
  for (std::size_t g = 0; g < q.q.size(); ++g) {
    if (losses[g]) out.q[g] = mass * (unnorm[g] / z);
  }
  return out;
}

double adjusted_group_loss(double loss, std::size_t group_size, double c) {
  if (group_size < 1) throw ConfigError("adjusted_group_loss: group size must be >= 1");
  return loss + c / std::sqrt(static_cast<double>(group_size));
}

std::vector<std::optional<double>> group_means(std::span<const double> per_sample, std::span<const int> groups,
                                               int num_groups) {
  if (per_sample.size() != groups.size()) throw ShapeError("group_means: length mismatch");
  std::vector<double> sum(static_cast<std::size_t>(num_groups), 0.0);
  std::vector<std::size_t> n(static_cast<std::size_t>(num_groups), 0);
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const auto g = static_cast<std::size_t>(groups[i]);
    if (g >= n.size()) throw ShapeError("group_means: group id out of range");
    sum[g] += per_sample[i];
    ++n[g];
  }
  std::vector<std::optional<double>> out(n.size());
  for (std::size_t g = 0; g < n.size(); ++g) {
    if (n[g] > 0) out[g] = sum[g] / static_cast<double>(n[g]);
  }
  return out;
}

std::vector<std::optional<double>> group_losses(const ModelStack& model, const Dataset& ds,
                                                std::span<const std::size_t> indices) {
  const Tensor2 logits = model.task_logits(ds.features().gather_rows(indices));
  std::vector<int> y(indices.size());
  std::vector<int> g(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    y[i] = ds.labels()[indices[i]];
    g[i] = ds.groups()[indices[i]];
  }
  return group_means(per_sample_xent(logits, y), g, ds.num_groups());
}

std::vector<double> importance_weights(std::span<const int> groups, std::span<const std::size_t> group_sizes) {
  std::size_t largest = 0;
  for (std::size_t n : group_sizes) largest = std::max(largest, n);
  std::vector<double> w(groups.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const std::size_t n = group_sizes[static_cast<std::size_t>(groups[i])];
    if (n == 0) throw ConfigError("importance_weights: sample from an empty subgroup");
    w[i] = static_cast<double>(largest) / static_cast<double>(n);
    sum += w[i];
  }
  const double mean = sum / static_cast<double>(groups.size());
  for (double& v : w) v /= mean;
  return w;
}

SubgroupMetrics domain_probe_accuracy(const ModelStack& model, const Dataset& ds,
                                      std::span<const std::size_t> indices) {
  if (!model.domain_head) throw ConfigError("domain_probe_accuracy: model has no domain head");
  const auto pred = argmax_rows(model.domain_logits(ds.features().gather_rows(indices)));
  std::vector<int> a(indices.size());
  std::vector<int> g(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    a[i] = ds.attributes()[indices[i]];
    g[i] = ds.groups()[indices[i]];
  }
  return subgroup_accuracy(pred, a, g, ds.num_groups());
}

namespace {

using nlohmann::json;

json optional_vector(const std::vector<std::optional<double>>& v) {
  json out = json::array();
  for (const auto& x : v) out.push_back(x ? json(*x) : json(nullptr));
  return out;
}

enum class Weighting { kMean, kSample, kGdro };

struct StagePlan {
  std::string name;
  std::string shuffle_stream = "shuffle";
  std::vector<std::size_t> stream;
  std::size_t epochs = 0;
  Weighting weighting = Weighting::kMean;
  std::vector<double> sample_weight;  // by dataset row, for kSample
  bool adjust = false;
  std::vector<std::size_t> group_sizes;  // N_g of the training split
  bool train_domain = false;
  Selection selection = Selection::kLast;
};

SubgroupMetrics evaluate_split(const ModelStack& model, const Dataset& ds, std::span<const std::size_t> idx) {
  const auto pred = predict(model, ds, idx);
  std::vector<int> y(idx.size());
  std::vector<int> g(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    y[i] = ds.labels()[idx[i]];
    g[i] = ds.groups()[idx[i]];
  }
  return subgroup_accuracy(pred, y, g, ds.num_groups());
}

void record_simplex(Trajectory& t, const GroupWeights& q) {
  double s = 0.0;
  for (double v : q.q) {
    s += v;
    t.min_weight = std::min(t.min_weight, v);
  }
  t.max_simplex_deviation = std::max(t.max_simplex_deviation, std::abs(s - 1.0));
  ++t.adversary_steps;
}

/// Runs `plan.epochs` epochs of minibatch SGD on `model`, selecting the best
/// epoch on the validation split per plan.selection.
void run_stage(ModelStack& model, const Dataset& ds, const SplitSet& splits, const MethodConfig& cfg,
               const StagePlan& plan, std::uint64_t seed, Trajectory& traj) {
  const int num_groups = ds.num_groups();
  const auto G = static_cast<std::size_t>(num_groups);
  if (plan.stream.empty() && plan.epochs > 0) throw ConfigError("stage '" + plan.name + "': empty training stream");
  if (plan.train_domain && !model.domain_head) throw ConfigError("stage '" + plan.name + "': no domain head");

  const SgdConfig sgd{cfg.lr, cfg.momentum, cfg.weight_decay};
  Sgd enc_opt(sgd);
  Sgd task_opt(sgd);
  Sgd dom_opt(sgd);
  Rng shuffle_rng = make_rng(seed, plan.shuffle_stream);

  // adversary mass starts uniform over the subgroups the stream actually contains
  GroupWeights q = GroupWeights::uniform(G);
  if (plan.weighting == Weighting::kGdro) {
    std::vector<bool> present(G, false);
    for (std::size_t i : plan.stream) present[static_cast<std::size_t>(ds.groups()[i])] = true;
    const auto n_present = static_cast<double>(std::count(present.begin(), present.end(), true));
    for (std::size_t h = 0; h < G; ++h) q.q[h] = present[h] ? 1.0 / n_present : 0.0;
  }
  std::vector<std::size_t> order = plan.stream;

  ModelStack best = model;
  double best_score = -std::numeric_limits<double>::infinity();
  std::optional<std::size_t> best_epoch;

  for (std::size_t epoch = 0; epoch < plan.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    EpochRecord rec;
    rec.stage = plan.name;
    rec.epoch = epoch;
    std::vector<double> loss_sum(G, 0.0);
    std::vector<std::size_t> loss_n(G, 0);
    std::vector<double> q_sum(G, 0.0);
    std::size_t steps = 0;
    double objective_sum = 0.0;

    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const std::span<const std::size_t> batch(order.data() + start, end - start);
      const std::size_t B = batch.size();
      std::vector<int> y(B);
      std::vector<int> a(B);
      std::vector<int> g(B);
      for (std::size_t i = 0; i < B; ++i) {
        y[i] = ds.labels()[batch[i]];
        a[i] = ds.attributes()[batch[i]];
        g[i] = ds.groups()[batch[i]];
      }
      const Tensor2 x = ds.features().gather_rows(batch);
      const Tensor2 z = model.encoder.forward(x);
      const Tensor2 logits = model.task_head.forward(z);
      const std::vector<double> losses = per_sample_xent(logits, y);
      for (std::size_t i = 0; i < B; ++i) {
        if (!(losses[i] < kDivergedLoss)) throw NumericError("training diverged: loss " + std::to_string(losses[i]));
        loss_sum[static_cast<std::size_t>(g[i])] += losses[i];
        ++loss_n[static_cast<std::size_t>(g[i])];
      }

      std::vector<double> w(B, 1.0 / static_cast<double>(B));
      switch (plan.weighting) {
        case Weighting::kMean:
          break;
        case Weighting::kSample: {
          double sum = 0.0;
          for (std::size_t i = 0; i < B; ++i) sum += plan.sample_weight[batch[i]];
          const double mean = sum / static_cast<double>(B);
          for (std::size_t i = 0; i < B; ++i) {
            w[i] = (plan.sample_weight[batch[i]] / mean) / static_cast<double>(B);
          }
          break;
        }
        case Weighting::kGdro: {
          const auto batch_loss = group_means(losses, g, num_groups);
          std::vector<std::optional<double>> adversary_loss = batch_loss;
          if (plan.adjust) {
            for (std::size_t h = 0; h < G; ++h) {
              if (adversary_loss[h]) {
                adversary_loss[h] = adjusted_group_loss(*adversary_loss[h], plan.group_sizes[h], cfg.adj_c);
              }
            }
          }
          q = gdro_weight_update(q, std::span<const std::optional<double>>(adversary_loss), cfg.eta_q);
          record_simplex(traj, q);
          std::vector<std::size_t> n_in_batch(G, 0);
          for (int gi : g) ++n_in_batch[static_cast<std::size_t>(gi)];
          for (std::size_t i = 0; i < B; ++i) {
            const auto gi = static_cast<std::size_t>(g[i]);
            w[i] = q.q[gi] / static_cast<double>(n_in_batch[gi]);
          }
          for (std::size_t h = 0; h < G; ++h) q_sum[h] += q.q[h];
          break;
        }
      }

      double objective = 0.0;
      for (std::size_t i = 0; i < B; ++i) objective += w[i] * losses[i];
      if (!std::isfinite(objective)) throw NumericError("training diverged: non-finite objective");
      objective_sum += objective;

      GradientSet task_grads = model.task_head.zero_gradients();
      Tensor2 dz = model.task_head.backward(xent_gradient(logits, y, w), task_grads);

      GradientSet dom_grads;
      if (plan.train_domain) {
        const Tensor2 dom_logits = model.domain_head->forward(z);
        const std::vector<double> dw(B, 1.0 / static_cast<double>(B));
        dom_grads = model.domain_head->zero_gradients();
        const Tensor2 dz_dom = model.domain_head->backward(xent_gradient(dom_logits, a, dw), dom_grads);
        auto dst = dz.values();
        const auto src = dz_dom.values();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
      }

      GradientSet enc_grads = model.encoder.zero_gradients();
      model.encoder.backward(dz, enc_grads);

      enc_opt.step(model.encoder, enc_grads);
      task_opt.step(model.task_head, task_grads);
      if (plan.train_domain) dom_opt.step(*model.domain_head, dom_grads);
      ++steps;
    }

    rec.train_objective = steps > 0 ? objective_sum / static_cast<double>(steps) : 0.0;
    rec.group_loss.resize(G);
    for (std::size_t h = 0; h < G; ++h) {
      if (loss_n[h] > 0) rec.group_loss[h] = loss_sum[h] / static_cast<double>(loss_n[h]);
    }
    if (plan.weighting == Weighting::kGdro) {
      rec.group_weight_mean.resize(G);
      for (std::size_t h = 0; h < G; ++h) rec.group_weight_mean[h] = q_sum[h] / static_cast<double>(steps);
      rec.group_weight_end = q.q;
    }

    const SubgroupMetrics val = evaluate_split(model, ds, splits.val);
    rec.val_accuracy = val.values;
    rec.val_average = val.average;
    rec.val_worst = val.worst;
    if (model.domain_head) rec.domain_accuracy = domain_probe_accuracy(model, ds, splits.val).values;
    traj.epochs.push_back(std::move(rec));

    double score = 0.0;
    switch (plan.selection) {
      case Selection::kWorstGroup: score = val.worst; break;
      case Selection::kAverage: score = val.average; break;
      default: score = static_cast<double>(epoch); break;
    }
    if (score > best_score) {
      best_score = score;
      best = model;
      best_epoch = traj.epochs.size() - 1;
    }
  }
  if (best_epoch) {
    model = std::move(best);
    traj.selected_epoch = best_epoch;
  }
  model.encoder.invalidate_tape();
  model.task_head.invalidate_tape();
  if (model.domain_head) model.domain_head->invalidate_tape();
}

ModelStack fresh_model(const Dataset& ds, const MethodConfig& cfg, std::uint64_t seed, bool with_domain) {
  return build_model(cfg.arch, ds.dim(), ds.num_classes(), ds.num_attributes(), with_domain, cfg.dann_lambda,
                     seed);
}

void check_splits(const Dataset& ds, const SplitSet& splits) {
  if (splits.val.empty()) throw ConfigError("training requires a nonempty validation split");
  for (const auto* part : {&splits.train, &splits.val, &splits.test}) {
    for (std::size_t i : *part) {
      if (i >= ds.size()) throw ConfigError("split index out of range");
    }
  }
}

/// Freezes the encoder and trains the task head on a balanced subset of val.
void finetune_head(TrainResult& result, const Dataset& ds, const SplitSet& splits, const MethodConfig& cfg,
                   std::uint64_t seed) {
  ModelStack& model = result.model;
  const BalancedSubset subset = balanced_subset(ds, splits.val, cfg.per_group_finetune, seed);
  result.finetune_with_replacement = subset.with_replacement;
  if (subset.with_replacement) {
    result.warnings.push_back("balanced fine-tune subset drawn with replacement");
  }
  result.encoder_checksum_before_finetune = model.encoder.checksum();

  const Tensor2 z = extract_representations(model, ds, subset.indices);
  std::vector<int> labels(subset.indices.size());
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = ds.labels()[subset.indices[i]];

  if (cfg.finetune_reinit) {
    Rng head_rng = make_rng(seed, "finetune_head");
    model.task_head = build_task_head(model.representation_width(), ds.num_classes(), head_rng);
  }
  Sgd opt({cfg.finetune_lr, cfg.momentum, cfg.weight_decay});
  Rng shuffle_rng = make_rng(seed, "finetune_shuffle");
  std::vector<std::size_t> order(z.rows());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (std::size_t epoch = 0; epoch < cfg.finetune_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double objective_sum = 0.0;
    std::size_t steps = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.finetune_batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.finetune_batch_size);
      const std::span<const std::size_t> batch(order.data() + start, end - start);
      std::vector<int> y(batch.size());
      for (std::size_t i = 0; i < batch.size(); ++i) y[i] = labels[batch[i]];
      const Tensor2 logits = model.task_head.forward(z.gather_rows(batch));
      const auto losses = per_sample_xent(logits, y);
      const std::vector<double> w(batch.size(), 1.0 / static_cast<double>(batch.size()));
      double objective = 0.0;
      for (std::size_t i = 0; i < losses.size(); ++i) objective += w[i] * losses[i];
      if (!(objective < kDivergedLoss)) throw NumericError("fine-tuning diverged");
      objective_sum += objective;
      GradientSet grads = model.task_head.zero_gradients();
      model.task_head.backward(xent_gradient(logits, y, w), grads);
      opt.step(model.task_head, grads);
      ++steps;
    }
    EpochRecord rec;
    rec.stage = "finetune";
    rec.epoch = epoch;
    rec.train_objective = steps > 0 ? objective_sum / static_cast<double>(steps) : 0.0;
    const SubgroupMetrics val = evaluate_split(model, ds, splits.val);
    rec.val_accuracy = val.values;
    rec.val_average = val.average;
    rec.val_worst = val.worst;
    result.trajectory.epochs.push_back(std::move(rec));
  }
  model.task_head.invalidate_tape();
  result.encoder_checksum_after_finetune = model.encoder.checksum();
}

StagePlan base_plan(const Dataset& ds, const SplitSet& splits, const MethodConfig& cfg, std::string name) {
  StagePlan plan;
  plan.name = std::move(name);
  plan.stream = splits.train;
  plan.epochs = cfg.epochs;
  plan.selection = effective_selection(cfg);
  plan.group_sizes = ds.group_counts(splits.train);
  return plan;
}

}  // namespace

std::string trajectory_jsonl(const Trajectory& t) {
  std::string out;
  for (std::size_t i = 0; i < t.epochs.size(); ++i) {
    const EpochRecord& r = t.epochs[i];
    json j = {{"stage", r.stage},
              {"epoch", r.epoch},
              {"train_objective", r.train_objective},
              {"group_loss", optional_vector(r.group_loss)},
              {"val_accuracy", optional_vector(r.val_accuracy)},
              {"val_average", r.val_average},
              {"val_worst", r.val_worst},
              {"selected", t.selected_epoch && *t.selected_epoch == i}};
    if (!r.group_weight_mean.empty()) {
      j["group_weight_mean"] = r.group_weight_mean;
      j["group_weight_end"] = r.group_weight_end;
    }
    if (!r.domain_accuracy.empty()) j["domain_accuracy"] = optional_vector(r.domain_accuracy);
    out += j.dump();
    out += '\n';
  }
  return out;
}

TrainResult train_erm(const Dataset& ds, const SplitSet& splits, const MethodConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  check_splits(ds, splits);
  TrainResult r;
  r.model = fresh_model(ds, cfg, seed, false);
  run_stage(r.model, ds, splits, cfg, base_plan(ds, splits, cfg, "main"), seed, r.trajectory);
  return r;
}

TrainResult train_iw(const Dataset& ds, const SplitSet& splits, const MethodConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  check_splits(ds, splits);
  TrainResult r;
  r.model = fresh_model(ds, cfg, seed, false);
  StagePlan plan = base_plan(ds, splits, cfg, "main");
  plan.weighting = Weighting::kSample;
  std::size_t largest = 0;
  for (std::size_t n : plan.group_sizes) largest = std::max(largest, n);
  plan.sample_weight.assign(ds.size(), 0.0);
  for (std::size_t i : splits.train) {
    plan.sample_weight[i] = static_cast<double>(largest) /
                            static_cast<double>(plan.group_sizes[static_cast<std::size_t>(ds.groups()[i])]);
  }
  run_stage(r.model, ds, splits, cfg, plan, seed, r.trajectory);
  return r;
}

TrainResult train_gdro(const Dataset& ds, const SplitSet& splits, const MethodConfig& cfg, std::uint64_t seed,
                       bool with_adjustment) {
  validate(cfg);
  check_splits(ds, splits);
  TrainResult r;
  r.model = fresh_model(ds, cfg, seed, false);
  StagePlan plan = base_plan(ds, splits, cfg, "main");
  plan.weighting = Weighting::kGdro;
  plan.adjust = with_adjustment;
  run_stage(r.model, ds, splits, cfg, plan, seed, r.trajectory);
  return r;
}

TrainResult train_jtt(const Dataset& ds, const SplitSet& splits, const MethodConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  check_splits(ds, splits);
  TrainResult r;

  // Stage 1: plain ERM for jtt_epochs, last iterate.
  ModelStack stage1 = fresh_model(ds, cfg, seed, false);
  StagePlan p1 = base_plan(ds, splits, cfg, "stage1");
  p1.epochs = cfg.jtt_epochs;
  p1.selection = Selection::kLast;
  run_stage(stage1, ds, splits, cfg, p1, seed, r.trajectory);
  r.trajectory.selected_epoch.reset();

  const Tensor2 logits = stage1.task_logits(ds.features().gather_rows(splits.train));
  if (cfg.jtt_error_mode == JttErrorMode::kMisclassified) {
    const auto pred = argmax_rows(logits);
    for (std::size_t i = 0; i < splits.train.size(); ++i) {
      if (pred[i] != ds.labels()[splits.train[i]]) r.error_set.push_back(splits.train[i]);
    }
  } else {
    std::vector<int> y(splits.train.size());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = ds.labels()[splits.train[i]];
    const auto losses = per_sample_xent(logits, y);
    std::vector<std::size_t> order(losses.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t l, std::size_t rr) { return losses[l] > losses[rr]; });
    const auto k = static_cast<std::size_t>(std::ceil(cfg.jtt_top_fraction * static_cast<double>(order.size())));
    for (std::size_t i = 0; i < k && i < order.size(); ++i) r.error_set.push_back(splits.train[order[i]]);
    std::sort(r.error_set.begin(), r.error_set.end());
  }
  r.trajectory.error_set_counts = ds.group_counts(r.error_set);
  if (r.error_set.empty()) r.warnings.push_back("JTT error set is empty; stage 2 reduces to ERM");

  // Stage 2: from scratch, error set upweighted.
  r.model = fresh_model(ds, cfg, seed, false);
  StagePlan p2 = base_plan(ds, splits, cfg, "main");
  p2.weighting = Weighting::kSample;
  p2.sample_weight.assign(ds.size(), 1.0);
  for (std::size_t i : r.error_set) p2.sample_weight[i] = cfg.jtt_lambda;
  run_stage(r.model, ds, splits, cfg, p2, seed, r.trajectory);
  return r;
}

TrainResult train_dann(const Dataset& ds, const SplitSet& splits, const MethodConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  check_splits(ds, splits);
  TrainResult r;
  r.model = fresh_model(ds, cfg, seed, true);
  StagePlan plan = base_plan(ds, splits, cfg, "main");
  plan.stream = upsample_to_max(ds, splits.train, seed);
  plan.train_domain = true;
  run_stage(r.model, ds, splits, cfg, plan, seed, r.trajectory);
  return r;
}

TrainResult train_dfr(const Dataset& ds, const SplitSet& splits, const MethodConfig& cfg, std::uint64_t seed) {
  validate(cfg);
  check_splits(ds, splits);
  TrainResult r;
  r.model = fresh_model(ds, cfg, seed, false);
  run_stage(r.model, ds, splits, cfg, base_plan(ds, splits, cfg, "main"), seed, r.trajectory);
  finetune_head(r, ds, splits, cfg, seed);
  return r;
}

TrainResult train_proposed(const Dataset& ds, const SplitSet& splits, const MethodConfig& cfg,
                           std::uint64_t seed) {
  validate(cfg);
  check_splits(ds, splits);
  TrainResult r;
  r.model = fresh_model(ds, cfg, seed, true);
  StagePlan plan = base_plan(ds, splits, cfg, "main");
  plan.stream = upsample_to_max(ds, splits.train, seed);
  plan.train_domain = true;
  plan.weighting = Weighting::kGdro;
  plan.adjust = cfg.proposed_adjust;
  run_stage(r.model, ds, splits, cfg, plan, seed, r.trajectory);
  finetune_head(r, ds, splits, cfg, seed);
  return r;
}

TrainResult train(const Dataset& ds, const SplitSet& splits, const MethodConfig& cfg, std::uint64_t seed) {
  switch (cfg.method) {
    case MethodId::kErm: return train_erm(ds, splits, cfg, seed);
    case MethodId::kIw: return train_iw(ds, splits, cfg, seed);
    case MethodId::kGdro: return train_gdro(ds, splits, cfg, seed, false);
    case MethodId::kGdroAdj: return train_gdro(ds, splits, cfg, seed, true);
    case MethodId::kJtt: return train_jtt(ds, splits, cfg, seed);
    case MethodId::kDann: return train_dann(ds, splits, cfg, seed);
    case MethodId::kDfr: return train_dfr(ds, splits, cfg, seed);
    case MethodId::kProposed: return train_proposed(ds, splits, cfg, seed);
  }
  throw ConfigError("unknown method");
}

}  // namespace debias
