#include "debias/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "debias/error.hpp"

namespace debias {

std::size_t SubgroupMetrics::present() const {
  return static_cast<std::size_t>(
      std::count_if(values.begin(), values.end(), [](const auto& v) { return v.has_value(); }));
}

SubgroupMetrics summarize(std::vector<std::optional<double>> values, std::vector<std::size_t> counts) {
  SubgroupMetrics m;
  m.values = std::move(values);
  m.counts = std::move(counts);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t g = 0; g < m.values.size(); ++g) {
    if (!m.values[g]) continue;
    const double v = *m.values[g];
    sum += v;
    ++n;
    if (m.worst_group < 0 || v < m.worst) {
      m.worst = v;
      m.worst_group = static_cast<int>(g);
    }
    if (m.best_group < 0 || v > m.best) {
      m.best = v;
      m.best_group = static_cast<int>(g);
    }
  }
  if (n == 0) throw ConfigError("subgroup metrics: no subgroup present");
  m.average = sum / static_cast<double>(n);
  return m;
}

SubgroupMetrics subgroup_accuracy(std::span<const int> predictions, std::span<const int> labels,
                                  std::span<const int> groups, int num_groups) {
  if (predictions.size() != labels.size() || labels.size() != groups.size()) {
    throw ShapeError("subgroup_accuracy: length mismatch");
  }
  std::vector<std::size_t> correct(static_cast<std::size_t>(num_groups), 0);
  std::vector<std::size_t> total(static_cast<std::size_t>(num_groups), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto g = static_cast<std::size_t>(groups[i]);
    if (g >= total.size()) throw ShapeError("subgroup_accuracy: group id out of range");
    ++total[g];
    if (predictions[i] == labels[i]) ++correct[g];
  }
  std::vector<std::optional<double>> values(total.size());
  for (std::size_t g = 0; g < total.size(); ++g) {
    if (total[g] > 0) values[g] = static_cast<double>(correct[g]) / static_cast<double>(total[g]);
  }
  return summarize(std::move(values), std::move(total));
}

std::optional<double> auc(std::span<const double> scores, std::span<const std::uint8_t> positive) {
  if (scores.size() != positive.size()) throw ShapeError("auc: length mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t l, std::size_t r) { return scores[l] < scores[r]; });

  // Rank-sum form of the Mann-Whitney U with mid-ranks for ties.
  double rank_sum_pos = 0.0;
  std::size_t n_pos = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (positive[order[k]]) {
        rank_sum_pos += mid_rank;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = scores.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;
  const double np = static_cast<double>(n_pos);
  const double u = rank_sum_pos - np * (np + 1.0) / 2.0;
  return u / (np * static_cast<double>(n_neg));
}

std::optional<double> subgroup_auc(std::span<const double> scores, std::span<const int> labels,
                                   std::span<const int> attributes, int c, int a, AucNegatives negatives) {
  if (scores.size() != labels.size() || labels.size() != attributes.size()) {
    throw ShapeError("subgroup_auc: length mismatch");
  }
  std::vector<double> s;
  std::vector<std::uint8_t> pos;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool is_pos = labels[i] == c && attributes[i] == a;
    const bool is_neg = labels[i] != c && (negatives == AucNegatives::kAllAttributes || attributes[i] == a);
    if (!is_pos && !is_neg) continue;
    s.push_back(scores[i]);
    pos.push_back(is_pos ? 1 : 0);
  }
  return auc(s, pos);
}

DisparityReport disparity(const SubgroupMetrics& metrics,
                          const std::vector<std::vector<int>>& class_partition) {
  DisparityReport r;
  r.delta_best_worst = metrics.best - metrics.worst;
  r.delta_avg_worst = metrics.average - metrics.worst;
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& members : class_partition) {
    std::optional<double> lo;
    std::optional<double> hi;
    for (int g : members) {
      const auto idx = static_cast<std::size_t>(g);
      if (idx >= metrics.values.size()) throw ShapeError("disparity: subgroup id out of range");
      if (!metrics.values[idx]) continue;
      const double v = *metrics.values[idx];
      lo = lo ? std::min(*lo, v) : v;
      hi = hi ? std::max(*hi, v) : v;
    }
    if (lo) {
      r.per_class.push_back(*hi - *lo);
      sum += *hi - *lo;
      ++n;
    } else {
      r.per_class.push_back(std::nullopt);
    }
  }
  r.class_mean = n > 0 ? sum / static_cast<double>(n) : 0.0;
  return r;
}

ErrorSetComposition error_set_composition(std::span<const std::size_t> error_set,
                                          std::span<const int> groups, int num_groups,
                                          std::span<const int> bias_conflicting_ids) {
  if (error_set.empty()) throw ConfigError("error_set_composition: empty error set");
  ErrorSetComposition c;
  c.counts.assign(static_cast<std::size_t>(num_groups), 0);
  for (std::size_t i : error_set) {
    const auto g = static_cast<std::size_t>(groups[i]);
    if (g >= c.counts.size()) throw ShapeError("error_set_composition: group id out of range");
    ++c.counts[g];
  }
  const double n = static_cast<double>(error_set.size());
  c.share.resize(c.counts.size());
  for (std::size_t g = 0; g < c.counts.size(); ++g) c.share[g] = static_cast<double>(c.counts[g]) / n;
  std::size_t bc = 0;
  for (int g : bias_conflicting_ids) {
    if (g < 0 || g >= num_groups) throw ConfigError("error_set_composition: bad bias-conflicting id");
    bc += c.counts[static_cast<std::size_t>(g)];
  }
  c.bias_conflicting_share = static_cast<double>(bc) / n;
  return c;
}

MeanStd mean_std(std::span<const double> xs) {
  MeanStd r;
  r.n = xs.size();
  if (xs.empty()) return r;
  r.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - r.mean) * (x - r.mean);
    r.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return r;
}

}  // namespace debias
