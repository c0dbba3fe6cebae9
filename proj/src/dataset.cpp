#include "debias/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "debias/error.hpp"
#include "debias/rng.hpp"

namespace debias {

Dataset::Dataset(Tensor2 features, std::vector<int> labels, std::vector<int> attributes,
                 int num_classes, int num_attributes)
    : features_(std::move(features)),
      labels_(std::move(labels)),
      attributes_(std::move(attributes)),
      num_classes_(num_classes),
      num_attributes_(num_attributes) {
  if (labels_.size() != features_.rows() || attributes_.size() != features_.rows()) {
    throw ShapeError("Dataset: label/attribute count != feature rows");
  }
  if (num_classes_ < 1 || num_attributes_ < 1) throw ConfigError("Dataset: need >= 1 class and attribute");
  if (!features_.all_finite()) throw NumericError("Dataset: non-finite feature");
  groups_.resize(labels_.size());
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (labels_[i] < 0 || labels_[i] >= num_classes_) {
      throw ConfigError("Dataset: label out of range at row " + std::to_string(i));
    }
    if (attributes_[i] < 0 || attributes_[i] >= num_attributes_) {
      throw ConfigError("Dataset: attribute out of range at row " + std::to_string(i));
    }
    groups_[i] = group_of(labels_[i], attributes_[i]);
  }
}

Sample Dataset::sample(std::size_t i) const {
  return {features_.row(i), labels_.at(i), attributes_[i], groups_[i]};
}

std::vector<std::size_t> Dataset::group_counts(std::span<const std::size_t> indices) const {
  std::vector<std::size_t> counts(static_cast<std::size_t>(num_groups()), 0);
  for (std::size_t i : indices) ++counts[static_cast<std::size_t>(groups_.at(i))];
  return counts;
}

std::vector<std::size_t> Dataset::group_counts() const {
  std::vector<std::size_t> counts(static_cast<std::size_t>(num_groups()), 0);
  for (int g : groups_) ++counts[static_cast<std::size_t>(g)];
  return counts;
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  std::vector<int> y(indices.size());
  std::vector<int> a(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    y[i] = labels_.at(indices[i]);
    a[i] = attributes_[indices[i]];
  }
  return Dataset(features_.gather_rows(indices), std::move(y), std::move(a), num_classes_,
                 num_attributes_);
}

std::uint64_t Dataset::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  feed(features_.storage().data(), features_.size() * sizeof(double));
  feed(labels_.data(), labels_.size() * sizeof(int));
  feed(attributes_.data(), attributes_.size() * sizeof(int));
  return h;
}

Dataset concat(const Dataset& a, const Dataset& b) {
  if (a.dim() != b.dim() || a.num_classes() != b.num_classes() ||
      a.num_attributes() != b.num_attributes()) {
    throw ShapeError("concat: datasets disagree on dimension or group structure");
  }
  std::vector<double> data(a.features().storage());
  data.insert(data.end(), b.features().storage().begin(), b.features().storage().end());
  std::vector<int> y(a.labels());
  y.insert(y.end(), b.labels().begin(), b.labels().end());
  std::vector<int> attr(a.attributes());
  attr.insert(attr.end(), b.attributes().begin(), b.attributes().end());
  return Dataset(Tensor2(a.size() + b.size(), a.dim(), std::move(data)), std::move(y), std::move(attr),
                 a.num_classes(), a.num_attributes());
}

void validate(const SubgroupSpec& spec) {
  if (spec.num_classes < 1 || spec.num_attributes < 1) {
    throw ConfigError("subgroup spec: need >= 1 class and >= 1 attribute");
  }
  if (spec.counts.size() != static_cast<std::size_t>(spec.num_classes)) {
    throw ConfigError("subgroup spec: counts must have one row per class");
  }
  std::size_t nonzero = 0;
  std::size_t total = 0;
  for (const auto& row : spec.counts) {
    if (row.size() != static_cast<std::size_t>(spec.num_attributes)) {
      throw ConfigError("subgroup spec: counts must have one column per attribute");
    }
    for (std::size_t c : row) {
      total += c;
      if (c > 0) ++nonzero;
    }
  }
  if (total == 0) throw ConfigError("subgroup spec: zero total count");
  if (nonzero < 2) throw ConfigError("subgroup spec: need at least two nonempty subgroups");
  if (!(spec.noise_sigma > 0.0) || !std::isfinite(spec.noise_sigma)) {
    throw ConfigError("subgroup spec: noise_sigma must be > 0");
  }
  if (!(spec.core_separation >= 0.0) || !(spec.spurious_strength >= 0.0)) {
    throw ConfigError("subgroup spec: separations must be >= 0");
  }
  if (!(spec.hard_fraction >= 0.0 && spec.hard_fraction <= 1.0)) {
    throw ConfigError("subgroup spec: hard_fraction must be in [0,1]");
  }
}

std::vector<std::vector<std::size_t>> counts_from_column_percentages(
    const std::vector<std::vector<double>>& pct, std::size_t column_total) {
  if (pct.empty() || pct[0].empty()) throw ConfigError("percentages: empty table");
  const std::size_t rows = pct.size();
  const std::size_t cols = pct[0].size();
  std::vector<std::vector<std::size_t>> counts(rows, std::vector<std::size_t>(cols, 0));
  for (std::size_t c = 0; c < cols; ++c) {
    double col_sum = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      if (pct[r].size() != cols) throw ConfigError("percentages: ragged table");
      if (!(pct[r][c] >= 0.0)) throw ConfigError("percentages: negative entry");
      col_sum += pct[r][c];
    }
    if (!(col_sum > 0.0)) throw ConfigError("percentages: empty column");
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t r = 0; r < rows; ++r) {
      const double exact = pct[r][c] / col_sum * static_cast<double>(column_total);
      const auto whole = static_cast<std::size_t>(std::floor(exact));
      counts[r][c] = whole;
      assigned += whole;
      remainders.emplace_back(exact - static_cast<double>(whole), r);
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& l, const auto& r) { return l.first > r.first; });
    for (std::size_t k = 0; assigned < column_total; ++k, ++assigned) {
      ++counts[remainders[k % rows].second][c];
    }
  }
  return counts;
}

Dataset generate(const SubgroupSpec& spec, std::size_t dim_core, std::size_t dim_spurious,
                 std::uint64_t seed) {
  validate(spec);
  if (dim_core < 1 || dim_spurious < 1) throw ConfigError("generate: dims must be >= 1");

  std::size_t total = 0;
  for (const auto& row : spec.counts) total = std::accumulate(row.begin(), row.end(), total);
  const std::size_t dim = dim_core + dim_spurious;

  Rng rng = make_rng(seed, "generate");
  std::normal_distribution<double> noise(0.0, spec.noise_sigma);

  const double core_scale = spec.core_separation / std::sqrt(static_cast<double>(dim_core));
  const double spur_scale = spec.spurious_strength / std::sqrt(static_cast<double>(dim_spurious));
  const double core_mid = 0.5 * static_cast<double>(spec.num_classes - 1);
  const double spur_mid = 0.5 * static_cast<double>(spec.num_attributes - 1);

  std::vector<double> rows(total * dim);
  std::vector<int> labels;
  std::vector<int> attrs;
  labels.reserve(total);
  attrs.reserve(total);
  std::size_t r = 0;
  for (int y = 0; y < spec.num_classes; ++y) {
    for (int a = 0; a < spec.num_attributes; ++a) {
      const std::size_t n = spec.counts[y][a];
      const auto n_hard = static_cast<std::size_t>(std::llround(spec.hard_fraction * static_cast<double>(n)));
      const double core_mean = (y - core_mid) * core_scale;
      const double spur_mean = (a - spur_mid) * spur_scale;
      for (std::size_t i = 0; i < n; ++i, ++r) {
        double* x = rows.data() + r * dim;
        const double cm = i < n_hard ? 0.0 : core_mean;
        for (std::size_t d = 0; d < dim_core; ++d) x[d] = cm + noise(rng);
        for (std::size_t d = 0; d < dim_spurious; ++d) x[dim_core + d] = spur_mean + noise(rng);
        labels.push_back(y);
        attrs.push_back(a);
      }
    }
  }

  std::vector<std::size_t> order = iota_indices(total);
  std::shuffle(order.begin(), order.end(), rng);
  Dataset ordered(Tensor2(total, dim, std::move(rows)), std::move(labels), std::move(attrs),
                  spec.num_classes, spec.num_attributes);
  return ordered.subset(order);
}

namespace {

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

template <typename T>
bool parse_number(const std::string& s, T& out) {
  if (s.empty()) return false;
  const char* begin = s.data();
  if (*begin == '+') ++begin;
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(begin, end, out);
  return ec == std::errc() && ptr == end;
}

}  // namespace

Dataset load_csv(const std::string& path, const CsvSchema& schema) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open CSV '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("CSV '" + path + "' is empty");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_commas(line);

  std::ptrdiff_t label_col = -1;
  std::ptrdiff_t attr_col = -1;
  std::vector<std::size_t> feature_cols;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (header[c] == schema.label_column) {
      label_col = static_cast<std::ptrdiff_t>(c);
    } else if (header[c] == schema.attribute_column) {
      attr_col = static_cast<std::ptrdiff_t>(c);
    } else {
      feature_cols.push_back(c);
    }
  }
  if (label_col < 0) throw SchemaError("CSV '" + path + "': missing column '" + schema.label_column + "'");
  if (attr_col < 0) {
    throw SchemaError("CSV '" + path + "': missing column '" + schema.attribute_column + "'");
  }
  if (feature_cols.empty()) throw SchemaError("CSV '" + path + "': no feature columns");

  std::vector<double> data;
  std::vector<int> labels;
  std::vector<int> attrs;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const auto cells = split_commas(line);
    if (cells.size() != header.size()) {
      throw SchemaError("CSV '" + path + "' row " + std::to_string(line_no) + ": expected " +
                        std::to_string(header.size()) + " fields, got " + std::to_string(cells.size()));
    }
    for (std::size_t c : feature_cols) {
      double v = 0.0;
      if (!parse_number(cells[c], v) || !std::isfinite(v)) {
        throw SchemaError("CSV '" + path + "' row " + std::to_string(line_no) + ": non-numeric feature '" +
                          header[c] + "' = '" + cells[c] + "'");
      }
      data.push_back(v);
    }
    int y = 0;
    int a = 0;
    if (!parse_number(cells[static_cast<std::size_t>(label_col)], y) || y < 0) {
      throw SchemaError("CSV '" + path + "' row " + std::to_string(line_no) + ": bad label");
    }
    if (!parse_number(cells[static_cast<std::size_t>(attr_col)], a) || a < 0) {
      throw SchemaError("CSV '" + path + "' row " + std::to_string(line_no) + ": bad attribute");
    }
    labels.push_back(y);
    attrs.push_back(a);
  }
  if (labels.empty()) throw SchemaError("CSV '" + path + "' has no data rows");

  int num_classes = schema.num_classes;
  int num_attrs = schema.num_attributes;
  if (num_classes <= 0) num_classes = *std::max_element(labels.begin(), labels.end()) + 1;
  if (num_attrs <= 0) num_attrs = *std::max_element(attrs.begin(), attrs.end()) + 1;
  const std::size_t n = labels.size();
  try {
    return Dataset(Tensor2(n, feature_cols.size(), std::move(data)), std::move(labels), std::move(attrs),
                   num_classes, num_attrs);
  } catch (const Error& e) {
    throw SchemaError("CSV '" + path + "': " + e.what());
  }
}

void save_csv(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw SchemaError("cannot write CSV '" + path + "'");
  for (std::size_t d = 0; d < ds.dim(); ++d) out << 'f' << d << ',';
  out << "label,attribute\n";
  char buf[64];
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (double v : ds.features().row(i)) {
      auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
      out.write(buf, ptr - buf);
      out << ',';
    }
    out << ds.labels()[i] << ',' << ds.attributes()[i] << '\n';
  }
}

std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

SplitSet split_indices(const Dataset& ds, std::span<const std::size_t> indices,
                       const std::vector<double>& fractions, std::uint64_t seed, bool stratify) {
  if (fractions.size() != 3) throw ConfigError("split: need exactly three fractions");
  double sum = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0)) throw ConfigError("split: fractions must be >= 0");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split: fractions must sum to 1");
  const std::size_t parts = static_cast<std::size_t>(std::count_if(
      fractions.begin(), fractions.end(), [](double f) { return f > 0.0; }));

  Rng rng = make_rng(seed, "split");
  SplitSet out;
  auto cut = [&](std::vector<std::size_t>& pool) {
    const double n = static_cast<double>(pool.size());
    const auto b1 = static_cast<std::size_t>(std::llround(fractions[0] * n));
    auto b2 = static_cast<std::size_t>(std::llround((fractions[0] + fractions[1]) * n));
    b2 = std::clamp(b2, b1, pool.size());
    out.train.insert(out.train.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(b1));
    out.val.insert(out.val.end(), pool.begin() + static_cast<std::ptrdiff_t>(b1),
                   pool.begin() + static_cast<std::ptrdiff_t>(b2));
    out.test.insert(out.test.end(), pool.begin() + static_cast<std::ptrdiff_t>(b2), pool.end());
  };

  if (!stratify) {
    std::vector<std::size_t> pool(indices.begin(), indices.end());
    std::shuffle(pool.begin(), pool.end(), rng);
    cut(pool);
    return out;
  }

  std::vector<std::vector<std::size_t>> by_group(static_cast<std::size_t>(ds.num_groups()));
  for (std::size_t i : indices) by_group[static_cast<std::size_t>(ds.groups().at(i))].push_back(i);
  for (std::size_t g = 0; g < by_group.size(); ++g) {
    auto& pool = by_group[g];
    if (pool.empty()) continue;
    if (pool.size() < parts) {
      throw ConfigError("split: subgroup " + std::to_string(g) + " has " + std::to_string(pool.size()) +
                        " samples, fewer than the " + std::to_string(parts) + " nonempty splits");
    }
    std::shuffle(pool.begin(), pool.end(), rng);
    cut(pool);
  }
  return out;
}

SplitSet split(const Dataset& ds, const std::vector<double>& fractions, std::uint64_t seed,
               bool stratify) {
  const auto all = iota_indices(ds.size());
  return split_indices(ds, all, fractions, seed, stratify);
}

BalancedSubset balanced_subset(const Dataset& ds, std::span<const std::size_t> indices,
                               std::size_t per_group, std::uint64_t seed) {
  if (per_group < 1) throw ConfigError("balanced_subset: per_group must be >= 1");
  const auto present_overall = ds.group_counts();
  std::vector<std::vector<std::size_t>> by_group(static_cast<std::size_t>(ds.num_groups()));
  for (std::size_t i : indices) by_group[static_cast<std::size_t>(ds.groups().at(i))].push_back(i);

  Rng rng = make_rng(seed, "balanced_subset");
  BalancedSubset out;
  for (std::size_t g = 0; g < by_group.size(); ++g) {
    auto& pool = by_group[g];
    if (pool.empty()) {
      if (present_overall[g] == 0) continue;
      throw ConfigError("balanced_subset: subgroup " + std::to_string(g) + " absent from indices");
    }
    if (pool.size() >= per_group) {
      std::shuffle(pool.begin(), pool.end(), rng);
      out.indices.insert(out.indices.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(per_group));
    } else {
      out.with_replacement = true;
      // Every member once, then the remainder drawn with replacement.
      out.indices.insert(out.indices.end(), pool.begin(), pool.end());
      std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
      for (std::size_t k = pool.size(); k < per_group; ++k) out.indices.push_back(pool[pick(rng)]);
    }
  }
  return out;
}

std::vector<std::size_t> upsample_to_max(const Dataset& ds, std::span<const std::size_t> indices,
                                         std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> by_group(static_cast<std::size_t>(ds.num_groups()));
  for (std::size_t i : indices) by_group[static_cast<std::size_t>(ds.groups().at(i))].push_back(i);
  std::size_t largest = 0;
  for (const auto& pool : by_group) largest = std::max(largest, pool.size());
  if (largest == 0) throw ConfigError("upsample_to_max: no subgroup present");

  Rng rng = make_rng(seed, "upsample");
  std::vector<std::size_t> out;
  for (const auto& pool : by_group) {
    if (pool.empty()) continue;
    out.insert(out.end(), pool.begin(), pool.end());
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    for (std::size_t k = pool.size(); k < largest; ++k) out.push_back(pool[pick(rng)]);
  }
  return out;
}

}  // namespace debias
