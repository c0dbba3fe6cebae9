#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>

#include "debias/dataset.hpp"
#include "debias/error.hpp"
#include "probe.hpp"

using namespace debias;
namespace fs = std::filesystem;

namespace {

SubgroupSpec isic_spec() {
  SubgroupSpec s;
  s.counts = {{4843, 4890}, {5205, 100}};
  s.core_separation = 2.0;
  s.spurious_strength = 6.0;
  return s;
}

fs::path temp_file(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "debias_unit";
  fs::create_directories(dir);
  return dir / name;
}

std::map<int, std::size_t> histogram(const Dataset& ds, std::span<const std::size_t> idx) {
  std::map<int, std::size_t> h;
  for (std::size_t i : idx) ++h[ds.groups()[i]];
  return h;
}

}  // namespace

TEST_CASE("generate: exact subgroup sizes") {
  const Dataset ds = generate(isic_spec(), 4, 4, 0);
  CHECK(ds.size() == 4843 + 4890 + 5205 + 100);
  CHECK(ds.group_counts() == std::vector<std::size_t>{4843, 4890, 5205, 100});
  CHECK(ds.dim() == 8);
}

TEST_CASE("generate: seed determinism") {
  SubgroupSpec s;
  s.counts = {{30, 20}, {10, 40}};
  s.hard_fraction = 0.2;
  CHECK(generate(s, 3, 2, 5).checksum() == generate(s, 3, 2, 5).checksum());
  CHECK(generate(s, 3, 2, 5).checksum() != generate(s, 3, 2, 6).checksum());
}

TEST_CASE("generate: subgroup id bijection") {
  SubgroupSpec s;
  s.num_classes = 3;
  s.num_attributes = 4;
  s.counts = {{5, 6, 7, 8}, {1, 2, 3, 4}, {9, 0, 2, 1}};
  const Dataset ds = generate(s, 2, 2, 1);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const int g = ds.groups()[i];
    CHECK(g == ds.group_of(ds.labels()[i], ds.attributes()[i]));
    CHECK(ds.class_of_group(g) == ds.labels()[i]);
    CHECK(ds.attribute_of_group(g) == ds.attributes()[i]);
  }
}

TEST_CASE("generate: no spurious signal means attribute probe at chance") {
  SubgroupSpec s;
  s.counts = {{400, 400}, {400, 400}};
  s.spurious_strength = 0.0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Dataset ds = generate(s, 4, 4, seed);
    const SplitSet sp = split(ds, {0.5, 0.0, 0.5}, seed, true);
    const Tensor2 xtr = ds.features().gather_rows(sp.train);
    const Tensor2 xte = ds.features().gather_rows(sp.test);
    std::vector<int> atr;
    std::vector<int> ate;
    for (std::size_t i : sp.train) atr.push_back(ds.attributes()[i]);
    for (std::size_t i : sp.test) ate.push_back(ds.attributes()[i]);
    const double acc = testing::linear_probe_accuracy(xtr, atr, xte, ate, 2);
    CAPTURE(seed);
    CHECK(std::abs(acc - 0.5) <= 0.05);
  }
}

TEST_CASE("generate: separable balanced data") {
  SubgroupSpec s;
  s.counts = {{50, 50}, {50, 50}};
  s.core_separation = 20.0;
  s.noise_sigma = 0.3;
  const Dataset ds = generate(s, 2, 2, 3);
  const double acc = testing::linear_probe_accuracy(ds.features(), ds.labels(), ds.features(), ds.labels(), 2);
  CHECK(acc >= 0.99);
}

TEST_CASE("generate: biased counts push a linear probe onto the spurious axes") {
  SubgroupSpec s = isic_spec();
  const Dataset ds = generate(s, 4, 4, 0);
  const SplitSet sp = split(ds, {0.7, 0.0, 0.3}, 0, true);
  Tensor2 xtr = ds.features().gather_rows(sp.train);
  std::vector<int> ytr;
  for (std::size_t i : sp.train) ytr.push_back(ds.labels()[i]);
  // accuracy on the bias-conflicting (y=1, a=1) slice vs the aligned (y=1, a=0) slice
  auto slice_acc = [&](int g) {
    std::vector<std::size_t> idx;
    for (std::size_t i : sp.test) {
      if (ds.groups()[i] == g) idx.push_back(i);
    }
    std::vector<int> y;
    for (std::size_t i : idx) y.push_back(ds.labels()[i]);
    return testing::linear_probe_accuracy(xtr, ytr, ds.features().gather_rows(idx), y, 2);
  };
  CHECK(slice_acc(3) < slice_acc(2));
}

TEST_CASE("validate rejects degenerate specs") {
  SubgroupSpec s;
  s.counts = {{10, 0}, {0, 0}};
  CHECK_THROWS_AS(validate(s), ConfigError);
  s.counts = {{10, 10}, {10}};
  CHECK_THROWS_AS(validate(s), ConfigError);
  s.counts = {{10, 10}, {10, 10}};
  s.noise_sigma = 0.0;
  CHECK_THROWS_AS(validate(s), ConfigError);
}

TEST_CASE("percentages: columns keep their exact totals") {
  const std::vector<std::vector<double>> pct = {{15.07, 13.96, 14.36, 13.20, 10.37, 6.93},
                                                {15.37, 15.43, 13.78, 10.82, 9.59, 9.61},
                                                {69.56, 70.61, 71.86, 75.98, 80.04, 83.46}};
  const auto counts = counts_from_column_percentages(pct, 1000);
  for (std::size_t c = 0; c < 6; ++c) {
    std::size_t col = 0;
    for (std::size_t r = 0; r < 3; ++r) {
      col += counts[r][c];
      CHECK(std::abs(static_cast<double>(counts[r][c]) - pct[r][c] * 10.0) <= 1.0);
    }
    CHECK(col == 1000);
  }
}

TEST_CASE("csv: round trip and histogram identity") {
  SubgroupSpec s;
  s.num_classes = 3;
  s.num_attributes = 6;
  s.counts = counts_from_column_percentages({{15.07, 13.96, 14.36, 13.20, 10.37, 6.93},
                                             {15.37, 15.43, 13.78, 10.82, 9.59, 9.61},
                                             {69.56, 70.61, 71.86, 75.98, 80.04, 83.46}},
                                            1000);
  const Dataset ds = generate(s, 3, 2, 4);
  const fs::path p = temp_file("fitz.csv");
  save_csv(ds, p.string());
  const Dataset back = load_csv(p.string());
  CHECK(back.size() == ds.size());
  CHECK(back.checksum() == ds.checksum());
  std::vector<std::size_t> flat;
  for (const auto& row : s.counts) flat.insert(flat.end(), row.begin(), row.end());
  CHECK(back.group_counts() == flat);
}

TEST_CASE("csv: small file and schema errors") {
  const fs::path p = temp_file("small.csv");
  {
    std::ofstream out(p);
    out << "f0,label,f1,attribute\n0.5,1,2,0\n-1,0,3.5,1\n2,1,0,1\n";
  }
  const Dataset ds = load_csv(p.string());
  CHECK(ds.size() == 3);
  CHECK(ds.dim() == 2);
  CHECK(ds.groups() == std::vector<int>{2, 1, 3});
  CHECK(ds.features()(1, 1) == 3.5);

  const fs::path bad = temp_file("noattr.csv");
  {
    std::ofstream out(bad);
    out << "f0,label\n1,0\n";
  }
  try {
    load_csv(bad.string());
    FAIL("expected SchemaError");
  } catch (const SchemaError& e) {
    CHECK(std::string(e.what()).find("'attribute'") != std::string::npos);
  }
  const fs::path ragged = temp_file("ragged.csv");
  {
    std::ofstream out(ragged);
    out << "f0,label,attribute\n1,0\n";
  }
  CHECK_THROWS_AS(load_csv(ragged.string()), SchemaError);
  CHECK_THROWS_AS(load_csv(temp_file("missing.csv").string()), SchemaError);
}

TEST_CASE("split: all train") {
  SubgroupSpec s;
  s.counts = {{10, 10}, {10, 10}};
  const Dataset ds = generate(s, 2, 2, 0);
  const SplitSet sp = split(ds, {1.0, 0.0, 0.0}, 0, true);
  CHECK(sp.train.size() == 40);
  CHECK(sp.val.empty());
  CHECK(sp.test.empty());
}

TEST_CASE("split: stratified halves") {
  SubgroupSpec s;
  s.num_classes = 2;
  s.num_attributes = 1;
  s.counts = {{10}, {10}};
  const Dataset ds = generate(s, 2, 1, 0);
  const SplitSet sp = split(ds, {0.5, 0.0, 0.5}, 3, true);
  CHECK(histogram(ds, sp.train) == std::map<int, std::size_t>{{0, 5}, {1, 5}});
  CHECK(histogram(ds, sp.test) == std::map<int, std::size_t>{{0, 5}, {1, 5}});
}

TEST_CASE("split: proportions preserved within one sample, disjoint cover") {
  std::mt19937_64 rng(21);
  std::uniform_int_distribution<std::size_t> count(3, 300);
  for (int trial = 0; trial < 20; ++trial) {
    SubgroupSpec s;
    s.counts = {{count(rng), count(rng)}, {count(rng), count(rng)}};
    const Dataset ds = generate(s, 2, 2, static_cast<std::uint64_t>(trial));
    const std::vector<double> f{0.6, 0.2, 0.2};
    const SplitSet sp = split(ds, f, static_cast<std::uint64_t>(trial), true);
    std::vector<std::size_t> all = sp.train;
    all.insert(all.end(), sp.val.begin(), sp.val.end());
    all.insert(all.end(), sp.test.begin(), sp.test.end());
    std::sort(all.begin(), all.end());
    CHECK(all == iota_indices(ds.size()));
    const auto counts = ds.group_counts();
    const auto tr = histogram(ds, sp.train);
    const auto va = histogram(ds, sp.val);
    for (int g = 0; g < 4; ++g) {
      const double n = static_cast<double>(counts[static_cast<std::size_t>(g)]);
      CHECK(std::abs(static_cast<double>(tr.at(g)) - f[0] * n) <= 1.0);
      CHECK(std::abs(static_cast<double>(va.at(g)) - f[1] * n) <= 1.0);
    }
  }
}

TEST_CASE("split: bad fractions") {
  SubgroupSpec s;
  s.counts = {{10, 10}, {10, 10}};
  const Dataset ds = generate(s, 2, 2, 0);
  CHECK_THROWS_AS(split(ds, {0.5, 0.5}, 0, true), ConfigError);
  CHECK_THROWS_AS(split(ds, {0.5, 0.6, 0.0}, 0, true), ConfigError);
}

TEST_CASE("balanced_subset") {
  SubgroupSpec s;
  s.counts = {{20, 7}, {30, 3}};
  const Dataset ds = generate(s, 2, 2, 0);
  const auto all = iota_indices(ds.size());

  SUBCASE("one per subgroup") {
    const BalancedSubset b = balanced_subset(ds, all, 1, 0);
    CHECK(b.indices.size() == 4);
    CHECK(histogram(ds, b.indices) == std::map<int, std::size_t>{{0, 1}, {1, 1}, {2, 1}, {3, 1}});
    CHECK_FALSE(b.with_replacement);
  }
  SUBCASE("exceeding the smallest subgroup") {
    const BalancedSubset b = balanced_subset(ds, all, 10, 0);
    CHECK(b.with_replacement);
    CHECK(histogram(ds, b.indices) == std::map<int, std::size_t>{{0, 10}, {1, 10}, {2, 10}, {3, 10}});
  }
  SUBCASE("deterministic given seed") {
    CHECK(balanced_subset(ds, all, 5, 9).indices == balanced_subset(ds, all, 5, 9).indices);
  }
  SUBCASE("zero per group") { CHECK_THROWS_AS(balanced_subset(ds, all, 0, 0), ConfigError); }
}

TEST_CASE("upsample_to_max") {
  SubgroupSpec s;
  s.num_classes = 2;
  s.num_attributes = 1;
  s.counts = {{100}, {5000}};
  const Dataset ds = generate(s, 2, 1, 0);
  const auto all = iota_indices(ds.size());
  const auto up = upsample_to_max(ds, all, 0);
  CHECK(histogram(ds, up) == std::map<int, std::size_t>{{0, 5000}, {1, 5000}});

  SubgroupSpec even;
  even.counts = {{7, 7}, {7, 7}};
  const Dataset eds = generate(even, 2, 2, 1);
  auto same = upsample_to_max(eds, iota_indices(eds.size()), 0);
  std::sort(same.begin(), same.end());
  CHECK(same == iota_indices(eds.size()));
}
