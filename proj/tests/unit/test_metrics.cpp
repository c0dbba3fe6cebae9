#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "debias/error.hpp"
#include "debias/metrics.hpp"

using namespace debias;

TEST_CASE("subgroup_accuracy: all correct") {
  const std::vector<int> y{0, 1, 1, 0, 1};
  const std::vector<int> g{0, 3, 2, 1, 3};
  const SubgroupMetrics m = subgroup_accuracy(y, y, g, 4);
  for (const auto& v : m.values) CHECK(*v == 1.0);
  CHECK(m.average == 1.0);
}

TEST_CASE("summarize: arithmetic, ties and absent groups") {
  const SubgroupMetrics m = summarize({0.9, 0.8, 0.7, 0.6});
  CHECK(m.average == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(m.worst == 0.6);
  CHECK(m.worst_group == 3);
  CHECK(m.best_group == 0);

  const SubgroupMetrics t = summarize({0.5, std::nullopt, 0.5, 0.9});
  CHECK(t.worst_group == 0);
  CHECK(t.present() == 3);
  CHECK(t.average == doctest::Approx((0.5 + 0.5 + 0.9) / 3.0));
  CHECK_THROWS_AS(summarize({std::nullopt, std::nullopt}), ConfigError);
}

TEST_CASE("subgroup_accuracy: group average differs from sample average") {
  // 98 samples in group 0 all correct, 2 samples in group 1 both wrong
  std::vector<int> y(100, 0);
  std::vector<int> p(100, 0);
  std::vector<int> g(100, 0);
  for (std::size_t i = 98; i < 100; ++i) {
    g[i] = 1;
    p[i] = 1;
  }
  const SubgroupMetrics m = subgroup_accuracy(p, y, g, 2);
  CHECK(m.average == 0.5);
  CHECK(m.average != doctest::Approx(0.98));
}

TEST_CASE("subgroup_accuracy: permuting rows keeps the per-group values") {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> bit(0, 1);
  std::uniform_int_distribution<int> grp(0, 3);
  std::vector<int> y(200);
  std::vector<int> p(200);
  std::vector<int> g(200);
  for (std::size_t i = 0; i < 200; ++i) {
    y[i] = bit(rng);
    p[i] = bit(rng);
    g[i] = grp(rng);
  }
  const auto a = subgroup_accuracy(p, y, g, 4);
  std::vector<std::size_t> perm(200);
  for (std::size_t i = 0; i < 200; ++i) perm[i] = i;
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<int> y2(200);
  std::vector<int> p2(200);
  std::vector<int> g2(200);
  for (std::size_t i = 0; i < 200; ++i) {
    y2[i] = y[perm[i]];
    p2[i] = p[perm[i]];
    g2[i] = g[perm[i]];
  }
  const auto b = subgroup_accuracy(p2, y2, g2, 4);
  CHECK(a.values == b.values);
  CHECK(a.counts == b.counts);
}

TEST_CASE("subgroup_accuracy: empty slice is absent") {
  const std::vector<int> y{0, 0};
  const std::vector<int> g{0, 0};
  const auto m = subgroup_accuracy(y, y, g, 3);
  CHECK_FALSE(m.values[1].has_value());
  CHECK(m.worst == 1.0);
  CHECK_THROWS_AS(subgroup_accuracy(y, std::vector<int>{0}, g, 3), ShapeError);
}

TEST_CASE("auc: hand cases") {
  const std::vector<double> perfect{0.9, 0.8, 0.1, 0.2};
  const std::vector<std::uint8_t> pos{1, 1, 0, 0};
  CHECK(*auc(perfect, pos) == 1.0);
  const std::vector<double> flat(4, 0.3);
  CHECK(*auc(flat, pos) == 0.5);
  const std::vector<double> s{0.9, 0.8, 0.4, 0.3};
  const std::vector<std::uint8_t> l{1, 0, 1, 0};
  CHECK(*auc(s, l) == 0.75);
  CHECK_FALSE(auc(s, std::vector<std::uint8_t>{1, 1, 1, 1}).has_value());
}

TEST_CASE("auc: invariant under strictly monotone transforms") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> n;
  std::uniform_int_distribution<int> bit(0, 1);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> s(40);
    std::vector<std::uint8_t> pos(40);
    for (std::size_t i = 0; i < 40; ++i) {
      s[i] = std::round(n(rng) * 4.0) / 4.0;  // coarse grid forces ties
      pos[i] = static_cast<std::uint8_t>(bit(rng));
    }
    pos[0] = 1;
    pos[1] = 0;
    std::vector<double> t(40);
    for (std::size_t i = 0; i < 40; ++i) t[i] = std::exp(3.0 * s[i]) + 7.0;
    CHECK(*auc(s, pos) == *auc(t, pos));
  }
}

TEST_CASE("auc: brute-force pair counting") {
  std::mt19937_64 rng(12);
  std::uniform_int_distribution<int> level(0, 5);
  std::uniform_int_distribution<int> bit(0, 1);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> s(30);
    std::vector<std::uint8_t> pos(30);
    for (std::size_t i = 0; i < 30; ++i) {
      s[i] = level(rng);
      pos[i] = static_cast<std::uint8_t>(bit(rng));
    }
    pos[0] = 1;
    pos[1] = 0;
    double wins = 0.0;
    double pairs = 0.0;
    for (std::size_t i = 0; i < 30; ++i) {
      for (std::size_t j = 0; j < 30; ++j) {
        if (!pos[i] || pos[j]) continue;
        pairs += 1.0;
        wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
    }
    CHECK(*auc(s, pos) == doctest::Approx(wins / pairs).epsilon(1e-14));
  }
}

TEST_CASE("subgroup_auc: negatives within or across attribute") {
  // class-0 positives at attribute 0; negatives: class 1 at attribute 0 and class 1 at attribute 1
  const std::vector<double> s{0.9, 0.6, 0.7, 0.95};
  const std::vector<int> y{0, 0, 1, 1};
  const std::vector<int> a{0, 0, 0, 1};
  CHECK(*subgroup_auc(s, y, a, 0, 0) == 0.5);
  CHECK(*subgroup_auc(s, y, a, 0, 0, AucNegatives::kAllAttributes) == 0.25);
  CHECK_FALSE(subgroup_auc(s, y, a, 0, 1).has_value());
}

TEST_CASE("disparity") {
  SUBCASE("table values") {
    const SubgroupMetrics m = summarize({0.999, 0.556, 0.8285, 0.8285});
    const DisparityReport d = disparity(m, {{0, 1}, {2, 3}});
    CHECK(m.average == doctest::Approx(0.803).epsilon(1e-12));
    CHECK(d.delta_best_worst == doctest::Approx(0.443).epsilon(1e-12));
    CHECK(d.delta_avg_worst == doctest::Approx(0.247).epsilon(1e-12));
    CHECK(std::abs(d.delta_avg_worst - 0.246) <= 0.002);
  }
  SUBCASE("all equal") {
    const DisparityReport d = disparity(summarize({0.7, 0.7, 0.7, 0.7}), {{0, 1}, {2, 3}});
    CHECK(d.delta_best_worst == 0.0);
    CHECK(d.delta_avg_worst == 0.0);
    CHECK(d.class_mean == 0.0);
  }
  SUBCASE("one class") {
    const DisparityReport d = disparity(summarize({1.0, 0.5}), {{0, 1}});
    CHECK(*d.per_class[0] == 0.5);
    CHECK(d.class_mean == 0.5);
  }
  SUBCASE("ordering on random inputs") {
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 500; ++trial) {
      const SubgroupMetrics m = summarize({u(rng), u(rng), u(rng), u(rng), u(rng), u(rng)});
      const DisparityReport d = disparity(m, {{0, 1, 2}, {3, 4, 5}});
      CHECK(d.delta_avg_worst >= 0.0);
      CHECK(d.delta_avg_worst <= d.delta_best_worst);
      for (const auto& c : d.per_class) CHECK(*c <= d.delta_best_worst);
    }
  }
  SUBCASE("absent class") {
    const DisparityReport d = disparity(summarize({0.4, 0.6, std::nullopt}), {{0, 1}, {2}});
    CHECK_FALSE(d.per_class[1].has_value());
    CHECK(d.class_mean == doctest::Approx(0.2));
  }
}

TEST_CASE("error_set_composition") {
  const std::vector<int> groups{0, 0, 1, 1, 1, 2, 2, 2, 3, 3};
  SUBCASE("one subgroup") {
    const std::vector<std::size_t> e{2, 3, 4};
    const auto c = error_set_composition(e, groups, 4, std::vector<int>{3});
    CHECK(c.share[1] == 1.0);
    CHECK(c.bias_conflicting_share == 0.0);
  }
  SUBCASE("eight indices over three subgroups") {
    const std::vector<std::size_t> e{0, 1, 2, 3, 4, 5, 6, 8};
    const auto c = error_set_composition(e, groups, 4, std::vector<int>{3});
    CHECK(c.counts == std::vector<std::size_t>{2, 3, 2, 1});
    CHECK(c.share[0] == 0.25);
    CHECK(c.share[1] == 0.375);
    CHECK(c.share[2] == 0.25);
    CHECK(c.bias_conflicting_share == 0.125);
  }
  SUBCASE("empty") {
    CHECK_THROWS_AS(error_set_composition(std::vector<std::size_t>{}, groups, 4, std::vector<int>{}), ConfigError);
  }
}

TEST_CASE("mean_std uses n-1") {
  const std::vector<double> x{1.0, 2.0, 4.0};
  const MeanStd m = mean_std(x);
  CHECK(m.mean == doctest::Approx(7.0 / 3.0));
  const double var = ((1 - 7.0 / 3) * (1 - 7.0 / 3) + (2 - 7.0 / 3) * (2 - 7.0 / 3) + (4 - 7.0 / 3) * (4 - 7.0 / 3)) / 2;
  CHECK(m.std == doctest::Approx(std::sqrt(var)));
  CHECK(mean_std(std::vector<double>{3.0}).std == 0.0);
}
