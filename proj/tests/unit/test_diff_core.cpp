#include <doctest.h>

#include <cmath>
#include <random>

#include "debias/error.hpp"
#include "debias/graph.hpp"
#include "debias/model.hpp"
#include "gradcheck.hpp"

using namespace debias;

namespace {

Tensor2 mat(std::size_t r, std::size_t c, std::vector<double> v) { return Tensor2(r, c, std::move(v)); }

}  // namespace

TEST_CASE("forward: zero weights give zero logits") {
  ComputeGraph g(3);
  g.dense("w", Tensor2(3, 2), Tensor2(1, 2));
  const Tensor2 out = g.evaluate(mat(2, 3, {1, -2, 3, 4, 5, -6}));
  for (double v : out.values()) CHECK(v == 0.0);
}

TEST_CASE("forward: identity layer passes input through") {
  ComputeGraph g(2);
  g.dense("w", mat(2, 2, {1, 0, 0, 1}), Tensor2(1, 2));
  const Tensor2 x = mat(1, 2, {0.25, -7.5});
  CHECK(g.evaluate(x) == x);
}

TEST_CASE("forward: two-layer relu net by hand") {
  // h = relu([1,2] W1 + b1), W1 = [[1,-1],[0,1]], b1 = [0,-3] -> [1,-1] -> relu [1,0]
  // out = h W2 + b2, W2 = [[2],[5]], b2 = [0.5] -> 2.5
  ComputeGraph g(2);
  g.dense("l1", mat(2, 2, {1, -1, 0, 1}), mat(1, 2, {0, -3})).relu();
  g.dense("l2", mat(2, 1, {2, 5}), mat(1, 1, {0.5}));
  const Tensor2 out = g.evaluate(mat(1, 2, {1, 2}));
  CHECK(out(0, 0) == doctest::Approx(2.5).epsilon(1e-15));
}

TEST_CASE("forward: shape mismatch throws") {
  ComputeGraph g(3);
  g.dense("w", Tensor2(3, 2), Tensor2(1, 2));
  CHECK_THROWS_AS(g.forward(Tensor2(1, 4)), ShapeError);
}

TEST_CASE("per_sample_xent values") {
  SUBCASE("uniform logits give ln K") {
    const auto l = per_sample_xent(Tensor2(3, 5, 0.7), std::vector<int>{0, 2, 4});
    for (double v : l) CHECK(v == doctest::Approx(std::log(5.0)).epsilon(1e-14));
  }
  SUBCASE("saturated true class") {
    const auto l = per_sample_xent(mat(1, 2, {1000, 0}), std::vector<int>{0});
    CHECK(l[0] == doctest::Approx(0.0));
    CHECK(std::isfinite(l[0]));
  }
  SUBCASE("hand value") {
    const auto l = per_sample_xent(mat(1, 2, {1, 2}), std::vector<int>{0});
    CHECK(l[0] == doctest::Approx(-std::log(std::exp(1.0) / (std::exp(1.0) + std::exp(2.0)))));
    CHECK(std::round(l[0] * 1e4) / 1e4 == doctest::Approx(1.3133));
  }
  SUBCASE("label out of range throws") {
    CHECK_THROWS(per_sample_xent(mat(1, 2, {1, 2}), std::vector<int>{2}));
  }
}

TEST_CASE("per_sample_xent is shift invariant per row") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0.0, 3.0);
  for (int trial = 0; trial < 200; ++trial) {
    Tensor2 logits(4, 3);
    for (double& v : logits.values()) v = n(rng);
    Tensor2 shifted = logits;
    for (std::size_t r = 0; r < 4; ++r) {
      const double c = 50.0 * n(rng);
      for (double& v : shifted.row(r)) v += c;
    }
    const std::vector<int> y{0, 1, 2, 1};
    const auto a = per_sample_xent(logits, y);
    const auto b = per_sample_xent(shifted, y);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= 1e-12);
  }
}

TEST_CASE("backward: zero loss weights give zero gradients") {
  auto net = testing::random_net(3, 0.0);
  net.graph.forward(net.x);
  const std::vector<double> zeros(net.labels.size(), 0.0);
  const GradientSet g = backward(net.graph, net.labels, zeros);
  for (const auto& t : g.grads) {
    for (double v : t.values()) CHECK(v == 0.0);
  }
}

TEST_CASE("backward: finite differences on random nets") {
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    CAPTURE(seed);
    auto net = testing::random_net(1000 + seed, 0.5);
    CHECK(testing::max_relative_error(net) <= 1e-5);
  }
}

TEST_CASE("backward: stale tape") {
  auto net = testing::random_net(5, 0.0);
  net.graph.forward(net.x);
  backward(net.graph, net.labels, net.weights);
  CHECK_THROWS_AS(backward(net.graph, net.labels, net.weights), StaleTapeError);
  ComputeGraph fresh(2);
  fresh.dense("w", Tensor2(2, 2), Tensor2(1, 2));
  GradientSet g = fresh.zero_gradients();
  CHECK_THROWS_AS(fresh.backward(Tensor2(1, 2), g), StaleTapeError);
}

TEST_CASE("grad reversal: identity forward, scaled negated backward") {
  const GradReversal rev{0.7};
  const Tensor2 x = mat(2, 2, {1, -2, 3.5, 0});
  CHECK(rev.forward(x) == x);
  const Tensor2 b = rev.backward(x);
  for (std::size_t i = 0; i < 4; ++i) CHECK(b.values()[i] == -0.7 * x.values()[i]);

  // encoder gradient through a reversal node = -lambda * gradient without it
  Rng rng(11);
  ComputeGraph plain(4);
  plain.dense("enc", 6, rng).relu().dense("head", 3, rng);
  ComputeGraph reversed(4);
  reversed.dense("enc", plain.parameters()[0].value, plain.parameters()[1].value).relu();
  reversed.grad_reversal(0.7);
  reversed.dense("head", plain.parameters()[2].value, plain.parameters()[3].value);
  Tensor2 in(5, 4);
  std::normal_distribution<double> n;
  for (double& v : in.values()) v = n(rng);
  const std::vector<int> y{0, 1, 2, 0, 1};
  const std::vector<double> w(5, 1.0);
  plain.forward(in);
  reversed.forward(in);
  CHECK(plain.tape_output() == reversed.tape_output());
  const GradientSet gp = backward(plain, y, w);
  const GradientSet gr = backward(reversed, y, w);
  for (std::size_t p = 0; p < 2; ++p) {
    for (std::size_t i = 0; i < gp.grads[p].size(); ++i) {
      CHECK(gr.grads[p].values()[i] == doctest::Approx(-0.7 * gp.grads[p].values()[i]).epsilon(1e-12));
    }
  }
  for (std::size_t p = 2; p < 4; ++p) CHECK(gr.grads[p] == gp.grads[p]);
}

TEST_CASE("grad reversal: lambda zero blocks the gradient") {
  Rng rng(2);
  ComputeGraph g(3);
  g.dense("enc", 4, rng).grad_reversal(0.0).dense("head", 2, rng);
  Tensor2 x(3, 3, 0.5);
  g.forward(x);
  GradientSet grads = g.zero_gradients();
  const Tensor2 dx = g.backward(Tensor2(3, 2, 1.0), grads);
  for (double v : grads.grads[0].values()) CHECK(v == 0.0);
  for (double v : dx.values()) CHECK(v == 0.0);
  CHECK_THROWS_AS(g.set_reversal_lambda(-1.0), ConfigError);
}

TEST_CASE("sgd_step arithmetic") {
  std::vector<Parameter> p{{"w", mat(1, 1, {1.0})}};
  std::vector<Tensor2> v{Tensor2(1, 1)};

  SUBCASE("zero gradient leaves params") {
    std::vector<Tensor2> g{Tensor2(1, 1)};
    sgd_step(p, g, v, {0.1, 0.9, 0.0});
    CHECK(p[0].value(0, 0) == 1.0);
  }
  SUBCASE("plain step") {
    std::vector<Tensor2> g{mat(1, 1, {0.5})};
    sgd_step(p, g, v, {0.1, 0.0, 0.0});
    CHECK(p[0].value(0, 0) == doctest::Approx(0.95).epsilon(1e-15));
  }
  SUBCASE("momentum unrolled by hand") {
    // v1 = g1, w1 = w0 - lr v1; v2 = 0.9 v1 + g2, w2 = w1 - lr v2
    std::vector<Tensor2> g1{mat(1, 1, {0.5})};
    std::vector<Tensor2> g2{mat(1, 1, {-0.2})};
    sgd_step(p, g1, v, {0.1, 0.9, 0.0});
    sgd_step(p, g2, v, {0.1, 0.9, 0.0});
    const double v1 = 0.5;
    const double v2 = 0.9 * v1 - 0.2;
    CHECK(p[0].value(0, 0) == doctest::Approx(1.0 - 0.1 * v1 - 0.1 * v2).epsilon(1e-15));
  }
  SUBCASE("weight decay folds into the gradient") {
    std::vector<Tensor2> g{Tensor2(1, 1)};
    sgd_step(p, g, v, {0.1, 0.0, 0.5});
    CHECK(p[0].value(0, 0) == doctest::Approx(1.0 - 0.1 * 0.5).epsilon(1e-15));
  }
  SUBCASE("bad config") {
    std::vector<Tensor2> g{Tensor2(1, 1)};
    CHECK_THROWS_AS(sgd_step(p, g, v, {0.0, 0.0, 0.0}), ConfigError);
    CHECK_THROWS_AS(sgd_step(p, g, v, {0.1, 1.0, 0.0}), ConfigError);
  }
}

TEST_CASE("checkpoint round trip") {
  ArchConfig arch;
  const ModelStack a = build_model(arch, 6, 2, 2, true, 1.0, 42);
  ModelStack b = build_model(arch, 6, 2, 2, true, 1.0, 43);
  CHECK(a.checksum() != b.checksum());
  const std::string doc = checkpoint_json(a, 42, "dann");
  CHECK(load_checkpoint(doc, b) == "dann");
  CHECK(a.checksum() == b.checksum());
  CHECK(checkpoint_json(b, 42, "dann") == doc);

  ModelStack wrong = build_model(arch, 5, 2, 2, true, 1.0, 42);
  CHECK_THROWS_AS(load_checkpoint(doc, wrong), SchemaError);
  CHECK_THROWS_AS(load_checkpoint("{not json", b), SchemaError);
}

TEST_CASE("build_model shares encoder init with and without domain head") {
  ArchConfig arch;
  const ModelStack with = build_model(arch, 8, 2, 2, true, 1.0, 9);
  const ModelStack without = build_model(arch, 8, 2, 2, false, 1.0, 9);
  CHECK(with.encoder.checksum() == without.encoder.checksum());
  CHECK(with.task_head.checksum() == without.task_head.checksum());
  CHECK(with.domain_head.has_value());
  CHECK_FALSE(without.domain_head.has_value());
}
