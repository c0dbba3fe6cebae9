#include "debias/som.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include "debias/error.hpp"
#include "debias/rng.hpp"

namespace debias {

SomGrid som_fit(const Tensor2& z, const SomParams& params, std::uint64_t seed) {
  if (z.rows() == 0 || z.cols() == 0) throw ConfigError("som_fit: empty representation matrix");
  if (params.height == 0 || params.width == 0) throw ConfigError("som_fit: zero-size grid");
  if (!(params.alpha0 > 0.0) || !(params.sigma0 > 0.0)) throw ConfigError("som_fit: alpha0 and sigma0 must be > 0");

  Rng rng = make_rng(seed, "som");
  SomGrid grid;
  grid.height = params.height;
  grid.width = params.width;
  const std::size_t nodes = grid.nodes();
  const std::size_t dim = z.cols();

  std::vector<std::size_t> init;
  if (z.rows() >= nodes) {
    std::vector<std::size_t> all(z.rows());
    std::iota(all.begin(), all.end(), std::size_t{0});
    std::shuffle(all.begin(), all.end(), rng);
    init.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(nodes));
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, z.rows() - 1);
    for (std::size_t k = 0; k < nodes; ++k) init.push_back(pick(rng));
  }
  grid.prototypes = z.gather_rows(init);

  const std::size_t total_steps = params.epochs * z.rows();
  std::vector<std::size_t> order(z.rows());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t t = 0;
  for (std::size_t epoch = 0; epoch < params.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t idx : order) {
      const double frac = 1.0 - static_cast<double>(t) / static_cast<double>(total_steps);
      const double alpha = params.alpha0 * frac;
      const double sigma = params.sigma0 * frac;
      const auto x = z.row(idx);
      const std::size_t bmu = best_matching_unit(grid, x);
      const double br = static_cast<double>(bmu / grid.width);
      const double bc = static_cast<double>(bmu % grid.width);
      const double two_sigma2 = 2.0 * sigma * sigma;
      for (std::size_t node = 0; node < nodes; ++node) {
        const double dr = static_cast<double>(node / grid.width) - br;
        const double dc = static_cast<double>(node % grid.width) - bc;
        const double d2 = dr * dr + dc * dc;
        double h = 0.0;
        if (node == bmu) {
          h = 1.0;
        } else if (two_sigma2 > std::numeric_limits<double>::min()) {
          h = std::exp(-d2 / two_sigma2);
        }
        if (h < 1e-12) continue;
        auto w = grid.prototypes.row(node);
        const double step = alpha * h;
        for (std::size_t d = 0; d < dim; ++d) w[d] += step * (x[d] - w[d]);
      }
      ++t;
    }
  }
  return grid;
}

std::size_t best_matching_unit(const SomGrid& grid, std::span<const double> z) {
  if (z.size() != grid.dim()) throw ShapeError("best_matching_unit: dimension mismatch");
  std::size_t best = 0;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (std::size_t node = 0; node < grid.nodes(); ++node) {
    const auto w = grid.prototypes.row(node);
    double d2 = 0.0;
    for (std::size_t d = 0; d < z.size(); ++d) {
      const double diff = z[d] - w[d];
      d2 += diff * diff;
    }
    if (d2 < best_d2) {
      best_d2 = d2;
      best = node;
    }
  }
  return best;
}

std::size_t Occupancy::node_total(std::size_t node) const {
  std::size_t s = 0;
  for (std::size_t g = 0; g < num_groups; ++g) s += at(node, g);
  return s;
}

std::size_t Occupancy::total() const { return std::accumulate(counts.begin(), counts.end(), std::size_t{0}); }

Occupancy som_assign(const SomGrid& grid, const Tensor2& z, std::span<const int> groups, int num_groups) {
  if (groups.size() != z.rows()) throw ShapeError("som_assign: group count != rows");
  if (num_groups < 1) throw ConfigError("som_assign: need >= 1 subgroup");
  Occupancy occ;
  occ.nodes = grid.nodes();
  occ.num_groups = static_cast<std::size_t>(num_groups);
  occ.counts.assign(occ.nodes * occ.num_groups, 0);
  occ.bmu.resize(z.rows());
  for (std::size_t i = 0; i < z.rows(); ++i) {
    const auto g = static_cast<std::size_t>(groups[i]);
    if (g >= occ.num_groups) throw ShapeError("som_assign: group id out of range");
    const std::size_t node = best_matching_unit(grid, z.row(i));
    occ.bmu[i] = node;
    ++occ.counts[node * occ.num_groups + g];
  }
  return occ;
}

PurityReport purity(const Occupancy& occupancy) {
  const std::size_t total = occupancy.total();
  if (total == 0) throw ConfigError("purity: empty occupancy");
  PurityReport r;
  r.per_node.resize(occupancy.nodes);
  r.majority.assign(occupancy.nodes, -1);
  std::size_t majority_sum = 0;
  double unweighted_sum = 0.0;
  std::size_t occupied = 0;
  for (std::size_t node = 0; node < occupancy.nodes; ++node) {
    const std::size_t n = occupancy.node_total(node);
    if (n == 0) continue;
    std::size_t best = 0;
    for (std::size_t g = 0; g < occupancy.num_groups; ++g) {
      const std::size_t c = occupancy.at(node, g);
      if (c > best) {
        best = c;
        r.majority[node] = static_cast<int>(g);
      }
    }
    majority_sum += best;
    const double p = static_cast<double>(best) / static_cast<double>(n);
    r.per_node[node] = p;
    unweighted_sum += p;
    ++occupied;
  }
  r.overall = static_cast<double>(majority_sum) / static_cast<double>(total);
  r.unweighted = unweighted_sum / static_cast<double>(occupied);
  return r;
}

}  // namespace debias
