#pragma once

// Kohonen self-organizing map over representation vectors, and subgroup purity
// of the resulting node occupancy.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "debias/tensor.hpp"

namespace debias {

struct SomGrid {
  std::size_t height = 0;
  std::size_t width = 0;
  /// (height*width) x dim, node-major (node = row * width + col).
  Tensor2 prototypes;

  std::size_t nodes() const { return height * width; }
  std::size_t dim() const { return prototypes.cols(); }
};

struct SomParams {
  std::size_t height = 8;
  std::size_t width = 8;
  std::size_t epochs = 10;
  double alpha0 = 0.5;
  double sigma0 = 2.0;
};

/// Online Kohonen training. Prototypes start as a random sample of Z rows; each
/// epoch visits the rows in a fresh random order. With t the global step out of
/// T = epochs * rows, alpha(t) = alpha0 (1 - t/T) and sigma(t) = sigma0 (1 - t/T);
/// the neighborhood is exp(-d^2 / (2 sigma^2)) over lattice distance d
/// (BMU only once sigma underflows).
SomGrid som_fit(const Tensor2& z, const SomParams& params, std::uint64_t seed);

/// Index of the nearest prototype (squared Euclidean, ties to the lowest index).
std::size_t best_matching_unit(const SomGrid& grid, std::span<const double> z);

struct Occupancy {
  std::size_t nodes = 0;
  std::size_t num_groups = 0;
  /// counts[node * num_groups + g]
  std::vector<std::size_t> counts;
  /// BMU per mapped row
  std::vector<std::size_t> bmu;

  std::size_t at(std::size_t node, std::size_t g) const { return counts[node * num_groups + g]; }
  std::size_t node_total(std::size_t node) const;
  std::size_t total() const;
};

Occupancy som_assign(const SomGrid& grid, const Tensor2& z, std::span<const int> groups, int num_groups);

struct PurityReport {
  /// max_g count(node, g) / count(node); nullopt for empty nodes.
  std::vector<std::optional<double>> per_node;
  /// sum_node max_g count(node, g) / N
  double overall = 0.0;
  /// unweighted mean of per_node over occupied nodes
  double unweighted = 0.0;
  /// majority subgroup per node (-1 when empty; ties to the lowest id)
  std::vector<int> majority;
};

/// Throws ConfigError on empty occupancy.
PurityReport purity(const Occupancy& occupancy);

}  // namespace debias
