// SPDX-License-Identifier: Apache-2.0
//
// 2D projections of label embeddings: PCA and exact t-SNE.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hiertag/data.hpp"
#include "hiertag/tensor.hpp"

namespace hiertag {

struct LabeledPoint {
  std::string label;
  std::vector<double> coords;

  bool operator==(const LabeledPoint&) const = default;
};

using LabeledPoints = std::vector<LabeledPoint>;

// One point per label, row i of table [n × d] for label i.
LabeledPoints points_from_table(const LabelSet& labels, const Tensor& table);

// Throws ContractError on duplicate labels or ragged coordinates.
void validate_points(std::span<const LabeledPoint> points);

struct PcaResult {
  LabeledPoints points;              // centered data on the top two directions
  std::vector<double> eigenvalues;   // covariance spectrum (divisor n - 1), descending
  std::vector<std::vector<double>> components;  // top two unit directions
};

// Each component's sign is fixed so its largest-magnitude entry is positive.
// Needs >= 2 points and dimension >= 2.
PcaResult pca(std::span<const LabeledPoint> points);
LabeledPoints pca_2d(std::span<const LabeledPoint> points);

struct TsneOptions {
  double perplexity = 5.0;
  std::size_t iterations = 1000;
  double learning_rate = 100.0;
  double initial_momentum = 0.5;
  double final_momentum = 0.8;
  std::size_t momentum_switch = 250;
  double exaggeration = 4.0;
  std::size_t exaggeration_iterations = 100;
  double perplexity_tolerance = 1e-5;
  std::uint64_t seed = 0;
};

struct TsneResult {
  LabeledPoints points;
  // kl[i] is KL(P || Q) after iteration i + 1, always against the
  // unexaggerated P.
  std::vector<double> kl;
  std::vector<double> row_perplexity;  // achieved 2^H per conditional row
  Tensor conditional;                  // P(j | i), rows sum to 1
  Tensor joint;                        // symmetrized P, floored at 1e-12 off the diagonal

  double kl_at(std::size_t iteration) const { return kl.at(iteration - 1); }
};

// Largest usable perplexity for n points is below (n - 1) / 3.
double max_perplexity(std::size_t n);

// Throws ContractError for fewer than 5 points or an infeasible perplexity.
TsneResult tsne(std::span<const LabeledPoint> points, const TsneOptions& options = {});
LabeledPoints tsne_2d(std::span<const LabeledPoint> points, double perplexity,
                      std::size_t iterations, std::uint64_t seed);

// Bandwidth search for one row of squared distances (self entry ignored).
// Returns P(j | i) and writes the achieved perplexity.
std::vector<double> conditional_row(std::span<const double> sq_dist, std::size_t self,
                                    double perplexity, double tolerance, double& achieved);

// Mean silhouette between labels starting "B-" and labels starting "I-"
// (case-insensitive), using Euclidean distance on the coordinates. Empty
// when either group has fewer than two members.
std::optional<double> begin_inside_separation(std::span<const LabeledPoint> points);

// "label,x,y" CSV with header. Labels containing a comma, quote or newline
// are quoted; coordinates are written with 17 significant digits.
void export_projection(std::ostream& out, std::span<const LabeledPoint> points);
void export_projection(const std::filesystem::path& path, std::span<const LabeledPoint> points);
LabeledPoints read_projection(std::istream& in);

}  // namespace hiertag
