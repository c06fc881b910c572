#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "occlunet/util/keyvalue.hpp"

namespace occlunet::analysis {

/// Exact t-SNE settings. The momentum switches from `momentum` to
/// `final_momentum` when early exaggeration ends.
struct EmbeddingConfig {
  double perplexity = 30;
  int iterations = 1000;
  double early_exaggeration = 12;
  int exaggeration_iterations = 250;
  double learning_rate = 200;
  double momentum = 0.5;
  double final_momentum = 0.8;
  /// Entropy tolerance (bits) of the per-point bandwidth search.
  double entropy_tolerance = 1e-5;
  std::uint64_t seed = 1;

  util::KeyValue to_keyvalue() const;
};

/// Dense row-major n x n matrix.
struct SquareMatrix {
  int n = 0;
  std::vector<double> values;

  double operator()(int i, int j) const { return values[static_cast<std::size_t>(i) * n + j]; }
  double& operator()(int i, int j) { return values[static_cast<std::size_t>(i) * n + j]; }
  double sum() const;
};

/// Conditional p(j|i) rows with per-point Gaussian bandwidths whose entropy
/// matches log2(perplexity).
SquareMatrix conditional_probabilities(const std::vector<std::vector<double>>& points, double perplexity,
                                       double tolerance = 1e-5);
/// Symmetrized joint P = (p(j|i) + p(i|j)) / 2n.
SquareMatrix joint_probabilities(const std::vector<std::vector<double>>& points, double perplexity,
                                 double tolerance = 1e-5);
/// Student-t affinities of a 2-D layout, normalized over i != j.
SquareMatrix student_t_affinities(const std::vector<std::array<double, 2>>& coords);
/// KL(P || Q) over i != j, terms with p = 0 skipped.
double kl_divergence(const SquareMatrix& p, const SquareMatrix& q);

struct Embedding {
  std::vector<std::array<double, 2>> coords;
  std::vector<double> kl_trace;  // KL(P || Q) before iteration 0 and after every iteration
  double initial_kl = 0;
  double final_kl = 0;
  double p_sum = 0;
  double q_sum = 0;
};

/// Requires at least 3 * perplexity points and 1 < perplexity < n - 1.
/// Throws ValidationError when all points coincide.
Embedding tsne_embed(const std::vector<std::vector<double>>& points, const EmbeddingConfig& config);

/// Mean silhouette coefficient of a labelled 2-D layout.
double silhouette_score(const std::vector<std::array<double, 2>>& coords, const std::vector<int>& labels);

}  // namespace occlunet::analysis
