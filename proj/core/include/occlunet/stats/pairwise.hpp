#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "occlunet/stats/stats.hpp"

namespace occlunet::stats {

/// Per-sample outcome of one model on a test set, indexed by sample.
struct ModelOutcomes {
  std::string name;
  std::vector<int> labels;
  std::vector<std::uint8_t> correct;
  std::string test_sha256;  // optional; compared when both sides have one
};

enum class PValueKind { chi2, exact };

struct PairCell {
  int a = 0;
  int b = 0;
  ContingencyPair counts;
  bool testable = false;  // false when there are no discordant pairs
  McNemarResult test;
  bool significant = false;
};

/// Upper-triangle pairs (a < b) in row-major order.
struct PairwiseMatrix {
  std::vector<std::string> models;
  std::vector<PairCell> pairs;
  double q = 0.05;
  PValueKind p_kind = PValueKind::chi2;

  /// Symmetric lookup; i != j.
  const PairCell& cell(int i, int j) const;
};

/// McNemar on every pair, then Benjamini-Hochberg across the testable pairs.
/// Throws AlignmentError if the outcomes do not describe the same test set.
PairwiseMatrix pairwise_compare(const std::vector<ModelOutcomes>& models, double q = 0.05,
                                PValueKind p_kind = PValueKind::chi2);

/// Square matrix of the selected p-value (diagonal blank, "NA" if untestable).
std::string matrix_csv(const PairwiseMatrix& m);
/// One row per pair with counts, chi2, both p-values and the FDR decision.
std::string pairs_csv(const PairwiseMatrix& m);
/// Grid with black squares for significant pairs.
std::string matrix_svg(const PairwiseMatrix& m);

/// Writes matrix.csv, pairs.csv and matrix.svg into `dir`.
void write_pairwise(const std::filesystem::path& dir, const PairwiseMatrix& m);

}  // namespace occlunet::stats
