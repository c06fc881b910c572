#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace occlunet::stats {

/// Paired outcomes of two classifiers on the same test set.
struct ContingencyPair {
  long long b = 0;  // A correct, B wrong
  long long c = 0;  // A wrong, B correct
  long long both_correct = 0;
  long long both_wrong = 0;

  long long total() const { return b + c + both_correct + both_wrong; }
};

/// Counts from per-sample correctness; throws AlignmentError on length mismatch.
ContingencyPair contingency(std::span<const std::uint8_t> a_correct, std::span<const std::uint8_t> b_correct);

struct McNemarResult {
  double chi2 = 0;
  double p = 1;        // chi-square(1) upper tail
  double p_exact = 1;  // two-sided exact binomial (sign test) on b, c
};

/// Continuity-corrected McNemar test. Throws ValidationError when b = c = 0
/// ("no discordant pairs").
McNemarResult mcnemar(const ContingencyPair& pair);

/// Upper tail of the chi-square distribution with one degree of freedom.
double chi2_1_survival(double x);

/// Two-sided exact binomial p-value for b successes out of b + c at 1/2.
double exact_binomial_p(long long b, long long c);

/// Benjamini-Hochberg step-up. Returns rejection flags in input order.
/// Throws ValidationError for p-values outside [0, 1] or q outside [0, 1].
std::vector<bool> bh_fdr(std::span<const double> p_values, double q);

double mean(std::span<const double> values);

/// Sample standard deviation (n - 1) over sqrt(n). Requires n >= 2.
double standard_error(std::span<const double> values);

}  // namespace occlunet::stats
