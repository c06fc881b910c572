#include "occlunet/stats/stats.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>

#include "occlunet/util/errors.hpp"

namespace occlunet::stats {

ContingencyPair contingency(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  if (a.size() != b.size()) {
    throw AlignmentError("correctness vectors differ in length: " + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()));
  }
  ContingencyPair p;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] && b[i]) ++p.both_correct;
    else if (a[i]) ++p.b;
    else if (b[i]) ++p.c;
    else ++p.both_wrong;
  }
  return p;
}

double chi2_1_survival(double x) {
  if (std::isnan(x) || x < 0) throw ValidationError("chi-square statistic must be >= 0");
  return std::erfc(std::sqrt(x / 2.0));
}

double exact_binomial_p(long long b, long long c) {
  if (b < 0 || c < 0) throw ValidationError("counts must be >= 0");
  const long long n = b + c;
  if (n == 0) return 1.0;
  const long long k = std::min(b, c);
  // P(X <= k) for X ~ Bin(n, 1/2), summed in log space.
  const double log_half_n = static_cast<double>(n) * std::log(0.5);
  const double lg_n1 = std::lgamma(static_cast<double>(n) + 1);
  double tail = 0;
  for (long long i = 0; i <= k; ++i) {
    const double log_term = lg_n1 - std::lgamma(static_cast<double>(i) + 1) -
                            std::lgamma(static_cast<double>(n - i) + 1) + log_half_n;
    tail += std::exp(log_term);
  }
  return std::min(1.0, 2.0 * tail);
}

McNemarResult mcnemar(const ContingencyPair& pair) {
  if (pair.b < 0 || pair.c < 0 || pair.both_correct < 0 || pair.both_wrong < 0) {
    throw ValidationError("contingency counts must be >= 0");
  }
  const long long n = pair.b + pair.c;
  if (n == 0) throw ValidationError("no discordant pairs");
  const double d = std::abs(static_cast<double>(pair.b - pair.c)) - 1.0;
  McNemarResult r;
  r.chi2 = d * d / static_cast<double>(n);
  r.p = chi2_1_survival(r.chi2);
  r.p_exact = exact_binomial_p(pair.b, pair.c);
  return r;
}

std::vector<bool> bh_fdr(std::span<const double> p, double q) {
  if (!(q >= 0 && q <= 1)) throw ValidationError("FDR level q must lie in [0, 1]");
  for (double v : p) {
    if (!(v >= 0 && v <= 1)) throw ValidationError("p-value outside [0, 1]");
  }
  const std::size_t m = p.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
  std::size_t k = 0;  // number rejected
  for (std::size_t rank = m; rank >= 1; --rank) {
    if (p[order[rank - 1]] <= static_cast<double>(rank) * q / static_cast<double>(m)) {
      k = rank;
      break;
    }
  }
  std::vector<bool> reject(m, false);
  for (std::size_t i = 0; i < k; ++i) reject[order[i]] = true;
  return reject;
}

double mean(std::span<const double> v) {
  if (v.empty()) throw ValidationError("mean of an empty list");
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double standard_error(std::span<const double> v) {
  if (v.size() < 2) throw ValidationError("standard error needs at least 2 values");
  const double mu = mean(v);
  double ss = 0;
  for (double x : v) ss += (x - mu) * (x - mu);
  const double n = static_cast<double>(v.size());
  return std::sqrt(ss / (n - 1)) / std::sqrt(n);
}

}  // namespace occlunet::stats
