#include "occlunet/analysis/tsne.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>

#include "occlunet/digits/pcg32.hpp"
#include "occlunet/util/errors.hpp"

namespace occlunet::analysis {

namespace {

SquareMatrix squared_distances(const std::vector<std::vector<double>>& x) {
  const int n = static_cast<int>(x.size());
  SquareMatrix d{n, std::vector<double>(static_cast<std::size_t>(n) * n, 0.0)};
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < x[i].size(); ++k) {
        const double v = x[i][k] - x[j][k];
        s += v * v;
      }
      d(i, j) = d(j, i) = s;
    }
  }
  return d;
}

void check_points(const std::vector<std::vector<double>>& points) {
  if (points.empty()) throw ValidationError("t-SNE needs points");
  const std::size_t dim = points[0].size();
  bool all_same = true;
  for (const auto& p : points) {
    if (p.size() != dim) throw ShapeError("t-SNE points differ in dimension");
    for (double v : p) {
      if (!std::isfinite(v)) throw ValidationError("t-SNE input contains non-finite values");
    }
    if (p != points[0]) all_same = false;
  }
  if (all_same) throw ValidationError("degenerate t-SNE input: all points are identical");
}

// Box-Muller on PCG32 so layouts do not depend on the standard library.
double normal(digits::Pcg32& rng) {
  const double u1 = (static_cast<double>(rng.next()) + 1.0) / 4294967297.0;
  const double u2 = static_cast<double>(rng.next()) / 4294967296.0;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace

util::KeyValue EmbeddingConfig::to_keyvalue() const {
  util::KeyValue kv;
  kv.set("tsne.perplexity", perplexity);
  kv.set("tsne.iterations", iterations);
  kv.set("tsne.early_exaggeration", early_exaggeration);
  kv.set("tsne.exaggeration_iterations", exaggeration_iterations);
  kv.set("tsne.learning_rate", learning_rate);
  kv.set("tsne.momentum", momentum);
  kv.set("tsne.final_momentum", final_momentum);
  kv.set("tsne.entropy_tolerance", entropy_tolerance);
  kv.set("tsne.seed", std::to_string(seed));
  return kv;
}

double SquareMatrix::sum() const {
  double s = 0;
  for (double v : values) s += v;
  return s;
}

SquareMatrix conditional_probabilities(const std::vector<std::vector<double>>& points, double perplexity,
                                       double tolerance) {
  check_points(points);
  const int n = static_cast<int>(points.size());
  if (!(perplexity > 1 && perplexity < n - 1)) {
    throw ConfigError("perplexity must lie in (1, " + std::to_string(n - 1) + ")");
  }
  const auto d = squared_distances(points);
  const double target = std::log2(perplexity);
  SquareMatrix p{n, std::vector<double>(static_cast<std::size_t>(n) * n, 0.0)};
  std::vector<double> row(n);
  for (int i = 0; i < n; ++i) {
    // Distances are shifted by the row minimum for numerical range; this
    // cancels in the normalization.
    double dmin = std::numeric_limits<double>::infinity();
    for (int j = 0; j < n; ++j) {
      if (j != i) dmin = std::min(dmin, d(i, j));
    }
    double beta = 1.0, lo = 0.0, hi = std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < 200; ++iter) {
      double z = 0, weighted = 0;
      for (int j = 0; j < n; ++j) {
        row[j] = j == i ? 0.0 : std::exp(-beta * (d(i, j) - dmin));
        z += row[j];
        weighted += row[j] * (d(i, j) - dmin);
      }
      // H in nats = log z + beta * E[d]; converted to bits.
      const double entropy = (std::log(z) + beta * weighted / z) / std::numbers::ln2;
      for (int j = 0; j < n; ++j) row[j] /= z;
      const double diff = entropy - target;
      if (std::abs(diff) < tolerance) break;
      if (diff > 0) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2 : (beta + hi) / 2;
      } else {
        hi = beta;
        beta = (beta + lo) / 2;
      }
    }
    for (int j = 0; j < n; ++j) p(i, j) = row[j];
  }
  return p;
}

SquareMatrix joint_probabilities(const std::vector<std::vector<double>>& points, double perplexity,
                                 double tolerance) {
  const auto c = conditional_probabilities(points, perplexity, tolerance);
  const int n = c.n;
  SquareMatrix p{n, std::vector<double>(c.values.size(), 0.0)};
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) p(i, j) = (c(i, j) + c(j, i)) / (2.0 * n);
  }
  return p;
}

SquareMatrix student_t_affinities(const std::vector<std::array<double, 2>>& y) {
  const int n = static_cast<int>(y.size());
  SquareMatrix q{n, std::vector<double>(static_cast<std::size_t>(n) * n, 0.0)};
  double z = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const double dx = y[i][0] - y[j][0], dy = y[i][1] - y[j][1];
      const double w = 1.0 / (1.0 + dx * dx + dy * dy);
      q(i, j) = q(j, i) = w;
      z += 2 * w;
    }
  }
  for (double& v : q.values) v /= z;
  return q;
}

double kl_divergence(const SquareMatrix& p, const SquareMatrix& q) {
  if (p.n != q.n) throw ShapeError("KL: matrices differ in size");
  double kl = 0;
  for (int i = 0; i < p.n; ++i) {
    for (int j = 0; j < p.n; ++j) {
      if (i == j || p(i, j) <= 0) continue;
      kl += p(i, j) * std::log(p(i, j) / std::max(q(i, j), std::numeric_limits<double>::min()));
    }
  }
  return kl;
}

Embedding tsne_embed(const std::vector<std::vector<double>>& points, const EmbeddingConfig& cfg) {
  check_points(points);
  const int n = static_cast<int>(points.size());
  if (n < 3 * cfg.perplexity) {
    throw ConfigError("t-SNE needs at least 3 x perplexity points (" + std::to_string(n) + " given)");
  }
  if (cfg.iterations < 1 || cfg.learning_rate <= 0) throw ConfigError("invalid t-SNE schedule");
  const auto p = joint_probabilities(points, cfg.perplexity, cfg.entropy_tolerance);

  Embedding out;
  out.p_sum = p.sum();
  digits::Pcg32 rng(cfg.seed, 0x74736e65ULL);
  out.coords.resize(n);
  for (auto& c : out.coords) c = {1e-4 * normal(rng), 1e-4 * normal(rng)};

  std::vector<std::array<double, 2>> velocity(n, {0.0, 0.0}), gains(n, {1.0, 1.0}), grad(n);
  auto q = student_t_affinities(out.coords);
  out.initial_kl = kl_divergence(p, q);
  out.kl_trace.push_back(out.initial_kl);

  for (int iter = 0; iter < cfg.iterations; ++iter) {
    const bool early = iter < cfg.exaggeration_iterations;
    const double exaggeration = early ? cfg.early_exaggeration : 1.0;
    const double momentum = early ? cfg.momentum : cfg.final_momentum;

    // dC/dy_i = 4 sum_j (P_ij - Q_ij) (y_i - y_j) / (1 + |y_i - y_j|^2)
    double z = 0;
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        const double dx = out.coords[i][0] - out.coords[j][0], dy = out.coords[i][1] - out.coords[j][1];
        z += 2.0 / (1.0 + dx * dx + dy * dy);
      }
    }
    for (int i = 0; i < n; ++i) {
      double gx = 0, gy = 0;
      for (int j = 0; j < n; ++j) {
        if (j == i) continue;
        const double dx = out.coords[i][0] - out.coords[j][0], dy = out.coords[i][1] - out.coords[j][1];
        const double w = 1.0 / (1.0 + dx * dx + dy * dy);
        const double m = (exaggeration * p(i, j) - w / z) * w;
        gx += m * dx;
        gy += m * dy;
      }
      grad[i] = {4 * gx, 4 * gy};
    }
    for (int i = 0; i < n; ++i) {
      for (int k = 0; k < 2; ++k) {
        // Delta-bar-delta gains as in the reference implementation.
        const bool same_sign = (grad[i][k] > 0) == (velocity[i][k] > 0);
        gains[i][k] = same_sign ? std::max(gains[i][k] * 0.8, 0.01) : gains[i][k] + 0.2;
        velocity[i][k] = momentum * velocity[i][k] - cfg.learning_rate * gains[i][k] * grad[i][k];
        out.coords[i][k] += velocity[i][k];
      }
    }
    double mx = 0, my = 0;
    for (const auto& c : out.coords) {
      mx += c[0];
      my += c[1];
    }
    for (auto& c : out.coords) {
      c[0] -= mx / n;
      c[1] -= my / n;
    }
    q = student_t_affinities(out.coords);
    const double kl = kl_divergence(p, q);
    if (!std::isfinite(kl)) throw Error("t-SNE diverged at iteration " + std::to_string(iter));
    out.kl_trace.push_back(kl);
  }
  out.final_kl = out.kl_trace.back();
  out.q_sum = q.sum();
  return out;
}

double silhouette_score(const std::vector<std::array<double, 2>>& coords, const std::vector<int>& labels) {
  if (coords.size() != labels.size()) throw ShapeError("one label per point required");
  std::map<int, int> sizes;
  for (int l : labels) ++sizes[l];
  if (sizes.size() < 2) throw ValidationError("silhouette needs at least two clusters");
  const int n = static_cast<int>(coords.size());
  double total = 0;
  for (int i = 0; i < n; ++i) {
    std::map<int, double> dist;
    for (int j = 0; j < n; ++j) {
      if (j == i) continue;
      dist[labels[j]] += std::hypot(coords[i][0] - coords[j][0], coords[i][1] - coords[j][1]);
    }
    const int own = sizes[labels[i]];
    if (own == 1) continue;  // silhouette of a singleton is 0
    const double a = dist[labels[i]] / (own - 1);
    double b = std::numeric_limits<double>::infinity();
    for (const auto& [l, s] : sizes) {
      if (l != labels[i]) b = std::min(b, dist[l] / s);
    }
    total += (b - a) / std::max(a, b);
  }
  return total / n;
}

}  // namespace occlunet::analysis
