#pragma once

// Independent reference implementations used as test oracles. Nothing here
// calls into the library code it is meant to check.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <random>
#include <span>
#include <vector>

#include "occlunet/nn/tensor.hpp"

namespace oracle {

using occlunet::nn::Shape;
using occlunet::nn::Tensor;

inline Tensor<double> random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<double> t(s);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

inline std::vector<double> random_vector(std::size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

inline double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Direct six-loop SAME convolution, zero padding (k-1)/2.
inline Tensor<double> conv2d(const Tensor<double>& x, const Tensor<double>& w, const std::vector<double>& b,
                             int stride) {
  const auto& s = x.shape();
  const auto& k = w.shape();
  const int pad = (k.h - 1) / 2;
  const int oh = (s.h + 2 * pad - k.h) / stride + 1;
  const int ow = (s.w + 2 * pad - k.w) / stride + 1;
  Tensor<double> y(Shape{s.n, k.n, oh, ow});
  for (int n = 0; n < s.n; ++n)
    for (int o = 0; o < k.n; ++o)
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j) {
          double acc = b[o];
          for (int c = 0; c < s.c; ++c)
            for (int u = 0; u < k.h; ++u)
              for (int v = 0; v < k.w; ++v) {
                const int r = i * stride - pad + u, q = j * stride - pad + v;
                if (r >= 0 && r < s.h && q >= 0 && q < s.w) acc += w.at(o, c, u, v) * x.at(n, c, r, q);
              }
          y.at(n, o, i, j) = acc;
        }
  return y;
}

/// Scatter form of the transposed stride-2 convolution (kernel (in, out, k, k)).
inline Tensor<double> transposed_conv2d(const Tensor<double>& x, const Tensor<double>& w,
                                        const std::vector<double>& b) {
  const auto& s = x.shape();
  const auto& k = w.shape();
  const int pad = (k.h - 1) / 2;
  Tensor<double> y(Shape{s.n, k.c, 2 * s.h, 2 * s.w});
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < k.c; ++c)
      for (int i = 0; i < 2 * s.h; ++i)
        for (int j = 0; j < 2 * s.w; ++j) y.at(n, c, i, j) = b[c];
    for (int o = 0; o < k.n; ++o)
      for (int i = 0; i < s.h; ++i)
        for (int j = 0; j < s.w; ++j)
          for (int c = 0; c < k.c; ++c)
            for (int u = 0; u < k.h; ++u)
              for (int v = 0; v < k.w; ++v) {
                const int r = 2 * i - pad + u, q = 2 * j - pad + v;
                if (r >= 0 && r < 2 * s.h && q >= 0 && q < 2 * s.w) y.at(n, c, r, q) += w.at(o, c, u, v) * x.at(n, o, i, j);
              }
  }
  return y;
}

/// Relative error with a small absolute floor so exact zeros compare cleanly.
inline double rel_error(double a, double b, double floor = 1e-6) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Central-difference gradient of f at `x` (modified in place, restored).
inline std::vector<double> numeric_gradient(const std::function<double()>& f, std::span<double> x, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f();
    x[i] = keep - h;
    const double down = f();
    x[i] = keep;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

inline double max_rel_error(std::span<const double> analytic, std::span<const double> numeric, double floor = 1e-4) {
  double worst = 0;
  for (std::size_t i = 0; i < analytic.size(); ++i) worst = std::max(worst, rel_error(analytic[i], numeric[i], floor));
  return worst;
}

/// Mean silhouette coefficient, straight from the definition.
inline double silhouette(const std::vector<std::array<double, 2>>& y, const std::vector<int>& label) {
  const std::size_t n = y.size();
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::map<int, std::pair<double, int>> acc;
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      auto& [sum, count] = acc[label[j]];
      sum += std::sqrt((y[i][0] - y[j][0]) * (y[i][0] - y[j][0]) + (y[i][1] - y[j][1]) * (y[i][1] - y[j][1]));
      ++count;
    }
    if (!acc.count(label[i])) continue;
    const double a = acc[label[i]].first / acc[label[i]].second;
    double b = std::numeric_limits<double>::infinity();
    for (const auto& [l, sc] : acc)
      if (l != label[i]) b = std::min(b, sc.first / sc.second);
    total += (b - a) / std::max(a, b);
  }
  return total / static_cast<double>(n);
}

}  // namespace oracle
