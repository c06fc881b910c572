#include "occlunet/nn/adam.hpp"

#include <cmath>

#include "occlunet/util/errors.hpp"

namespace occlunet::nn {

template <typename T>
void adam_step(const std::vector<std::span<T>>& params, const std::vector<std::span<const T>>& grads,
               AdamState<T>& state) {
  if (params.size() != grads.size()) throw ShapeError("adam_step: parameter/gradient block count");
  if (state.first_moment.empty() && state.step_count == 0) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.size(), T(0));
      state.second_moment.emplace_back(p.size(), T(0));
    }
  }
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size()) {
    throw ShapeError("adam_step: optimizer state has a different number of blocks");
  }
  for (std::size_t b = 0; b < params.size(); ++b) {
    if (params[b].size() != grads[b].size() || state.first_moment[b].size() != params[b].size() ||
        state.second_moment[b].size() != params[b].size()) {
      throw ShapeError("adam_step: block " + std::to_string(b) + " size mismatch");
    }
  }

  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  const T b1 = static_cast<T>(state.beta1), b2 = static_cast<T>(state.beta2);
  for (std::size_t b = 0; b < params.size(); ++b) {
    auto& m = state.first_moment[b];
    auto& v = state.second_moment[b];
    for (std::size_t i = 0; i < params[b].size(); ++i) {
      const T g = grads[b][i];
      m[i] = b1 * m[i] + (T(1) - b1) * g;
      v[i] = b2 * v[i] + (T(1) - b2) * g * g;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      params[b][i] -= static_cast<T>(state.eta * mhat / (std::sqrt(vhat) + state.eps));
    }
  }
}

template void adam_step<float>(const std::vector<std::span<float>>&,
                               const std::vector<std::span<const float>>&, AdamState<float>&);
template void adam_step<double>(const std::vector<std::span<double>>&,
                                const std::vector<std::span<const double>>&, AdamState<double>&);

}  // namespace occlunet::nn
