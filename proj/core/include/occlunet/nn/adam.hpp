#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace occlunet::nn {

/// Adam optimizer state. Moments are allocated (zeroed) on the first step
/// and must keep matching the parameter layout afterwards.
template <typename T>
struct AdamState {
  double eta = 0.003;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step_count = 0;
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;
};

/// One bias-corrected Adam update over a list of parameter blocks.
template <typename T>
void adam_step(const std::vector<std::span<T>>& params, const std::vector<std::span<const T>>& grads,
               AdamState<T>& state);

}  // namespace occlunet::nn
