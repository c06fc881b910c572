#pragma once

#include <cstdint>

namespace occlunet::digits {

/// PCG32 (XSH-RR, 64-bit state, 32-bit output) with the reference
/// pcg32_srandom_r seeding procedure, so streams are bit-exact with the
/// reference C implementation.
class Pcg32 {
 public:
  Pcg32(std::uint64_t init_state, std::uint64_t init_seq);

  std::uint32_t next();
  /// Uniform integer in [0, bound) by rejection (pcg32_boundedrand_r).
  std::uint32_t bounded(std::uint32_t bound);
  /// Uniform real in [0, 1): next() * 2^-32.
  double uniform();

 private:
  std::uint64_t state_ = 0;
  std::uint64_t inc_ = 0;
};

/// SplitMix64 finalizer; used to derive independent per-sample seeds.
std::uint64_t splitmix64(std::uint64_t x);

/// Seed of sample `index` in `split` (0 = train, 1 = test) of a dataset.
std::uint64_t derive_sample_seed(std::uint64_t dataset_seed, std::uint32_t split, std::uint64_t index);

}  // namespace occlunet::digits
