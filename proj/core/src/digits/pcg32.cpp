#include "occlunet/digits/pcg32.hpp"

namespace occlunet::digits {

Pcg32::Pcg32(std::uint64_t init_state, std::uint64_t init_seq) {
  state_ = 0;
  inc_ = (init_seq << 1u) | 1u;
  next();
  state_ += init_state;
  next();
}

std::uint32_t Pcg32::next() {
  const std::uint64_t old = state_;
  state_ = old * 6364136223846793005ULL + inc_;
  const auto xorshifted = static_cast<std::uint32_t>(((old >> 18u) ^ old) >> 27u);
  const auto rot = static_cast<std::uint32_t>(old >> 59u);
  return (xorshifted >> rot) | (xorshifted << ((32u - rot) & 31u));
}

std::uint32_t Pcg32::bounded(std::uint32_t bound) {
  const std::uint32_t threshold = (0u - bound) % bound;
  for (;;) {
    const std::uint32_t r = next();
    if (r >= threshold) return r % bound;
  }
}

double Pcg32::uniform() { return static_cast<double>(next()) * 0x1.0p-32; }

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_sample_seed(std::uint64_t dataset_seed, std::uint32_t split, std::uint64_t index) {
  std::uint64_t h = splitmix64(dataset_seed);
  h = splitmix64(h ^ split);
  return splitmix64(h ^ index);
}

}  // namespace occlunet::digits
