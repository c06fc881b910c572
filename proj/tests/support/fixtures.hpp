#pragma once

#include <filesystem>
#include <string>

#include "occlunet/digits/dataset.hpp"

namespace oracle {

/// Generates a small dataset into `dir` and returns the directory.
inline std::filesystem::path make_dataset(const std::filesystem::path& dir, int train, int test,
                                          std::uint64_t seed = 1, int channels = 1,
                                          const std::string& occluders = "2") {
  occlunet::digits::DatasetSpec spec;
  spec.train_count = train;
  spec.test_count = test;
  spec.seed = seed;
  spec.rig.channels = channels;
  spec.occluders = occluders;
  occlunet::digits::generate_dataset(spec, dir);
  return dir;
}

}  // namespace oracle
