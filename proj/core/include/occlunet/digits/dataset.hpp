#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <ranges>
#include <span>
#include <string>
#include <vector>

#include "occlunet/digits/scene.hpp"
#include "occlunet/nn/tensor.hpp"
#include "occlunet/util/keyvalue.hpp"

namespace occlunet::digits {

inline constexpr std::uint16_t kDatasetFormatVersion = 1;

enum class SplitKind : std::uint32_t { train = 0, test = 1 };

std::string split_name(SplitKind split);

/// Parameters that fully determine a generated dataset.
struct DatasetSpec {
  CameraRig rig;
  /// "2", "3", "4" or "all" (equal consecutive shares of 2/3/4 occluders).
  std::string occluders = "3";
  int train_count = 100000;
  int test_count = 10000;
  std::uint64_t seed = 1;
  OcclusionSide side = OcclusionSide::both;

  void validate() const;
  /// Occluder count of sample `index` in a split of `count` samples.
  int occluder_count_for(int index, int count) const;
};

/// Contents of manifest.txt written next to the image files.
struct DatasetManifest {
  DatasetSpec spec;
  std::uint16_t format_version = kDatasetFormatVersion;
  std::string train_sha256;
  std::string test_sha256;
  std::string train_csv_sha256;
  std::string test_csv_sha256;
  std::array<int, 10> train_label_histogram{};
  std::array<int, 10> test_label_histogram{};

  util::KeyValue to_keyvalue() const;
  static DatasetManifest from_keyvalue(const util::KeyValue& kv);
};

util::KeyValue rig_to_keyvalue(const CameraRig& rig);
CameraRig rig_from_keyvalue(const util::KeyValue& kv);

/// Generates one sample deterministically from (spec, split, index).
SceneSpec generate_scene(const DatasetSpec& spec, SplitKind split, int index);

/// Writes train.sdig/train.csv/test.sdig/test.csv/manifest.txt into
/// `out_dir`. Partially written files are removed on failure.
DatasetManifest generate_dataset(const DatasetSpec& spec, const std::filesystem::path& out_dir);

/// One sample viewed inside a loaded split.
struct StereoSample {
  std::span<const std::uint8_t> image;  // channels x rows x columns
  int label;
  const SceneSpec* scene;
};

/// A split loaded into memory after checksum validation.
class Dataset {
 public:
  Dataset() = default;
  Dataset(DatasetManifest manifest, SplitKind split, int height, int width, int channels,
          std::vector<std::uint8_t> images, std::vector<SceneSpec> scenes);

  int size() const { return static_cast<int>(scenes_.size()); }
  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  std::size_t image_size() const { return static_cast<std::size_t>(height_) * width_ * channels_; }
  SplitKind split() const { return split_; }
  const DatasetManifest& manifest() const { return manifest_; }

  StereoSample sample(int i) const;
  int label(int i) const { return scenes_[i].target_class; }
  const SceneSpec& scene(int i) const { return scenes_[i]; }
  std::span<const std::uint8_t> images() const { return images_; }

  /// Samples in stored order.
  auto samples() const {
    return std::views::iota(0, size()) | std::views::transform([this](int i) { return sample(i); });
  }

  /// Batch of images normalized to [0, 1], shaped (n, channels, rows, columns).
  nn::Tensor<float> to_tensor(std::span<const int> indices) const;
  std::vector<int> labels(std::span<const int> indices) const;
  std::array<int, 10> label_histogram() const;

 private:
  DatasetManifest manifest_;
  SplitKind split_ = SplitKind::train;
  int height_ = 0, width_ = 0, channels_ = 0;
  std::vector<std::uint8_t> images_;
  std::vector<SceneSpec> scenes_;
};

/// Throws CorruptionError on checksum mismatch or truncation.
Dataset read_dataset(const std::filesystem::path& dir, SplitKind split);

/// Raw image file I/O (magic "SDIG", u16 version, u32 count, u8 height,
/// u8 width, u8 channels, then row-major u8 images; little-endian).
void write_image_file(const std::filesystem::path& path, int height, int width, int channels,
                      std::span<const std::uint8_t> images);

struct ImageFile {
  int count = 0, height = 0, width = 0, channels = 0;
  std::vector<std::uint8_t> images;
};
ImageFile read_image_file(const std::filesystem::path& path);

}  // namespace occlunet::digits
