#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "occlunet/digits/glyph_atlas.hpp"
#include "occlunet/digits/pcg32.hpp"
#include "occlunet/digits/rig.hpp"

namespace occlunet::digits {

struct Occluder {
  int digit = 0;
  double depth = 0;
  double x_offset = 0;

  friend bool operator==(const Occluder&, const Occluder&) = default;
};

/// One generated scene: the target digit at rig.target_depth plus occluders
/// ordered back to front (occluder i at target_depth - i * depth_step).
struct SceneSpec {
  int target_class = 0;
  std::vector<Occluder> occluders;
  std::uint64_t seed = 0;

  friend bool operator==(const SceneSpec&, const SceneSpec&) = default;
};

/// Restricts which side of the target occluders may appear on.
enum class OcclusionSide { both, left };

/// Draws a scene from `rng`: target and occluder classes uniform over 0-9,
/// x offsets uniform over [-X, X] (or [-X, 0) for OcclusionSide::left).
SceneSpec sample_scene(Pcg32& rng, int occluder_count, const CameraRig& rig,
                       OcclusionSide side = OcclusionSide::both, std::uint64_t seed = 0);

/// A digit placed in the world.
struct DigitInstance {
  int digit = 0;
  double depth = 0;
  double x_offset = 0;
  bool is_target = false;
};

/// Target followed by the occluders, in painting order.
std::vector<DigitInstance> scene_digits(const SceneSpec& scene, const CameraRig& rig);

struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  GrayImage() = default;
  GrayImage(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, 0) {}
  std::uint8_t& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
};

/// Paints one digit into `canvas` (bilinear glyph scaling, composited with
/// pixelwise max since every digit has the same color).
void paint_digit(GrayImage& canvas, const DigitInstance& digit, const CameraRig& rig,
                 const GlyphAtlas& atlas, Eye eye);

/// Full-resolution render of an arbitrary set of digits.
GrayImage rasterize_digits(std::span<const DigitInstance> digits, const CameraRig& rig,
                           const GlyphAtlas& atlas, Eye eye);

GrayImage rasterize_scene(const SceneSpec& scene, const CameraRig& rig, const GlyphAtlas& atlas, Eye eye);

/// Box filter by an integer factor, mean rounded half up.
GrayImage downsample(const GrayImage& image, int factor);

/// Network-resolution image, channel-planar (channels x rows x columns).
std::vector<std::uint8_t> render_digits(std::span<const DigitInstance> digits, const CameraRig& rig,
                                        const GlyphAtlas& atlas);
std::vector<std::uint8_t> render_scene(const SceneSpec& scene, const CameraRig& rig, const GlyphAtlas& atlas);

}  // namespace occlunet::digits
