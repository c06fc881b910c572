#include "occlunet/digits/scene.hpp"

#include <algorithm>
#include <cmath>

#include "occlunet/util/errors.hpp"

namespace occlunet::digits {

SceneSpec sample_scene(Pcg32& rng, int occluder_count, const CameraRig& rig, OcclusionSide side,
                       std::uint64_t seed) {
  if (occluder_count < 2 || occluder_count > 4) {
    throw ConfigError("occluder count must be 2, 3 or 4, got " + std::to_string(occluder_count));
  }
  SceneSpec s;
  s.seed = seed;
  s.target_class = static_cast<int>(rng.bounded(10));
  for (int i = 1; i <= occluder_count; ++i) {
    Occluder o;
    o.digit = static_cast<int>(rng.bounded(10));
    o.depth = rig.target_depth - rig.depth_step * i;
    const double range = occluder_x_range(rig, o.depth);
    const double u = rng.uniform();
    o.x_offset = side == OcclusionSide::left ? -range * (1.0 - u) : range * (2.0 * u - 1.0);
    s.occluders.push_back(o);
  }
  return s;
}

std::vector<DigitInstance> scene_digits(const SceneSpec& scene, const CameraRig& rig) {
  std::vector<DigitInstance> out;
  out.push_back({scene.target_class, rig.target_depth, 0.0, true});
  for (const auto& o : scene.occluders) out.push_back({o.digit, o.depth, o.x_offset, false});
  return out;
}

void paint_digit(GrayImage& canvas, const DigitInstance& digit, const CameraRig& rig,
                 const GlyphAtlas& atlas, Eye eye) {
  const Glyph& g = atlas.glyph(digit.digit);
  const auto p = project_digit(rig, eye, digit.depth, digit.x_offset, digit.is_target);
  const double bw = g.box_width(), bh = g.box_height();
  const double width = p.height * bw / bh;
  const double left = p.center_x - width / 2;

  const int x_begin = std::max(0, static_cast<int>(std::floor(left)));
  const int x_end = std::min(canvas.width, static_cast<int>(std::ceil(left + width)));
  const int y_begin = std::max(0, static_cast<int>(std::floor(p.top)));
  const int y_end = std::min(canvas.height, static_cast<int>(std::ceil(p.bottom())));

  auto texel = [&](int x, int y) -> double {
    if (x < 0 || y < 0 || x >= g.box_width() || y >= g.box_height()) return 0.0;
    return g.at(g.x0 + x, g.y0 + y);
  };

  for (int py = y_begin; py < y_end; ++py) {
    const double gy = (py + 0.5 - p.top) / p.height * bh - 0.5;
    const double fy = std::floor(gy);
    const double wy = gy - fy;
    const int iy = static_cast<int>(fy);
    for (int px = x_begin; px < x_end; ++px) {
      const double gx = (px + 0.5 - left) / width * bw - 0.5;
      const double fx = std::floor(gx);
      const double wx = gx - fx;
      const int ix = static_cast<int>(fx);
      const double v = (1 - wy) * ((1 - wx) * texel(ix, iy) + wx * texel(ix + 1, iy)) +
                       wy * ((1 - wx) * texel(ix, iy + 1) + wx * texel(ix + 1, iy + 1));
      const auto value = static_cast<std::uint8_t>(std::min(255.0, std::floor(v + 0.5)));
      auto& dst = canvas.at(px, py);
      dst = std::max(dst, value);
    }
  }
}

GrayImage rasterize_digits(std::span<const DigitInstance> digits, const CameraRig& rig,
                           const GlyphAtlas& atlas, Eye eye) {
  GrayImage canvas(rig.render_resolution, rig.render_resolution);
  for (const auto& d : digits) paint_digit(canvas, d, rig, atlas, eye);
  return canvas;
}

GrayImage rasterize_scene(const SceneSpec& scene, const CameraRig& rig, const GlyphAtlas& atlas, Eye eye) {
  const auto digits = scene_digits(scene, rig);
  return rasterize_digits(digits, rig, atlas, eye);
}

GrayImage downsample(const GrayImage& image, int factor) {
  if (factor <= 0 || image.width % factor != 0 || image.height % factor != 0) {
    throw ShapeError("downsample: image not divisible into blocks of " + std::to_string(factor));
  }
  GrayImage out(image.width / factor, image.height / factor);
  const unsigned area = static_cast<unsigned>(factor * factor);
  for (int oy = 0; oy < out.height; ++oy) {
    for (int ox = 0; ox < out.width; ++ox) {
      unsigned sum = 0;
      for (int y = oy * factor; y < (oy + 1) * factor; ++y) {
        for (int x = ox * factor; x < (ox + 1) * factor; ++x) sum += image.at(x, y);
      }
      out.at(ox, oy) = static_cast<std::uint8_t>((2 * sum + area) / (2 * area));
    }
  }
  return out;
}

std::vector<std::uint8_t> render_digits(std::span<const DigitInstance> digits, const CameraRig& rig,
                                        const GlyphAtlas& atlas) {
  std::vector<std::uint8_t> out;
  out.reserve(static_cast<std::size_t>(rig.channels) * rig.output_resolution * rig.output_resolution);
  for (Eye eye : rig.eyes()) {
    const auto small = downsample(rasterize_digits(digits, rig, atlas, eye), rig.downsample_factor());
    out.insert(out.end(), small.pixels.begin(), small.pixels.end());
  }
  return out;
}

std::vector<std::uint8_t> render_scene(const SceneSpec& scene, const CameraRig& rig, const GlyphAtlas& atlas) {
  const auto digits = scene_digits(scene, rig);
  return render_digits(digits, rig, atlas);
}

}  // namespace occlunet::digits
