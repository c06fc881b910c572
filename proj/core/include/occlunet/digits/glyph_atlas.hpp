#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace occlunet::digits {

struct Glyph {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major, 0 = background
  // Tight bounding box of nonzero pixels, [x0, x1) x [y0, y1).
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  int box_width() const { return x1 - x0; }
  int box_height() const { return y1 - y0; }
  std::uint8_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
};

/// Ten digit bitmaps of equal nominal height.
class GlyphAtlas {
 public:
  /// The atlas compiled into the library.
  static const GlyphAtlas& embedded();
  /// Loads digit_0.pgm .. digit_9.pgm from a directory.
  static GlyphAtlas load(const std::filesystem::path& dir);

  const Glyph& glyph(int digit) const;

 private:
  std::array<Glyph, 10> glyphs_;
};

/// Parses a binary (P5, maxval 255) portable graymap.
Glyph parse_pgm(std::span<const std::uint8_t> bytes);

}  // namespace occlunet::digits
