#include "occlunet/digits/glyph_atlas.hpp"

#include <cctype>
#include <fstream>
#include <iterator>
#include <string>

#include "occlunet/util/errors.hpp"

namespace occlunet::digits {
namespace detail {
std::span<const std::uint8_t> embedded_glyph(int digit);
}

namespace {

void compute_box(Glyph& g) {
  g.x0 = g.width;
  g.y0 = g.height;
  g.x1 = 0;
  g.y1 = 0;
  for (int y = 0; y < g.height; ++y) {
    for (int x = 0; x < g.width; ++x) {
      if (g.at(x, y) == 0) continue;
      g.x0 = std::min(g.x0, x);
      g.y0 = std::min(g.y0, y);
      g.x1 = std::max(g.x1, x + 1);
      g.y1 = std::max(g.y1, y + 1);
    }
  }
  if (g.x1 <= g.x0 || g.y1 <= g.y0) throw AssetError("glyph is empty");
}

}  // namespace

Glyph parse_pgm(std::span<const std::uint8_t> bytes) {
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&] {
    skip_space();
    int v = 0;
    bool any = false;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos++] - '0');
      any = true;
    }
    if (!any) throw AssetError("pgm: malformed header");
    return v;
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw AssetError("pgm: expected P5 magic");
  pos = 2;
  Glyph g;
  g.width = read_int();
  g.height = read_int();
  const int maxval = read_int();
  if (maxval != 255) throw AssetError("pgm: only maxval 255 is supported");
  ++pos;  // single whitespace before the raster
  const std::size_t n = static_cast<std::size_t>(g.width) * g.height;
  if (g.width <= 0 || g.height <= 0 || pos + n > bytes.size()) throw AssetError("pgm: truncated raster");
  g.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
  compute_box(g);
  return g;
}

const GlyphAtlas& GlyphAtlas::embedded() {
  static const GlyphAtlas atlas = [] {
    GlyphAtlas a;
    for (int d = 0; d < 10; ++d) {
      auto bytes = detail::embedded_glyph(d);
      if (bytes.empty()) throw AssetError("embedded glyph " + std::to_string(d) + " missing");
      a.glyphs_[d] = parse_pgm(bytes);
    }
    return a;
  }();
  return atlas;
}

GlyphAtlas GlyphAtlas::load(const std::filesystem::path& dir) {
  GlyphAtlas a;
  for (int d = 0; d < 10; ++d) {
    const auto path = dir / ("digit_" + std::to_string(d) + ".pgm");
    std::ifstream in(path, std::ios::binary);
    if (!in) throw AssetError("glyph missing: " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    a.glyphs_[d] = parse_pgm(bytes);
  }
  return a;
}

const Glyph& GlyphAtlas::glyph(int digit) const {
  if (digit < 0 || digit > 9) throw AssetError("no glyph for digit " + std::to_string(digit));
  return glyphs_[digit];
}

}  // namespace occlunet::digits
