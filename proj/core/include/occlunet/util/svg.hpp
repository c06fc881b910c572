#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <utility>

namespace occlunet::util {

/// Minimal static SVG builder. Coordinates are printed with a fixed number
/// of decimals so identical inputs give byte-identical files.
class Svg {
 public:
  Svg(double width, double height);

  void rect(double x, double y, double w, double h, const std::string& fill,
            const std::string& stroke = "none");
  void line(double x1, double y1, double x2, double y2, const std::string& stroke,
            double stroke_width = 1.0, const std::string& dash = {});
  void polyline(std::span<const std::pair<double, double>> points, const std::string& stroke,
                double stroke_width = 1.0);
  void polygon(std::span<const std::pair<double, double>> points, const std::string& fill,
               double opacity = 1.0);
  void circle(double cx, double cy, double r, const std::string& fill, double opacity = 1.0);
  void text(double x, double y, const std::string& content, double size = 10.0,
            const std::string& anchor = "start");

  std::string str() const;
  void write(const std::filesystem::path& path) const;

 private:
  double width_;
  double height_;
  std::string body_;
};

std::string fixed(double v, int decimals = 3);
std::string escape_xml(const std::string& s);

/// Categorical color for index i (cycled).
const char* palette(std::size_t i);

}  // namespace occlunet::util
