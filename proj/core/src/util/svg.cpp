#include "occlunet/util/svg.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "occlunet/util/errors.hpp"

namespace occlunet::util {

std::string fixed(double v, int decimals) {
  if (!std::isfinite(v)) return "0";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  std::string s(buf);
  if (s == "-0" || s.find_first_not_of("-0.") == std::string::npos) {
    // normalise negative zero
    if (s.front() == '-') s.erase(0, 1);
  }
  return s;
}

std::string escape_xml(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

const char* palette(std::size_t i) {
  static constexpr std::array<const char*, 10> kColors = {
      "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
      "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
  return kColors[i % kColors.size()];
}

Svg::Svg(double width, double height) : width_(width), height_(height) {}

void Svg::rect(double x, double y, double w, double h, const std::string& fill,
               const std::string& stroke) {
  body_ += "<rect x=\"" + fixed(x) + "\" y=\"" + fixed(y) + "\" width=\"" + fixed(w) +
           "\" height=\"" + fixed(h) + "\" fill=\"" + fill + "\" stroke=\"" + stroke + "\"/>\n";
}

void Svg::line(double x1, double y1, double x2, double y2, const std::string& stroke,
               double stroke_width, const std::string& dash) {
  body_ += "<line x1=\"" + fixed(x1) + "\" y1=\"" + fixed(y1) + "\" x2=\"" + fixed(x2) +
           "\" y2=\"" + fixed(y2) + "\" stroke=\"" + stroke + "\" stroke-width=\"" +
           fixed(stroke_width) + "\"";
  if (!dash.empty()) body_ += " stroke-dasharray=\"" + dash + "\"";
  body_ += "/>\n";
}

void Svg::polyline(std::span<const std::pair<double, double>> points, const std::string& stroke,
                   double stroke_width) {
  body_ += "<polyline fill=\"none\" stroke=\"" + stroke + "\" stroke-width=\"" +
           fixed(stroke_width) + "\" points=\"";
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (i) body_ += ' ';
    body_ += fixed(points[i].first) + "," + fixed(points[i].second);
  }
  body_ += "\"/>\n";
}

void Svg::polygon(std::span<const std::pair<double, double>> points, const std::string& fill,
                  double opacity) {
  body_ += "<polygon fill=\"" + fill + "\" fill-opacity=\"" + fixed(opacity) + "\" points=\"";
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (i) body_ += ' ';
    body_ += fixed(points[i].first) + "," + fixed(points[i].second);
  }
  body_ += "\"/>\n";
}

void Svg::circle(double cx, double cy, double r, const std::string& fill, double opacity) {
  body_ += "<circle cx=\"" + fixed(cx) + "\" cy=\"" + fixed(cy) + "\" r=\"" + fixed(r) +
           "\" fill=\"" + fill + "\" fill-opacity=\"" + fixed(opacity) + "\"/>\n";
}

void Svg::text(double x, double y, const std::string& content, double size,
               const std::string& anchor) {
  body_ += "<text x=\"" + fixed(x) + "\" y=\"" + fixed(y) + "\" font-size=\"" + fixed(size, 1) +
           "\" font-family=\"sans-serif\" text-anchor=\"" + anchor + "\">" +
           escape_xml(content) + "</text>\n";
}

std::string Svg::str() const {
  return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fixed(width_, 0) +
         "\" height=\"" + fixed(height_, 0) + "\" viewBox=\"0 0 " + fixed(width_, 0) + " " +
         fixed(height_, 0) + "\">\n<rect x=\"0\" y=\"0\" width=\"100%\" height=\"100%\" fill=\"white\"/>\n" +
         body_ + "</svg>\n";
}

void Svg::write(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << str();
}

}  // namespace occlunet::util
