#include "occlunet/analysis/reports.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>

#include "occlunet/util/errors.hpp"
#include "occlunet/util/svg.hpp"

namespace occlunet::analysis {
namespace fs = std::filesystem;

namespace {

std::string num(double v) {
  if (std::isnan(v)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

double quantile(const std::vector<double>& sorted, double q) {
  const double h = (static_cast<double>(sorted.size()) - 1) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace

void write_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

// ---------------------------------------------------------------------------

std::vector<ClassTrajectory> softmax_trajectories(std::span<const train::TrialRecord> records, int time_steps,
                                                  int classes, std::span<const int> class_filter,
                                                  const std::function<void(const std::string&)>& warn) {
  std::vector<int> wanted(class_filter.begin(), class_filter.end());
  if (wanted.empty()) {
    for (int c = 0; c < classes; ++c) wanted.push_back(c);
  }
  for (const auto& r : records) {
    if (r.probs.size() != static_cast<std::size_t>(time_steps) * classes) {
      throw ShapeError("record " + std::to_string(r.index) + " does not hold time_steps x classes probabilities");
    }
  }
  std::vector<ClassTrajectory> out;
  for (int cls : wanted) {
    std::vector<const train::TrialRecord*> bucket;
    for (const auto& r : records) {
      if (r.label == cls) bucket.push_back(&r);
    }
    if (bucket.empty()) {
      if (warn) warn("class " + std::to_string(cls) + " has no samples; skipped");
      continue;
    }
    ClassTrajectory tr;
    tr.cls = cls;
    tr.n = static_cast<int>(bucket.size());
    tr.mean.assign(time_steps, std::vector<double>(classes, 0.0));
    tr.se.assign(time_steps, std::vector<double>(classes, std::nan("")));
    for (int t = 0; t < time_steps; ++t) {
      for (int u = 0; u < classes; ++u) {
        double s = 0;
        for (const auto* r : bucket) s += r->prob(t, u, classes);
        const double mu = s / tr.n;
        tr.mean[t][u] = mu;
        if (tr.n >= 2) {
          double ss = 0;
          for (const auto* r : bucket) ss += (r->prob(t, u, classes) - mu) * (r->prob(t, u, classes) - mu);
          tr.se[t][u] = std::sqrt(ss / (tr.n - 1)) / std::sqrt(static_cast<double>(tr.n));
        }
      }
    }
    out.push_back(std::move(tr));
  }
  return out;
}

std::vector<double> correct_class_curve(std::span<const train::TrialRecord> records, int time_steps, int classes) {
  if (records.empty()) throw ValidationError("no records");
  std::vector<double> curve(time_steps, 0.0);
  for (const auto& r : records) {
    for (int t = 0; t < time_steps; ++t) curve[t] += r.prob(t, r.label, classes);
  }
  for (double& v : curve) v /= static_cast<double>(records.size());
  return curve;
}

std::string trajectories_csv(std::span<const ClassTrajectory> trajectories) {
  std::string out = "class,n,t,unit,mean,se\n";
  for (const auto& tr : trajectories) {
    for (std::size_t t = 0; t < tr.mean.size(); ++t) {
      for (std::size_t u = 0; u < tr.mean[t].size(); ++u) {
        out += std::to_string(tr.cls) + "," + std::to_string(tr.n) + "," + std::to_string(t) + "," +
               std::to_string(u) + "," + num(tr.mean[t][u]) + "," + num(tr.se[t][u]) + "\n";
      }
    }
  }
  return out;
}

std::string trajectories_svg(std::span<const ClassTrajectory> trajectories) {
  const int cols = 5;
  const double pw = 150, ph = 110, pad = 30;
  const int rows = std::max<int>(1, (static_cast<int>(trajectories.size()) + cols - 1) / cols);
  util::Svg svg(cols * (pw + pad) + pad, rows * (ph + pad) + pad);
  for (std::size_t k = 0; k < trajectories.size(); ++k) {
    const auto& tr = trajectories[k];
    const double x0 = pad + static_cast<double>(k % cols) * (pw + pad);
    const double y0 = pad + static_cast<double>(k / cols) * (ph + pad);
    svg.rect(x0, y0, pw, ph, "none", "#000000");
    svg.text(x0 + pw / 2, y0 - 6, "class " + std::to_string(tr.cls) + " (n=" + std::to_string(tr.n) + ")", 9,
             "middle");
    const int steps = static_cast<int>(tr.mean.size());
    const auto px = [&](int t) { return steps > 1 ? x0 + pw * t / (steps - 1) : x0 + pw / 2; };
    const auto py = [&](double v) { return y0 + ph * (1.0 - v); };
    for (std::size_t u = 0; u < (steps ? tr.mean[0].size() : 0); ++u) {
      std::vector<std::pair<double, double>> pts;
      for (int t = 0; t < steps; ++t) pts.emplace_back(px(t), py(tr.mean[t][u]));
      svg.polyline(pts, util::palette(u), static_cast<int>(u) == tr.cls ? 2.0 : 0.8);
      for (int t = 0; t < steps; ++t) {
        if (!std::isnan(tr.se[t][u])) {
          svg.line(px(t), py(tr.mean[t][u] - tr.se[t][u]), px(t), py(tr.mean[t][u] + tr.se[t][u]), util::palette(u));
        }
      }
    }
    for (int t = 0; t < steps; ++t) svg.text(px(t), y0 + ph + 10, "t" + std::to_string(t), 7, "middle");
  }
  return svg.str();
}

// ---------------------------------------------------------------------------

std::vector<std::vector<double>> pooled_activations(std::span<const ActivationRecord> unoccluded,
                                                    std::span<const ActivationRecord> occluded) {
  std::vector<std::vector<double>> out;
  for (auto set : {unoccluded, occluded}) {
    for (const auto& r : set) {
      for (int t = 0; t < r.time_steps; ++t) {
        const auto a = r.activation(t);
        out.emplace_back(a.begin(), a.end());
      }
    }
  }
  return out;
}

TrajectoryExport time_trajectory_export(std::span<const ActivationRecord> unoccluded,
                                        std::span<const ActivationRecord> occluded, const Embedding& embedding) {
  std::size_t expected = 0;
  for (auto set : {unoccluded, occluded}) {
    for (const auto& r : set) {
      if (r.time_steps < 1 || r.activations.size() != static_cast<std::size_t>(r.time_steps) * r.features) {
        throw ValidationError("record " + std::to_string(r.id) + " is missing time steps");
      }
      expected += static_cast<std::size_t>(r.time_steps);
    }
  }
  if (embedding.coords.size() != expected) {
    throw ValidationError("embedding has " + std::to_string(embedding.coords.size()) + " points, expected " +
                          std::to_string(expected) + " (one per stimulus and time step)");
  }
  TrajectoryExport e;
  std::size_t k = 0;
  for (int pass = 0; pass < 2; ++pass) {
    const auto set = pass == 0 ? unoccluded : occluded;
    for (const auto& r : set) {
      std::vector<std::pair<double, double>> line;
      for (int t = 0; t < r.time_steps; ++t, ++k) {
        const auto& c = embedding.coords[k];
        e.points.push_back({r.id, r.label, t, pass == 1, c[0], c[1]});
        line.emplace_back(c[0], c[1]);
      }
      if (pass == 0) e.polylines.push_back(std::move(line));
    }
  }
  return e;
}

std::string trajectory_csv(const TrajectoryExport& e) {
  std::string out = "stimulus,label,t,occluded,x,y\n";
  for (const auto& p : e.points) {
    out += std::to_string(p.stimulus) + "," + std::to_string(p.label) + "," + std::to_string(p.t) + "," +
           (p.occluded ? "1" : "0") + "," + num(p.x) + "," + num(p.y) + "\n";
  }
  return out;
}

std::string trajectory_svg(const TrajectoryExport& e) {
  const double size = 480, pad = 20;
  util::Svg svg(size + 2 * pad, size + 2 * pad);
  if (e.points.empty()) return svg.str();
  double xmin = e.points[0].x, xmax = xmin, ymin = e.points[0].y, ymax = ymin;
  for (const auto& p : e.points) {
    xmin = std::min(xmin, p.x);
    xmax = std::max(xmax, p.x);
    ymin = std::min(ymin, p.y);
    ymax = std::max(ymax, p.y);
  }
  const double span = std::max({xmax - xmin, ymax - ymin, 1e-12});
  const auto px = [&](double x) { return pad + size * (x - xmin) / span; };
  const auto py = [&](double y) { return pad + size * (1.0 - (y - ymin) / span); };
  for (const auto& p : e.points) {
    if (p.occluded) svg.circle(px(p.x), py(p.y), 2.0, util::palette(static_cast<std::size_t>(std::max(p.label, 0))), 0.5);
  }
  for (const auto& line : e.polylines) {
    std::vector<std::pair<double, double>> pts;
    for (const auto& [x, y] : line) pts.emplace_back(px(x), py(y));
    svg.polyline(pts, "#000000", 1.0);
  }
  for (const auto& p : e.points) {
    if (!p.occluded) svg.circle(px(p.x), py(p.y), 2.5, util::palette(static_cast<std::size_t>(std::max(p.label, 0))));
  }
  return svg.str();
}

// ---------------------------------------------------------------------------

std::vector<DistanceSummary> summarize_distances(std::span<const RelativeDistanceRecord> records) {
  std::map<std::pair<int, int>, std::vector<double>> groups;
  for (const auto& r : records) {
    if (r.valid) groups[{r.occluder, r.t}].push_back(r.r);
  }
  std::vector<DistanceSummary> out;
  for (auto& [key, v] : groups) {
    std::sort(v.begin(), v.end());
    DistanceSummary s;
    s.occluder = key.first;
    s.t = key.second;
    s.n = static_cast<int>(v.size());
    double sum = 0;
    for (double x : v) sum += x;
    s.mean = sum / s.n;
    s.min = v.front();
    s.max = v.back();
    s.q05 = quantile(v, 0.05);
    s.q25 = quantile(v, 0.25);
    s.median = quantile(v, 0.5);
    s.q75 = quantile(v, 0.75);
    s.q95 = quantile(v, 0.95);
    out.push_back(s);
  }
  return out;
}

std::string distances_csv(std::span<const RelativeDistanceRecord> records) {
  std::string out = "stimulus,occluder,t,r,valid\n";
  for (const auto& r : records) {
    out += std::to_string(r.id) + "," + std::to_string(r.occluder + 1) + "," + std::to_string(r.t) + "," + num(r.r) +
           "," + (r.valid ? "1" : "0") + "\n";
  }
  return out;
}

std::string violin_csv(std::span<const DistanceSummary> summary) {
  std::string out = "occluder,t,n,mean,min,q05,q25,median,q75,q95,max\n";
  for (const auto& s : summary) {
    out += std::to_string(s.occluder + 1) + "," + std::to_string(s.t) + "," + std::to_string(s.n) + "," + num(s.mean) +
           "," + num(s.min) + "," + num(s.q05) + "," + num(s.q25) + "," + num(s.median) + "," + num(s.q75) + "," +
           num(s.q95) + "," + num(s.max) + "\n";
  }
  return out;
}

std::string violin_svg(std::span<const RelativeDistanceRecord> records) {
  std::map<std::pair<int, int>, std::vector<double>> groups;
  double vmax = 1.0;
  for (const auto& r : records) {
    if (!r.valid) continue;
    groups[{r.occluder, r.t}].push_back(r.r);
  }
  // Clip the axis at the 99th percentile so a few outliers do not flatten the plot.
  std::vector<double> all;
  for (const auto& [k, v] : groups) all.insert(all.end(), v.begin(), v.end());
  if (!all.empty()) {
    std::sort(all.begin(), all.end());
    vmax = std::max(1.0, quantile(all, 0.99)) * 1.05;
  }
  const double slot = 60, left = 50, top = 20, ph = 260;
  util::Svg svg(left + std::max<std::size_t>(groups.size(), 1) * slot + 20, top + ph + 50);
  const auto py = [&](double v) { return top + ph * (1.0 - std::min(v, vmax) / vmax); };
  svg.line(left, top, left, top + ph, "#000000");
  for (int i = 0; i <= 4; ++i) svg.text(left - 4, py(vmax * i / 4) + 3, util::fixed(vmax * i / 4, 2), 9, "end");
  svg.line(left, py(1.0), left + groups.size() * slot, py(1.0), "#999999", 0.5);

  std::map<int, double> t0_mean;
  for (const auto& [key, v] : groups) {
    if (key.second == 0) {
      double s = 0;
      for (double x : v) s += x;
      t0_mean[key.first] = s / static_cast<double>(v.size());
    }
  }
  std::size_t slot_index = 0;
  int current = -1;
  double group_start = left;
  for (const auto& [key, v] : groups) {
    const double cx = left + (slot_index + 0.5) * slot;
    if (key.first != current) {
      if (current >= 0 && t0_mean.count(current)) {
        svg.line(group_start, py(t0_mean[current]), left + slot_index * slot, py(t0_mean[current]), "#000000", 1.0,
                 "4,3");
      }
      current = key.first;
      group_start = left + slot_index * slot;
    }
    // Gaussian KDE, Silverman bandwidth.
    const double n = static_cast<double>(v.size());
    double mu = 0, var = 0;
    for (double x : v) mu += x;
    mu /= n;
    for (double x : v) var += (x - mu) * (x - mu);
    const double sd = n > 1 ? std::sqrt(var / (n - 1)) : 0.0;
    const double bw = std::max(1.06 * sd * std::pow(n, -0.2), 1e-3 * vmax);
    constexpr int kGrid = 48;
    std::vector<double> dens(kGrid);
    double dmax = 0;
    for (int g = 0; g < kGrid; ++g) {
      const double y = vmax * g / (kGrid - 1);
      double d = 0;
      for (double x : v) d += std::exp(-0.5 * ((y - x) / bw) * ((y - x) / bw));
      dens[g] = d;
      dmax = std::max(dmax, d);
    }
    std::vector<std::pair<double, double>> poly;
    for (int g = 0; g < kGrid; ++g) poly.emplace_back(cx + 0.45 * slot * dens[g] / dmax, py(vmax * g / (kGrid - 1)));
    for (int g = kGrid - 1; g >= 0; --g) poly.emplace_back(cx - 0.45 * slot * dens[g] / dmax, py(vmax * g / (kGrid - 1)));
    svg.polygon(poly, util::palette(static_cast<std::size_t>(key.first)), 0.6);
    svg.circle(cx, py(mu), 2.5, "#000000");
    svg.text(cx, top + ph + 14, "t" + std::to_string(key.second), 9, "middle");
    svg.text(cx, top + ph + 28, "occ " + std::to_string(key.first + 1), 8, "middle");
    ++slot_index;
  }
  if (current >= 0 && t0_mean.count(current)) {
    svg.line(group_start, py(t0_mean[current]), left + slot_index * slot, py(t0_mean[current]), "#000000", 1.0, "4,3");
  }
  return svg.str();
}

std::string activations_csv(std::span<const ActivationRecord> records) {
  std::string out = "stimulus,label,t";
  const int features = records.empty() ? 0 : records[0].features;
  for (int f = 0; f < features; ++f) out += ",a" + std::to_string(f);
  out += "\n";
  for (const auto& r : records) {
    for (int t = 0; t < r.time_steps; ++t) {
      out += std::to_string(r.id) + "," + std::to_string(r.label) + "," + std::to_string(t);
      for (float a : r.activation(t)) out += "," + num(a);
      out += "\n";
    }
  }
  return out;
}

}  // namespace occlunet::analysis
