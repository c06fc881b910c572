#include "occlunet/digits/rig.hpp"

#include "occlunet/util/errors.hpp"

namespace occlunet::digits {

void CameraRig::validate() const {
  if (!(interocular > 0)) throw ConfigError("rig: interocular distance must be positive");
  if (!(target_depth > 4 * depth_step) || !(depth_step > 0)) {
    throw ConfigError("rig: target depth must exceed the nearest occluder depth");
  }
  if (!(canvas_world_width > 0) || !(digit_height > 0)) throw ConfigError("rig: non-positive size");
  if (render_resolution <= 0 || output_resolution <= 0 || render_resolution % output_resolution != 0) {
    throw ConfigError("rig: render resolution must be a multiple of the output resolution");
  }
  if (channels != 1 && channels != 2) throw ConfigError("rig: channels must be 1 or 2");
  if (!(x_range_fraction > 0 && x_range_fraction <= 1)) throw ConfigError("rig: x range fraction");
}

double CameraRig::focal_px() const { return render_resolution * target_depth / canvas_world_width; }

double CameraRig::eye_x(Eye eye) const {
  switch (eye) {
    case Eye::left: return -interocular / 2;
    case Eye::right: return interocular / 2;
    case Eye::cyclopean: return 0.0;
  }
  return 0.0;
}

std::vector<Eye> CameraRig::eyes() const {
  if (channels == 1) return {Eye::cyclopean};
  return {Eye::left, Eye::right};
}

ProjectedDigit project_digit(const CameraRig& rig, Eye eye, double depth, double x_offset, bool is_target) {
  if (!(depth > 0)) throw GeometryError("project_digit: depth must be positive");
  const double f = rig.focal_px();
  const double half = rig.render_resolution / 2.0;
  const double xe = rig.eye_x(eye);
  ProjectedDigit p;
  p.height = rig.digit_height / (rig.canvas_world_width * depth / rig.target_depth) * rig.render_resolution;
  // Written so that points in the target plane project identically for
  // both eyes of a converged rig.
  if (rig.converged) {
    p.center_x = half + f * x_offset / depth + f * xe * (1.0 / rig.target_depth - 1.0 / depth);
  } else {
    p.center_x = half + f * (x_offset - xe) / depth;
  }
  if (is_target) {
    p.top = half - p.height / 2;
  } else {
    p.top = half + f * rig.floor_drop / depth - p.height;
  }
  return p;
}

double occluder_x_range(const CameraRig& rig, double depth) {
  return rig.x_range_fraction / 2 * rig.render_resolution * depth / rig.focal_px();
}

}  // namespace occlunet::digits
