#pragma once

#include <vector>

namespace occlunet::digits {

enum class Eye { left, right, cyclopean };

/// Pinhole stereo rig looking at a fronto-parallel scene. Distances in cm,
/// image coordinates in render pixels with the origin at the top-left
/// corner and y pointing down.
struct CameraRig {
  double interocular = 6.8;
  double target_depth = 50.0;
  /// Horizontal extent of the canvas, measured in the target plane.
  double canvas_world_width = 40.0;
  int render_resolution = 512;
  int output_resolution = 32;
  /// 1 renders the cyclopean eye, 2 renders (left, right).
  int channels = 1;
  /// Converged rig (horizontal sensor shift, zero disparity at the target
  /// plane) or parallel optical axes.
  bool converged = true;
  double digit_height = 20.0;
  /// Occluders stand on a floor this far below eye level.
  double floor_drop = 5.0;
  /// Occluder i (1-based) is placed at target_depth - i * depth_step.
  double depth_step = 10.0;
  /// Occluder centers project into this central fraction of the width.
  double x_range_fraction = 0.8;

  void validate() const;
  double focal_px() const;
  double eye_x(Eye eye) const;
  std::vector<Eye> eyes() const;
  int downsample_factor() const { return render_resolution / output_resolution; }
};

/// Pixel-space placement of one digit.
struct ProjectedDigit {
  double center_x = 0;
  double top = 0;
  double height = 0;
  double bottom() const { return top + height; }
};

/// Projects a digit of world height rig.digit_height standing at `depth`
/// with horizontal world offset `x_offset`. The target is vertically
/// centered at eye level; other digits stand on the floor.
ProjectedDigit project_digit(const CameraRig& rig, Eye eye, double depth, double x_offset, bool is_target);

/// Half-width of the uniform x-offset interval for an occluder at `depth`.
double occluder_x_range(const CameraRig& rig, double depth);

}  // namespace occlunet::digits
