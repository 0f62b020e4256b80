#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "terrasafe/grid.hpp"
#include "terrasafe/labeling.hpp"

namespace terrasafe {

/// 2.5D terrain model. Cell (i, j) covers
/// [x0 + i*cell, x0 + (i+1)*cell) x [y0 + j*cell, y0 + (j+1)*cell).
class HeightField {
 public:
  HeightField() = default;
  HeightField(double x0, double y0, double cell, int nx, int ny);

  double x0() const noexcept { return x0_; }
  double y0() const noexcept { return y0_; }
  double cell() const noexcept { return cell_; }
  int nx() const noexcept { return nx_; }
  int ny() const noexcept { return ny_; }

  bool in_bounds(int i, int j) const noexcept { return i >= 0 && j >= 0 && i < nx_ && j < ny_; }
  bool valid(int i, int j) const noexcept { return in_bounds(i, j) && valid_(i, j) != 0; }

  double elevation(int i, int j) const noexcept { return elevation_(i, j); }
  float gray(int i, int j) const noexcept { return gray_(i, j); }
  float safety(int i, int j) const noexcept { return safety_(i, j); }

  void set_cell(int i, int j, double elevation, float gray, float safety);
  void invalidate(int i, int j);

  // Index of the cell containing (x, y); may be out of bounds.
  std::pair<int, int> cell_of(double x, double y) const noexcept;
  Eigen::Vector2d cell_center(int i, int j) const noexcept;

  /// Bilinear elevation between cell centers. nullopt when the containing
  /// cell is invalid or outside the grid; when some bilinear corner is
  /// invalid the containing cell's own elevation is returned.
  std::optional<double> elevation_at(double x, double y) const noexcept;

  std::size_t valid_count() const noexcept;
  // Bounds on the elevation of every cell ever set; invalidation does not
  // shrink them. Empty range (min > max) for a field with no cells set.
  std::pair<double, double> elevation_range() const noexcept { return {z_min_, z_max_}; }

 private:
  double x0_ = 0.0;
  double y0_ = 0.0;
  double cell_ = 1.0;
  int nx_ = 0;
  int ny_ = 0;
  double z_min_ = std::numeric_limits<double>::infinity();
  double z_max_ = -std::numeric_limits<double>::infinity();
  Grid2D<double> elevation_;
  Grid2D<float> gray_;
  Grid2D<float> safety_;
  Grid2D<std::uint8_t> valid_;
};

struct HeightFieldParams {
  double cell = 0.25;
  // Fill invalid cells with at least 6 of 8 valid neighbors.
  bool fill_holes = true;
  // Gray used where the source points carry none.
  float default_gray = 0.5f;
};

/// Per cell: the maximum member z (upper surface) and the mean gray and
/// smooth_safety of its members. Cells without members are invalid.
/// Throws Error(invalid_argument) for an empty cloud, non-positive cell,
/// or a cell larger than the cloud's xy extent.
HeightField build_heightfield(const LabeledCloud& cloud, const HeightFieldParams& params);

struct CameraPose {
  Eigen::Vector3d position{0, 0, 0};
  Eigen::Vector3d look_at{0, 0, 0};
  double deflection = 0.0;  // radians from nadir
  double azimuth = 0.0;     // radians; horizontal direction from look_at to camera
  double height_above_terrain = 0.0;

  // position, look_at, deflection, height_above_terrain, azimuth
  std::array<double, 9> to_array() const noexcept;
  static CameraPose from_array(const std::array<double, 9>& values) noexcept;
};

struct CameraBounds {
  double h_min = 5.0;
  double h_max = 20.0;
  double deflection_min = 0.0;
  double deflection_max = 0.7853981633974483;  // 45 degrees
  int max_rejections = 1000;

  void validate() const;
};

/// Random pose aimed at a uniformly chosen valid cell center. The camera
/// sits height_above_terrain meters above the target's elevation, offset
/// horizontally along the sampled azimuth so that the view direction makes
/// the sampled deflection with nadir. Poses whose position is at or below
/// the terrain are rejected and resampled. Deterministic in the seed.
/// Throws Error(data) when the field has no valid cell and
/// Error(retry_exhausted) after max_rejections consecutive rejections.
CameraPose sample_camera(const HeightField& field, std::uint64_t seed,
                         const CameraBounds& bounds = {});

/// sample_camera with the valid-cell table built once, for drawing many
/// poses from the same field. Keeps a reference to the field.
class CameraSampler {
 public:
  CameraSampler(const HeightField& field, const CameraBounds& bounds);
  CameraPose sample(std::uint64_t seed) const;

 private:
  const HeightField& field_;
  CameraBounds bounds_;
  std::vector<std::pair<int, int>> cells_;
};

struct RenderSettings {
  int width = 512;
  int height = 512;
  double vfov_deg = 60.0;
  // Ray-march step as a fraction of the cell size; at most 0.5.
  double step_fraction = 0.5;
  // Trace image and mask as two independent passes and keep both hit
  // buffers for inspection.
  bool record_hits = false;
};

struct RayHit {
  bool hit = false;
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;

  friend bool operator==(const RayHit&, const RayHit&) = default;
};

struct RenderedSample {
  ScalarMap image;
  ScalarMap mask;
  CameraPose pose;
  double coverage = 0.0;
  // coverage < 1%
  bool low_coverage = false;
  std::vector<RayHit> image_hits;
  std::vector<RayHit> mask_hits;
};

/// Pinhole camera basis for a pose: forward, image-right, image-up.
struct CameraBasis {
  Eigen::Vector3d forward;
  Eigen::Vector3d right;
  Eigen::Vector3d up;
};
CameraBasis camera_basis(const CameraPose& pose);

/// Unit ray direction through the center of pixel (col, row).
Eigen::Vector3d pixel_ray(const CameraBasis& basis, const RenderSettings& settings, int col,
                          int row) noexcept;

/// First intersection of the ray with the terrain. Marches fixed steps of
/// step_fraction * cell and refines the crossing by bisection.
RayHit trace_ray(const HeightField& field, const Eigen::Vector3d& origin,
                 const Eigen::Vector3d& direction, double step_fraction = 0.5) noexcept;

/// Raycasts the appearance image and the safety mask from the same pose.
/// Both are shaded from the same hit point by construction; pixels that
/// miss the terrain are 0 in both.
RenderedSample render_pair(const HeightField& field, const CameraPose& pose,
                           const RenderSettings& settings = {});

}  // namespace terrasafe
