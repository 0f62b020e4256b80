#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "terrasafe/cloud_io.hpp"
#include "terrasafe/geometry.hpp"

namespace terrasafe {

/// A cloud with per-point geometric features and safety labels.
/// raw_safety is 1 for safe and 0 for unsafe; smooth_safety is in [0, 1].
struct LabeledCloud {
  PointCloud base;
  std::vector<Eigen::Vector3d> normals;
  std::vector<double> verticality;
  std::vector<double> surface_variation;
  std::vector<std::uint8_t> frame_valid;
  std::vector<std::uint8_t> raw_safety;
  std::vector<double> smooth_safety;

  std::size_t size() const noexcept { return base.size(); }

  // Subset of points in the given order.
  LabeledCloud select(const std::vector<std::size_t>& indices) const;
};

struct SafetyThresholds {
  double verticality = 0.01;
  double surface_variation = 0.002;

  // Throws Error(invalid_argument) unless both lie in (0, 1).
  void validate() const;
};

/// Marks a point unsafe when its frame is missing or degenerate, its
/// verticality or surface variation exceeds the threshold, or it carries
/// a force_unsafe manual class. smooth_safety starts equal to raw_safety.
/// Throws Error(invalid_argument) if frames and cloud sizes differ.
LabeledCloud classify_safety(const PointCloud& cloud,
                             const std::vector<std::optional<LocalFrame>>& frames,
                             const SafetyThresholds& thresholds);

struct OverrideRegion {
  std::vector<Eigen::Vector2d> polygon;
  ManualClass forced = ManualClass::force_unsafe;

  // Throws Error(invalid_argument) for fewer than 3 vertices, non-finite
  // or zero-area polygons, self-intersections, or a forced value of none.
  void validate() const;
  // Even-odd containment in the xy plane.
  bool contains(double x, double y) const noexcept;
};

/// Forces raw_safety (and manual_class) of every point whose xy lies inside
/// a region; later regions override earlier ones. Regions are vertical
/// prisms, so terrain slope does not matter. smooth_safety is reset to the
/// new raw labels.
LabeledCloud apply_overrides(const LabeledCloud& cloud, const std::vector<OverrideRegion>& regions);

/// Reads `[{"polygon": [[x,y],...], "forced": "force_unsafe"}, ...]`.
std::vector<OverrideRegion> load_override_regions(const std::filesystem::path& path);
std::vector<OverrideRegion> parse_override_regions(const std::string& json_text);

/// Normalized Gaussian average of raw_safety over neighbors within 3 sigma.
/// sigma == 0 copies raw_safety. `index` must index cloud.base.
LabeledCloud smooth_safety(const LabeledCloud& cloud, const NeighborIndex& index, double sigma);

struct TerrainSlice {
  LabeledCloud cloud;
  // 1 for points in this tile's interior; 0 for margin points borrowed
  // from neighboring tiles.
  std::vector<std::uint8_t> interior;
  int tile_x = 0;
  int tile_y = 0;
  Eigen::Vector2d interior_min{0, 0};
  Eigen::Vector2d interior_max{0, 0};
};

/// Axis-aligned xy tiles of side `chunk` anchored at the cloud's minimum
/// corner. Each tile also carries the points within `overlap` of its
/// interior. Every point belongs to exactly one interior; tiles with an
/// empty interior are omitted. Throws Error(invalid_argument) unless
/// chunk > 0 and chunk >= 2 * overlap.
std::vector<TerrainSlice> slice_terrain(const LabeledCloud& cloud, double chunk, double overlap);

struct LabelParams {
  FeatureParams features;
  SafetyThresholds thresholds;
  double sigma = 0.5;
};

/// features -> classify -> overrides -> smoothing.
LabeledCloud label_cloud(const PointCloud& cloud, const LabelParams& params,
                         const std::vector<OverrideRegion>& regions = {});

/// Stores features and labels as scalar attributes (nx, ny, nz,
/// verticality, surface_variation, frame_valid, raw_safety, smooth_safety).
PointCloud to_point_cloud(const LabeledCloud& cloud);

/// Inverse of to_point_cloud. A cloud carrying only smooth_safety is
/// accepted; raw_safety is then derived by thresholding at 0.5.
/// Throws Error(data) when smooth_safety is absent.
LabeledCloud from_point_cloud(PointCloud cloud);

}  // namespace terrasafe
