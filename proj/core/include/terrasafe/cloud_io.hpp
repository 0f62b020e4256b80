#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

namespace terrasafe {

enum class ManualClass : std::uint8_t {
  none = 0,
  force_unsafe = 1,
  force_safe = 2,
};

/// A survey sample. Coordinates are meters in a right-handed frame
/// with z up; gray is an appearance intensity in [0, 1].
struct Point3 {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  std::optional<double> gray;
  ManualClass manual_class = ManualClass::none;

  Eigen::Vector3d position() const noexcept { return {x, y, z}; }
};

/// Ordered point samples plus optional named per-point scalar attributes.
/// Every attribute vector has exactly points.size() entries.
struct PointCloud {
  std::vector<Point3> points;
  std::map<std::string, std::vector<double>> scalars;
  std::string crs_note;

  std::size_t size() const noexcept { return points.size(); }
  bool empty() const noexcept { return points.empty(); }

  // Throws Error(data) on non-finite coordinates, gray outside [0, 1], or
  // attribute vectors of the wrong length.
  void validate() const;
};

enum class CloudFormat { ply_ascii, ply_binary_le, xyz_text, csv };

std::optional<CloudFormat> parse_cloud_format(std::string_view name);
std::string_view to_string(CloudFormat format) noexcept;

struct LoadReport {
  std::string path;
  CloudFormat format = CloudFormat::xyz_text;
  std::size_t rows_read = 0;
  std::size_t points_loaded = 0;
  std::size_t dropped = 0;  // rows with a non-finite value

  std::string to_json() const;
};

struct LoadResult {
  PointCloud cloud;
  LoadReport report;
};

// Luminance weights used when RGB is collapsed to gray.
double luminance(double r, double g, double b) noexcept;

/// Reads a cloud. RGB is collapsed to gray at ingestion; rows with NaN or
/// infinite values are dropped and counted in the report. Properties other
/// than x/y/z/red/green/blue/gray/manual_class become scalar attributes.
///
/// Throws Error(io) if the file cannot be read, Error(format) on a
/// malformed header or row, and Error(data) if no valid point remains.
LoadResult load_cloud(const std::filesystem::path& path, CloudFormat format);

/// Writes a cloud. Coordinates are stored as doubles: shortest round-trip
/// text for the ascii formats, raw little-endian bytes for binary PLY.
/// Gray is written as equal red/green/blue bytes.
void save_cloud(const PointCloud& cloud, const std::filesystem::path& path,
                CloudFormat format);

/// Collapses the cloud to one point per occupied cube of side `cell`,
/// placed at the members' centroid. Gray and scalars are averaged; the
/// manual class is force_unsafe if any member is, else force_safe if any
/// member is. Output is ordered by cell key, so the result is independent
/// of input order up to floating-point summation.
PointCloud voxel_downsample(const PointCloud& cloud, double cell);

}  // namespace terrasafe
