#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>

#include "terrasafe/cloud_io.hpp"
#include "terrasafe/evaluate.hpp"
#include "terrasafe/terrain.hpp"

namespace terrasafe::testing {

using SurfaceFn = std::function<double(double, double)>;

// Regular grid of points over [x0, x0+sx) x [y0, y0+sy).
PointCloud grid_cloud(double x0, double y0, double sx, double sy, double spacing, const SurfaceFn& z,
                      const SurfaceFn& gray = nullptr);

struct Rect {
  double x0, y0, x1, y1;
  bool contains(double x, double y, double margin = 0.0) const {
    return x >= x0 + margin && x <= x1 - margin && y >= y0 + margin && y <= y1 - margin;
  }
};

// Flat ground with a 45 degree ramp and a rough patch, for the
// classification checks. Points are on a `spacing` grid with a small
// deterministic jitter in z.
struct FeatureTile {
  PointCloud cloud;
  Rect flat;   // whole flat area
  Rect ramp;   // z = x - ramp.x0 inside
  Rect rough;  // +-0.1 m noise inside
};
FeatureTile feature_tile(double size, double spacing, std::uint64_t seed);

// Terrain for rendering: rolling ground with a few blocks, sized size x size.
PointCloud survey_tile(double size, double spacing, std::uint64_t seed);

HeightField uniform_field(int nx, int ny, double cell, double z, float gray, float safety);

// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// Uniform prediction frame.
PredictionFrame constant_frame(int width, int height, float p_safe, float p_danger, int timestamp = 0);

// Speckle sequence: background p_danger = background, each frame a fresh
// random `density` fraction of pixels set to p_danger = 1, p_safe = 0.
std::vector<PredictionFrame> speckle_video(int size, int frames, double density, float background,
                                           std::uint64_t seed);

std::string read_file(const std::filesystem::path& path);

}  // namespace terrasafe::testing
