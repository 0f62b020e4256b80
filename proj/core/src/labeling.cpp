#include "terrasafe/labeling.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

#include "terrasafe/error.hpp"
#include "terrasafe/parallel.hpp"

namespace terrasafe {

LabeledCloud LabeledCloud::select(const std::vector<std::size_t>& indices) const {
  LabeledCloud out;
  out.base.crs_note = base.crs_note;
  for (const auto& [name, values] : base.scalars) out.base.scalars[name];
  const std::size_t n = indices.size();
  out.base.points.reserve(n);
  out.normals.reserve(n);
  out.verticality.reserve(n);
  out.surface_variation.reserve(n);
  out.frame_valid.reserve(n);
  out.raw_safety.reserve(n);
  out.smooth_safety.reserve(n);
  for (std::size_t i : indices) {
    out.base.points.push_back(base.points[i]);
    for (const auto& [name, values] : base.scalars) out.base.scalars[name].push_back(values[i]);
    out.normals.push_back(normals[i]);
    out.verticality.push_back(verticality[i]);
    out.surface_variation.push_back(surface_variation[i]);
    out.frame_valid.push_back(frame_valid[i]);
    out.raw_safety.push_back(raw_safety[i]);
    out.smooth_safety.push_back(smooth_safety[i]);
  }
  return out;
}

void SafetyThresholds::validate() const {
  auto in_unit = [](double v) { return v > 0.0 && v < 1.0; };
  if (!in_unit(verticality)) {
    throw Error(ErrorKind::invalid_argument, "verticality threshold must lie in (0,1)");
  }
  if (!in_unit(surface_variation)) {
    throw Error(ErrorKind::invalid_argument, "surface variation threshold must lie in (0,1)");
  }
}

LabeledCloud classify_safety(const PointCloud& cloud,
                             const std::vector<std::optional<LocalFrame>>& frames,
                             const SafetyThresholds& thresholds) {
  thresholds.validate();
  if (frames.size() != cloud.size()) {
    throw Error(ErrorKind::invalid_argument, "features missing: " + std::to_string(frames.size()) +
                                                 " frames for " + std::to_string(cloud.size()) +
                                                 " points");
  }
  const std::size_t n = cloud.size();
  LabeledCloud out;
  out.base = cloud;
  out.normals.resize(n, Eigen::Vector3d::UnitZ());
  out.verticality.resize(n, 0.0);
  out.surface_variation.resize(n, 0.0);
  out.frame_valid.resize(n, 0);
  out.raw_safety.resize(n, 0);
  out.smooth_safety.resize(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& frame = frames[i];
    bool safe = frame.has_value() && !frame->degenerate();
    if (frame) {
      out.normals[i] = frame->normal;
      out.verticality[i] = verticality(*frame);
      out.surface_variation[i] = surface_variation(*frame);
      out.frame_valid[i] = frame->degenerate() ? 0 : 1;
    }
    safe = safe && out.verticality[i] <= thresholds.verticality &&
           out.surface_variation[i] <= thresholds.surface_variation &&
           cloud.points[i].manual_class != ManualClass::force_unsafe;
    out.raw_safety[i] = safe ? 1 : 0;
    out.smooth_safety[i] = safe ? 1.0 : 0.0;
  }
  return out;
}

namespace {

double cross(const Eigen::Vector2d& o, const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
  return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

bool on_segment(const Eigen::Vector2d& p, const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
  return std::min(a.x(), b.x()) <= p.x() && p.x() <= std::max(a.x(), b.x()) &&
         std::min(a.y(), b.y()) <= p.y() && p.y() <= std::max(a.y(), b.y());
}

bool segments_intersect(const Eigen::Vector2d& a, const Eigen::Vector2d& b,
                        const Eigen::Vector2d& c, const Eigen::Vector2d& d) {
  const double d1 = cross(c, d, a);
  const double d2 = cross(c, d, b);
  const double d3 = cross(a, b, c);
  const double d4 = cross(a, b, d);
  if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0))) {
    return true;
  }
  if (d1 == 0 && on_segment(a, c, d)) return true;
  if (d2 == 0 && on_segment(b, c, d)) return true;
  if (d3 == 0 && on_segment(c, a, b)) return true;
  if (d4 == 0 && on_segment(d, a, b)) return true;
  return false;
}

}  // namespace

void OverrideRegion::validate() const {
  const std::size_t n = polygon.size();
  if (n < 3) throw Error(ErrorKind::invalid_argument, "override polygon needs at least 3 vertices");
  if (forced == ManualClass::none) {
    throw Error(ErrorKind::invalid_argument, "override region must force safe or unsafe");
  }
  double area2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& a = polygon[i];
    const auto& b = polygon[(i + 1) % n];
    if (!a.allFinite()) throw Error(ErrorKind::invalid_argument, "override polygon has a non-finite vertex");
    area2 += a.x() * b.y() - b.x() * a.y();
  }
  if (area2 == 0.0) throw Error(ErrorKind::invalid_argument, "override polygon has zero area");
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool adjacent = j == i + 1 || (i == 0 && j == n - 1);
      if (adjacent) continue;
      if (segments_intersect(polygon[i], polygon[(i + 1) % n], polygon[j], polygon[(j + 1) % n])) {
        throw Error(ErrorKind::invalid_argument, "override polygon is self-intersecting");
      }
    }
  }
}

bool OverrideRegion::contains(double x, double y) const noexcept {
  bool inside = false;
  const std::size_t n = polygon.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const auto& a = polygon[i];
    const auto& b = polygon[j];
    if ((a.y() > y) != (b.y() > y)) {
      const double cross_x = (b.x() - a.x()) * (y - a.y()) / (b.y() - a.y()) + a.x();
      if (x < cross_x) inside = !inside;
    }
  }
  return inside;
}

LabeledCloud apply_overrides(const LabeledCloud& cloud, const std::vector<OverrideRegion>& regions) {
  for (const auto& r : regions) r.validate();
  LabeledCloud out = cloud;
  if (regions.empty()) return out;
  for (std::size_t i = 0; i < out.size(); ++i) {
    Point3& p = out.base.points[i];
    for (const auto& region : regions) {
      if (!region.contains(p.x, p.y)) continue;
      p.manual_class = region.forced;
      out.raw_safety[i] = region.forced == ManualClass::force_safe ? 1 : 0;
    }
    out.smooth_safety[i] = out.raw_safety[i];
  }
  return out;
}

std::vector<OverrideRegion> parse_override_regions(const std::string& json_text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::format, std::string("override file is not valid JSON: ") + e.what());
  }
  if (!doc.is_array()) throw Error(ErrorKind::format, "override file must hold a JSON array");
  std::vector<OverrideRegion> regions;
  for (const auto& item : doc) {
    if (!item.is_object() || !item.contains("polygon") || !item.contains("forced")) {
      throw Error(ErrorKind::format, "override entry needs 'polygon' and 'forced'");
    }
    OverrideRegion region;
    const auto& forced = item.at("forced");
    if (forced == "force_unsafe") {
      region.forced = ManualClass::force_unsafe;
    } else if (forced == "force_safe") {
      region.forced = ManualClass::force_safe;
    } else {
      throw Error(ErrorKind::format, "override 'forced' must be force_unsafe or force_safe");
    }
    for (const auto& v : item.at("polygon")) {
      if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
        throw Error(ErrorKind::format, "override polygon vertices must be [x, y] pairs");
      }
      region.polygon.emplace_back(v[0].get<double>(), v[1].get<double>());
    }
    region.validate();
    regions.push_back(std::move(region));
  }
  return regions;
}

std::vector<OverrideRegion> load_override_regions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path.string() + " for reading");
  std::ostringstream text;
  text << in.rdbuf();
  return parse_override_regions(text.str());
}

LabeledCloud smooth_safety(const LabeledCloud& cloud, const NeighborIndex& index, double sigma) {
  if (!(sigma >= 0.0)) throw Error(ErrorKind::invalid_argument, "sigma must be non-negative");
  if (index.size() != cloud.size()) {
    throw Error(ErrorKind::invalid_argument, "neighbor index does not match the cloud");
  }
  LabeledCloud out = cloud;
  if (sigma == 0.0) {
    std::copy(cloud.raw_safety.begin(), cloud.raw_safety.end(), out.smooth_safety.begin());
    return out;
  }
  const double cutoff = 3.0 * sigma;
  const double inv_two_sigma2 = 1.0 / (2.0 * sigma * sigma);
  parallel_for(cloud.size(), [&](std::size_t i) {
    thread_local std::vector<std::size_t> ids;
    const Eigen::Vector3d p = cloud.base.points[i].position();
    index.radius_search(p, cutoff, ids);
    double num = 0.0, den = 0.0;
    for (std::size_t j : ids) {
      const double w = std::exp(-(index.position(j) - p).squaredNorm() * inv_two_sigma2);
      num += w * cloud.raw_safety[j];
      den += w;
    }
    out.smooth_safety[i] = den > 0.0 ? std::clamp(num / den, 0.0, 1.0) : cloud.raw_safety[i];
  });
  return out;
}

std::vector<TerrainSlice> slice_terrain(const LabeledCloud& cloud, double chunk, double overlap) {
  if (!(chunk > 0.0)) throw Error(ErrorKind::invalid_argument, "slice size must be positive");
  if (!(overlap >= 0.0)) throw Error(ErrorKind::invalid_argument, "slice overlap must be non-negative");
  if (chunk < 2.0 * overlap) {
    throw Error(ErrorKind::invalid_argument, "slice size must be at least twice the overlap");
  }
  if (cloud.size() == 0) return {};

  double min_x = cloud.base.points[0].x, max_x = min_x;
  double min_y = cloud.base.points[0].y, max_y = min_y;
  for (const Point3& p : cloud.base.points) {
    min_x = std::min(min_x, p.x);
    max_x = std::max(max_x, p.x);
    min_y = std::min(min_y, p.y);
    max_y = std::max(max_y, p.y);
  }
  const int nx = std::max(1, static_cast<int>(std::ceil((max_x - min_x) / chunk)));
  const int ny = std::max(1, static_cast<int>(std::ceil((max_y - min_y) / chunk)));

  auto tile_of = [&](double v, double lo, int count) {
    return std::clamp(static_cast<int>(std::floor((v - lo) / chunk)), 0, count - 1);
  };
  auto tile_lo = [&](int i, double lo) { return lo + i * chunk; };
  auto tile_hi = [&](int i, double lo, double hi, int count) {
    return i == count - 1 ? hi : lo + (i + 1) * chunk;
  };

  struct Members {
    std::vector<std::size_t> indices;
    std::vector<std::uint8_t> interior;
  };
  std::map<std::pair<int, int>, Members> tiles;  // keyed (tile_y, tile_x)

  for (std::size_t k = 0; k < cloud.size(); ++k) {
    const Point3& p = cloud.base.points[k];
    const int home_x = tile_of(p.x, min_x, nx);
    const int home_y = tile_of(p.y, min_y, ny);
    const int x0 = std::max(0, tile_of(p.x - overlap, min_x, nx) - 1);
    const int x1 = std::min(nx - 1, tile_of(p.x + overlap, min_x, nx) + 1);
    const int y0 = std::max(0, tile_of(p.y - overlap, min_y, ny) - 1);
    const int y1 = std::min(ny - 1, tile_of(p.y + overlap, min_y, ny) + 1);
    for (int ty = y0; ty <= y1; ++ty) {
      for (int tx = x0; tx <= x1; ++tx) {
        const bool home = tx == home_x && ty == home_y;
        const bool in_margin = p.x >= tile_lo(tx, min_x) - overlap &&
                               p.x <= tile_hi(tx, min_x, max_x, nx) + overlap &&
                               p.y >= tile_lo(ty, min_y) - overlap &&
                               p.y <= tile_hi(ty, min_y, max_y, ny) + overlap;
        if (!home && !in_margin) continue;
        Members& m = tiles[{ty, tx}];
        m.indices.push_back(k);
        m.interior.push_back(home ? 1 : 0);
      }
    }
  }

  std::vector<TerrainSlice> slices;
  for (auto& [key, members] : tiles) {
    if (std::none_of(members.interior.begin(), members.interior.end(),
                     [](std::uint8_t v) { return v != 0; })) {
      continue;
    }
    TerrainSlice s;
    s.tile_y = key.first;
    s.tile_x = key.second;
    s.cloud = cloud.select(members.indices);
    s.interior = std::move(members.interior);
    s.interior_min = {tile_lo(s.tile_x, min_x), tile_lo(s.tile_y, min_y)};
    s.interior_max = {tile_hi(s.tile_x, min_x, max_x, nx), tile_hi(s.tile_y, min_y, max_y, ny)};
    slices.push_back(std::move(s));
  }
  return slices;
}

LabeledCloud label_cloud(const PointCloud& cloud, const LabelParams& params,
                         const std::vector<OverrideRegion>& regions) {
  const NeighborIndex index(cloud);
  const auto frames = compute_frames(cloud, index, params.features);
  LabeledCloud labeled = classify_safety(cloud, frames, params.thresholds);
  labeled = apply_overrides(labeled, regions);
  return smooth_safety(labeled, index, params.sigma);
}

namespace {

const char* const kLabelAttributes[] = {"nx", "ny", "nz", "verticality", "surface_variation",
                                        "frame_valid", "raw_safety", "smooth_safety"};

}  // namespace

PointCloud to_point_cloud(const LabeledCloud& cloud) {
  PointCloud out = cloud.base;
  const std::size_t n = cloud.size();
  auto& nx = out.scalars["nx"];
  auto& ny = out.scalars["ny"];
  auto& nz = out.scalars["nz"];
  nx.resize(n);
  ny.resize(n);
  nz.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    nx[i] = cloud.normals[i].x();
    ny[i] = cloud.normals[i].y();
    nz[i] = cloud.normals[i].z();
  }
  out.scalars["verticality"] = cloud.verticality;
  out.scalars["surface_variation"] = cloud.surface_variation;
  out.scalars["frame_valid"].assign(cloud.frame_valid.begin(), cloud.frame_valid.end());
  out.scalars["raw_safety"].assign(cloud.raw_safety.begin(), cloud.raw_safety.end());
  out.scalars["smooth_safety"] = cloud.smooth_safety;
  return out;
}

LabeledCloud from_point_cloud(PointCloud cloud) {
  const auto smooth = cloud.scalars.find("smooth_safety");
  if (smooth == cloud.scalars.end()) {
    throw Error(ErrorKind::data, "cloud has no smooth_safety attribute; run the label stage first");
  }
  cloud.validate();
  const std::size_t n = cloud.size();
  LabeledCloud out;
  auto take = [&](const char* name) -> std::optional<std::vector<double>> {
    auto it = cloud.scalars.find(name);
    if (it == cloud.scalars.end()) return std::nullopt;
    return it->second;
  };
  out.smooth_safety = smooth->second;
  for (double& s : out.smooth_safety) s = std::clamp(s, 0.0, 1.0);
  const auto nx = take("nx"), ny = take("ny"), nz = take("nz");
  out.normals.resize(n, Eigen::Vector3d::UnitZ());
  if (nx && ny && nz) {
    for (std::size_t i = 0; i < n; ++i) out.normals[i] = {(*nx)[i], (*ny)[i], (*nz)[i]};
  }
  out.verticality = take("verticality").value_or(std::vector<double>(n, 0.0));
  out.surface_variation = take("surface_variation").value_or(std::vector<double>(n, 0.0));
  const auto valid = take("frame_valid").value_or(std::vector<double>(n, 1.0));
  out.frame_valid.resize(n);
  for (std::size_t i = 0; i < n; ++i) out.frame_valid[i] = valid[i] >= 0.5 ? 1 : 0;
  const auto raw = take("raw_safety");
  out.raw_safety.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double v = raw ? (*raw)[i] : out.smooth_safety[i];
    out.raw_safety[i] = v >= 0.5 ? 1 : 0;
  }
  for (const char* name : kLabelAttributes) cloud.scalars.erase(name);
  out.base = std::move(cloud);
  return out;
}

}  // namespace terrasafe
