#include "terrasafe/terrain.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "terrasafe/error.hpp"
#include "terrasafe/parallel.hpp"
#include "terrasafe/random.hpp"

namespace terrasafe {

HeightField::HeightField(double x0, double y0, double cell, int nx, int ny)
    : x0_(x0), y0_(y0), cell_(cell), nx_(nx), ny_(ny),
      elevation_(nx, ny, 0.0), gray_(nx, ny, 0.0f), safety_(nx, ny, 0.0f), valid_(nx, ny, 0) {
  if (!(cell > 0.0) || nx <= 0 || ny <= 0) {
    throw Error(ErrorKind::invalid_argument, "height field needs a positive cell and grid size");
  }
}

void HeightField::set_cell(int i, int j, double elevation, float gray, float safety) {
  elevation_(i, j) = elevation;
  gray_(i, j) = gray;
  safety_(i, j) = safety;
  valid_(i, j) = 1;
  z_min_ = std::min(z_min_, elevation);
  z_max_ = std::max(z_max_, elevation);
}

void HeightField::invalidate(int i, int j) { valid_(i, j) = 0; }

std::pair<int, int> HeightField::cell_of(double x, double y) const noexcept {
  const double u = std::floor((x - x0_) / cell_);
  const double v = std::floor((y - y0_) / cell_);
  // Keep far-away queries representable.
  const double limit = 1e9;
  return {static_cast<int>(std::clamp(u, -limit, limit)),
          static_cast<int>(std::clamp(v, -limit, limit))};
}

Eigen::Vector2d HeightField::cell_center(int i, int j) const noexcept {
  return {x0_ + (i + 0.5) * cell_, y0_ + (j + 0.5) * cell_};
}

std::optional<double> HeightField::elevation_at(double x, double y) const noexcept {
  const double gx = (x - x0_) / cell_;
  const double gy = (y - y0_) / cell_;
  // Also rejects NaN.
  if (!(gx >= 0.0 && gy >= 0.0 && gx < nx_ && gy < ny_)) return std::nullopt;
  const int ci = static_cast<int>(gx);
  const int cj = static_cast<int>(gy);
  if (!valid_(ci, cj)) return std::nullopt;
  const double u = gx - 0.5;
  const double v = gy - 0.5;
  const int i0 = static_cast<int>(std::floor(u));
  const int j0 = static_cast<int>(std::floor(v));
  const double fx = u - i0;
  const double fy = v - j0;
  const int ia = std::max(i0, 0), ib = std::min(i0 + 1, nx_ - 1);
  const int ja = std::max(j0, 0), jb = std::min(j0 + 1, ny_ - 1);
  if (!valid_(ia, ja) || !valid_(ib, ja) || !valid_(ia, jb) || !valid_(ib, jb)) {
    return elevation_(ci, cj);
  }
  const double bottom = elevation_(ia, ja) * (1.0 - fx) + elevation_(ib, ja) * fx;
  const double top = elevation_(ia, jb) * (1.0 - fx) + elevation_(ib, jb) * fx;
  return bottom * (1.0 - fy) + top * fy;
}

std::size_t HeightField::valid_count() const noexcept {
  return static_cast<std::size_t>(
      std::count_if(valid_.values().begin(), valid_.values().end(), [](std::uint8_t v) { return v != 0; }));
}

HeightField build_heightfield(const LabeledCloud& cloud, const HeightFieldParams& params) {
  if (cloud.size() == 0) throw Error(ErrorKind::invalid_argument, "cannot build a height field from an empty cloud");
  if (!(params.cell > 0.0)) throw Error(ErrorKind::invalid_argument, "height field cell must be positive");
  const auto& pts = cloud.base.points;
  double min_x = pts[0].x, max_x = min_x, min_y = pts[0].y, max_y = min_y;
  for (const Point3& p : pts) {
    min_x = std::min(min_x, p.x);
    max_x = std::max(max_x, p.x);
    min_y = std::min(min_y, p.y);
    max_y = std::max(max_y, p.y);
  }
  if (params.cell > std::max(max_x - min_x, max_y - min_y)) {
    throw Error(ErrorKind::invalid_argument, "height field cell exceeds the cloud extent");
  }
  const int nx = static_cast<int>(std::floor((max_x - min_x) / params.cell)) + 1;
  const int ny = static_cast<int>(std::floor((max_y - min_y) / params.cell)) + 1;

  Grid2D<double> top(nx, ny, -std::numeric_limits<double>::infinity());
  Grid2D<double> gray_sum(nx, ny, 0.0);
  Grid2D<double> safety_sum(nx, ny, 0.0);
  Grid2D<std::uint32_t> count(nx, ny, 0);
  for (std::size_t k = 0; k < pts.size(); ++k) {
    const Point3& p = pts[k];
    const int i = std::min(nx - 1, static_cast<int>(std::floor((p.x - min_x) / params.cell)));
    const int j = std::min(ny - 1, static_cast<int>(std::floor((p.y - min_y) / params.cell)));
    top(i, j) = std::max(top(i, j), p.z);
    gray_sum(i, j) += p.gray.value_or(params.default_gray);
    safety_sum(i, j) += cloud.smooth_safety[k];
    ++count(i, j);
  }

  HeightField field(min_x, min_y, params.cell, nx, ny);
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      const double c = count(i, j);
      if (c == 0) continue;
      field.set_cell(i, j, top(i, j), static_cast<float>(gray_sum(i, j) / c),
                     static_cast<float>(safety_sum(i, j) / c));
    }
  }

  if (params.fill_holes) {
    struct Fill {
      int i, j;
      double elevation;
      float gray, safety;
    };
    std::vector<Fill> fills;
    for (int j = 0; j < ny; ++j) {
      for (int i = 0; i < nx; ++i) {
        if (count(i, j) != 0) continue;
        int n = 0;
        double e = 0.0, g = 0.0, s = 0.0;
        for (int dj = -1; dj <= 1; ++dj) {
          for (int di = -1; di <= 1; ++di) {
            if ((di == 0 && dj == 0) || !field.in_bounds(i + di, j + dj) ||
                count(i + di, j + dj) == 0) {
              continue;
            }
            ++n;
            e += field.elevation(i + di, j + dj);
            g += field.gray(i + di, j + dj);
            s += field.safety(i + di, j + dj);
          }
        }
        if (n >= 6) fills.push_back({i, j, e / n, static_cast<float>(g / n), static_cast<float>(s / n)});
      }
    }
    for (const Fill& f : fills) field.set_cell(f.i, f.j, f.elevation, f.gray, f.safety);
  }
  return field;
}

std::array<double, 9> CameraPose::to_array() const noexcept {
  return {position.x(), position.y(), position.z(), look_at.x(), look_at.y(), look_at.z(),
          deflection, height_above_terrain, azimuth};
}

CameraPose CameraPose::from_array(const std::array<double, 9>& v) noexcept {
  CameraPose pose;
  pose.position = {v[0], v[1], v[2]};
  pose.look_at = {v[3], v[4], v[5]};
  pose.deflection = v[6];
  pose.height_above_terrain = v[7];
  pose.azimuth = v[8];
  return pose;
}

void CameraBounds::validate() const {
  if (!(h_min > 0.0) || !(h_max >= h_min)) {
    throw Error(ErrorKind::invalid_argument, "camera height bounds must satisfy 0 < h_min <= h_max");
  }
  if (!(deflection_min >= 0.0) || !(deflection_max >= deflection_min) ||
      !(deflection_max < std::numbers::pi / 2)) {
    throw Error(ErrorKind::invalid_argument,
                "camera deflection bounds must satisfy 0 <= min <= max < 90 degrees");
  }
  if (max_rejections <= 0) throw Error(ErrorKind::invalid_argument, "max_rejections must be positive");
}

namespace {

std::vector<std::pair<int, int>> valid_cells(const HeightField& field) {
  std::vector<std::pair<int, int>> cells;
  for (int j = 0; j < field.ny(); ++j) {
    for (int i = 0; i < field.nx(); ++i) {
      if (field.valid(i, j)) cells.emplace_back(i, j);
    }
  }
  return cells;
}

}  // namespace

CameraSampler::CameraSampler(const HeightField& field, const CameraBounds& bounds)
    : field_(field), bounds_(bounds), cells_(valid_cells(field)) {
  bounds_.validate();
  if (cells_.empty()) throw Error(ErrorKind::data, "height field has no valid cells to aim at");
}

CameraPose CameraSampler::sample(std::uint64_t seed) const {
  Rng rng(seed);
  for (int attempt = 0; attempt < bounds_.max_rejections; ++attempt) {
    const auto [i, j] = cells_[rng.below(cells_.size())];
    const double deflection = rng.uniform(bounds_.deflection_min, bounds_.deflection_max);
    const double azimuth = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double height = rng.uniform(bounds_.h_min, bounds_.h_max);

    const Eigen::Vector2d target = field_.cell_center(i, j);
    CameraPose pose;
    pose.look_at = {target.x(), target.y(), field_.elevation_at(target.x(), target.y()).value()};
    const double offset = height * std::tan(deflection);
    pose.position = pose.look_at + Eigen::Vector3d(offset * std::cos(azimuth),
                                                   offset * std::sin(azimuth), height);
    pose.deflection = deflection;
    pose.azimuth = azimuth;
    pose.height_above_terrain = height;

    const auto ground = field_.elevation_at(pose.position.x(), pose.position.y());
    if (ground && pose.position.z() <= *ground) continue;
    return pose;
  }
  throw Error(ErrorKind::retry_exhausted,
              "camera sampler rejected " + std::to_string(bounds_.max_rejections) +
                  " consecutive poses");
}

CameraPose sample_camera(const HeightField& field, std::uint64_t seed, const CameraBounds& bounds) {
  return CameraSampler(field, bounds).sample(seed);
}

CameraBasis camera_basis(const CameraPose& pose) {
  CameraBasis b;
  const Eigen::Vector3d to_target = pose.look_at - pose.position;
  if (!(to_target.norm() > 0.0)) {
    throw Error(ErrorKind::invalid_argument, "camera position coincides with its target");
  }
  b.forward = to_target.normalized();
  const Eigen::Vector3d world_up = Eigen::Vector3d::UnitZ();
  const Eigen::Vector3d up_component = world_up - world_up.dot(b.forward) * b.forward;
  if (up_component.norm() > 1e-9) {
    b.up = up_component.normalized();
    // Looking up would flip the image; the sampler never produces that.
    if (b.forward.z() > 0.0) b.up = -b.up;
  } else {
    // Nadir or zenith view: image-up is the heading from camera to target.
    b.up = Eigen::Vector3d(-std::cos(pose.azimuth), -std::sin(pose.azimuth), 0.0);
  }
  b.right = b.forward.cross(b.up).normalized();
  b.up = b.right.cross(b.forward).normalized();
  return b;
}

Eigen::Vector3d pixel_ray(const CameraBasis& basis, const RenderSettings& settings, int col,
                          int row) noexcept {
  const double tan_half = std::tan(settings.vfov_deg * std::numbers::pi / 360.0);
  const double aspect = static_cast<double>(settings.width) / settings.height;
  const double sx = ((col + 0.5) / settings.width * 2.0 - 1.0) * tan_half * aspect;
  const double sy = (1.0 - (row + 0.5) / settings.height * 2.0) * tan_half;
  return (basis.forward + sx * basis.right + sy * basis.up).normalized();
}

namespace {

// Ray/box slab test; returns the parameter interval inside the box.
bool clip_to_box(const Eigen::Vector3d& o, const Eigen::Vector3d& d, const Eigen::Vector3d& lo,
                 const Eigen::Vector3d& hi, double& t0, double& t1) {
  t0 = 0.0;
  t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (std::abs(d[a]) < 1e-15) {
      if (o[a] < lo[a] || o[a] > hi[a]) return false;
      continue;
    }
    double ta = (lo[a] - o[a]) / d[a];
    double tb = (hi[a] - o[a]) / d[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return false;
  }
  return true;
}

}  // namespace

namespace {

// Per-block maximum elevation (with a one-cell border, which covers the
// bilinear footprint) used to jump over lattice points that are provably
// above the terrain. Skipping never moves the march lattice, so results
// equal a plain march bit for bit.
class SkipGrid {
 public:
  static constexpr int kBlock = 4;

  explicit SkipGrid(const HeightField& f)
      : bx_((f.nx() + kBlock - 1) / kBlock), by_((f.ny() + kBlock - 1) / kBlock),
        cell_(f.cell()), x0_(f.x0()), y0_(f.y0()),
        max_(static_cast<std::size_t>(bx_) * by_, -std::numeric_limits<double>::infinity()) {
    for (int j = 0; j < f.ny(); ++j) {
      for (int i = 0; i < f.nx(); ++i) {
        if (!f.valid(i, j)) continue;
        const double z = f.elevation(i, j);
        // Every block whose bordered footprint contains (i, j).
        for (int b = std::max(0, (j - 1) / kBlock); b <= std::min(by_ - 1, (j + 1) / kBlock); ++b) {
          for (int a = std::max(0, (i - 1) / kBlock); a <= std::min(bx_ - 1, (i + 1) / kBlock); ++a) {
            double& m = max_[static_cast<std::size_t>(b) * bx_ + a];
            m = std::max(m, z);
          }
        }
      }
    }
  }

  int block_of(double x, double y, int& a, int& b) const noexcept {
    a = std::clamp(static_cast<int>(std::floor((x - x0_) / (cell_ * kBlock))), 0, bx_ - 1);
    b = std::clamp(static_cast<int>(std::floor((y - y0_) / (cell_ * kBlock))), 0, by_ - 1);
    return b * bx_ + a;
  }

  double max_at(int id) const noexcept { return max_[static_cast<std::size_t>(id)]; }

  // Parameter where the ray leaves block (a, b) in xy.
  double exit_t(const Eigen::Vector3d& o, const Eigen::Vector3d& d, int a, int b) const noexcept {
    const double size = cell_ * kBlock;
    double t = std::numeric_limits<double>::infinity();
    if (d.x() > 0) t = std::min(t, (x0_ + (a + 1) * size - o.x()) / d.x());
    if (d.x() < 0) t = std::min(t, (x0_ + a * size - o.x()) / d.x());
    if (d.y() > 0) t = std::min(t, (y0_ + (b + 1) * size - o.y()) / d.y());
    if (d.y() < 0) t = std::min(t, (y0_ + b * size - o.y()) / d.y());
    return t;
  }

 private:
  int bx_, by_;
  double cell_, x0_, y0_;
  std::vector<double> max_;
};

RayHit march(const HeightField& field, const SkipGrid* skip, const Eigen::Vector3d& origin,
             const Eigen::Vector3d& direction, double step_fraction) noexcept {
  RayHit result;
  const auto [zmin, zmax] = field.elevation_range();
  if (!(zmin <= zmax)) return result;
  const double step = std::clamp(step_fraction, 1e-3, 0.5) * field.cell();
  // Padded in z so that flat terrain still gives the march a span to cross.
  const Eigen::Vector3d lo(field.x0(), field.y0(), zmin - step);
  const Eigen::Vector3d hi(field.x0() + field.nx() * field.cell(),
                           field.y0() + field.ny() * field.cell(), zmax + step);
  double t_begin = 0.0, t_end = 0.0;
  if (!clip_to_box(origin, direction, lo, hi, t_begin, t_end)) return result;

  auto below = [&](double t) {
    const Eigen::Vector3d p = origin + t * direction;
    const auto h = field.elevation_at(p.x(), p.y());
    return h && p.z() <= *h;
  };

  double hit_t = -1.0;
  if (below(t_begin)) {
    hit_t = t_begin;
  } else {
    double prev = t_begin;
    int checked_block = -1;
    for (long long k = 1;; ++k) {
      const double tc = std::min(t_begin + static_cast<double>(k) * step, t_end);
      if (skip && tc < t_end) {
        const Eigen::Vector3d p = origin + tc * direction;
        int a = 0, b = 0;
        const int id = skip->block_of(p.x(), p.y(), a, b);
        if (id != checked_block) {
          checked_block = id;
          const double top = skip->max_at(id);
          if (p.z() > top) {
            // The ray stays above this block until it leaves it or drops
            // to the block's top.
            double t_lim = std::min(skip->exit_t(origin, direction, a, b), t_end);
            if (direction.z() < 0.0) t_lim = std::min(t_lim, (top - origin.z()) / direction.z());
            long long last = static_cast<long long>(std::floor((t_lim - t_begin) / step));
            while (last > k && t_begin + static_cast<double>(last) * step >= t_lim) --last;
            if (last > k) {
              k = last;
              prev = std::min(t_begin + static_cast<double>(k) * step, t_end);
              if (prev >= t_end) break;
              continue;
            }
          }
        }
      }
      if (below(tc)) {
        double a = prev, b = tc;
        for (int it = 0; it < 20; ++it) {
          const double mid = 0.5 * (a + b);
          if (below(mid)) {
            b = mid;
          } else {
            a = mid;
          }
        }
        hit_t = b;
        break;
      }
      if (tc >= t_end) break;
      prev = tc;
    }
  }
  if (hit_t < 0.0) return result;
  const Eigen::Vector3d p = origin + hit_t * direction;
  result.hit = true;
  result.x = p.x();
  result.y = p.y();
  result.z = p.z();
  return result;
}

}  // namespace

RayHit trace_ray(const HeightField& field, const Eigen::Vector3d& origin,
                 const Eigen::Vector3d& direction, double step_fraction) noexcept {
  return march(field, nullptr, origin, direction, step_fraction);
}

namespace {

void shade(const HeightField& field, const RayHit& hit, float& gray, float& safety) {
  if (!hit.hit) {
    gray = 0.0f;
    safety = 0.0f;
    return;
  }
  const auto [i, j] = field.cell_of(hit.x, hit.y);
  gray = field.gray(i, j);
  safety = field.safety(i, j);
}

}  // namespace

RenderedSample render_pair(const HeightField& field, const CameraPose& pose,
                           const RenderSettings& settings) {
  if (settings.width <= 0 || settings.height <= 0) {
    throw Error(ErrorKind::invalid_argument, "render resolution must be positive");
  }
  if (!(settings.vfov_deg > 0.0 && settings.vfov_deg < 180.0)) {
    throw Error(ErrorKind::invalid_argument, "vertical field of view must lie in (0, 180) degrees");
  }
  const CameraBasis basis = camera_basis(pose);
  const SkipGrid skip(field);
  RenderedSample sample;
  sample.pose = pose;
  sample.image = ScalarMap(settings.width, settings.height);
  sample.mask = ScalarMap(settings.width, settings.height);
  const std::size_t pixels = static_cast<std::size_t>(settings.width) * settings.height;
  if (settings.record_hits) {
    sample.image_hits.resize(pixels);
    sample.mask_hits.resize(pixels);
  }

  std::vector<std::size_t> row_hits(static_cast<std::size_t>(settings.height), 0);
  parallel_for(
      static_cast<std::size_t>(settings.height),
      [&](std::size_t r) {
        const int row = static_cast<int>(r);
        std::size_t hits = 0;
        for (int col = 0; col < settings.width; ++col) {
          const Eigen::Vector3d dir = pixel_ray(basis, settings, col, row);
          const RayHit hit = march(field, &skip, pose.position, dir, settings.step_fraction);
          float gray = 0.0f, safety = 0.0f;
          shade(field, hit, gray, safety);
          if (settings.record_hits) {
            // Second, independent pass for the mask picture.
            const RayHit mask_hit = march(field, &skip, pose.position, dir, settings.step_fraction);
            float unused = 0.0f;
            shade(field, mask_hit, unused, safety);
            const std::size_t k = r * static_cast<std::size_t>(settings.width) + col;
            sample.image_hits[k] = hit;
            sample.mask_hits[k] = mask_hit;
          }
          sample.image(col, row) = gray;
          sample.mask(col, row) = safety;
          hits += hit.hit ? 1 : 0;
        }
        row_hits[r] = hits;
      },
      1);

  std::size_t total = 0;
  for (std::size_t h : row_hits) total += h;
  sample.coverage = static_cast<double>(total) / static_cast<double>(pixels);
  sample.low_coverage = sample.coverage < 0.01;
  return sample;
}

}  // namespace terrasafe
