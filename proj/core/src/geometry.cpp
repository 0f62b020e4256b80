#include "terrasafe/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>

#include <Eigen/Eigenvalues>

#include "terrasafe/error.hpp"
#include "terrasafe/parallel.hpp"

namespace terrasafe {

namespace {

constexpr std::uint32_t kLeafSize = 12;

std::vector<Eigen::Vector3d> positions_of(const PointCloud& cloud) {
  std::vector<Eigen::Vector3d> out;
  out.reserve(cloud.size());
  for (const Point3& p : cloud.points) out.push_back(p.position());
  return out;
}

double box_distance_sq(const Eigen::Vector3d& q, const Eigen::Vector3d& lo,
                       const Eigen::Vector3d& hi) {
  double d = 0.0;
  for (int a = 0; a < 3; ++a) {
    const double below = lo[a] - q[a];
    const double above = q[a] - hi[a];
    const double gap = std::max({below, above, 0.0});
    d += gap * gap;
  }
  return d;
}

}  // namespace

NeighborIndex::NeighborIndex(const PointCloud& cloud) : NeighborIndex(positions_of(cloud)) {}

NeighborIndex::NeighborIndex(std::vector<Eigen::Vector3d> positions)
    : positions_(std::move(positions)) {
  if (positions_.empty()) throw Error(ErrorKind::invalid_argument, "cannot index an empty cloud");
  if (positions_.size() >= std::numeric_limits<std::uint32_t>::max()) {
    throw Error(ErrorKind::invalid_argument, "cloud too large to index");
  }
  order_.resize(positions_.size());
  std::iota(order_.begin(), order_.end(), 0u);
  nodes_.reserve(2 * positions_.size() / kLeafSize + 1);
  build(0, static_cast<std::uint32_t>(order_.size()));
}

std::uint32_t NeighborIndex::build(std::uint32_t begin, std::uint32_t end) {
  const auto id = static_cast<std::uint32_t>(nodes_.size());
  nodes_.emplace_back();
  Eigen::Vector3d lo = positions_[order_[begin]];
  Eigen::Vector3d hi = lo;
  for (std::uint32_t i = begin + 1; i < end; ++i) {
    lo = lo.cwiseMin(positions_[order_[i]]);
    hi = hi.cwiseMax(positions_[order_[i]]);
  }
  nodes_[id].lo = lo;
  nodes_[id].hi = hi;
  nodes_[id].begin = begin;
  nodes_[id].end = end;

  Eigen::Index axis = 0;
  const double extent = (hi - lo).maxCoeff(&axis);
  if (end - begin <= kLeafSize || extent <= 0.0) return id;

  const std::uint32_t mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) {
                     return positions_[a][axis] < positions_[b][axis];
                   });
  const std::uint32_t left = build(begin, mid);
  const std::uint32_t right = build(mid, end);
  Node& node = nodes_[id];
  node.axis = static_cast<std::int32_t>(axis);
  node.split = positions_[order_[mid]][axis];
  node.left = left;
  node.right = right;
  return id;
}

std::vector<std::size_t> NeighborIndex::radius_search(const Eigen::Vector3d& query,
                                                      double radius) const {
  std::vector<std::size_t> out;
  radius_search(query, radius, out);
  return out;
}

void NeighborIndex::radius_search(const Eigen::Vector3d& query, double radius,
                                  std::vector<std::size_t>& out) const {
  out.clear();
  if (!(radius >= 0.0)) return;
  const double r2 = radius * radius;
  std::uint32_t stack[128];
  int top = 0;
  stack[top++] = 0;
  while (top > 0) {
    const Node& node = nodes_[stack[--top]];
    if (box_distance_sq(query, node.lo, node.hi) > r2) continue;
    if (node.axis < 0) {
      for (std::uint32_t i = node.begin; i < node.end; ++i) {
        const std::uint32_t idx = order_[i];
        if ((positions_[idx] - query).squaredNorm() <= r2) out.push_back(idx);
      }
      continue;
    }
    stack[top++] = node.left;
    stack[top++] = node.right;
  }
  std::sort(out.begin(), out.end());
}

std::vector<std::size_t> NeighborIndex::knn(const Eigen::Vector3d& query, std::size_t k) const {
  k = std::min(k, positions_.size());
  if (k == 0) return {};
  using Entry = std::pair<double, std::uint32_t>;  // (distance^2, index)
  std::priority_queue<Entry> best;                // max-heap on (d2, index)

  auto consider = [&](std::uint32_t idx) {
    const Entry e{(positions_[idx] - query).squaredNorm(), idx};
    if (best.size() < k) {
      best.push(e);
    } else if (e < best.top()) {
      best.pop();
      best.push(e);
    }
  };

  // Best-first descent: nearer child first, prune on box distance.
  std::vector<std::pair<double, std::uint32_t>> stack;
  stack.emplace_back(0.0, 0);
  while (!stack.empty()) {
    const auto [box_d2, id] = stack.back();
    stack.pop_back();
    if (best.size() == k && box_d2 > best.top().first) continue;
    const Node& node = nodes_[id];
    if (node.axis < 0) {
      for (std::uint32_t i = node.begin; i < node.end; ++i) consider(order_[i]);
      continue;
    }
    const double dl = box_distance_sq(query, nodes_[node.left].lo, nodes_[node.left].hi);
    const double dr = box_distance_sq(query, nodes_[node.right].lo, nodes_[node.right].hi);
    if (dl <= dr) {
      stack.emplace_back(dr, node.right);
      stack.emplace_back(dl, node.left);
    } else {
      stack.emplace_back(dl, node.left);
      stack.emplace_back(dr, node.right);
    }
  }

  std::vector<std::size_t> out(best.size());
  for (std::size_t i = out.size(); i-- > 0;) {
    out[i] = best.top().second;
    best.pop();
  }
  return out;
}

LocalFrame frame_from_points(const std::vector<Eigen::Vector3d>& neighbors) {
  LocalFrame frame;
  frame.neighbor_count = neighbors.size();
  if (neighbors.empty()) return frame;

  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  for (const auto& p : neighbors) centroid += p;
  centroid /= static_cast<double>(neighbors.size());
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const auto& p : neighbors) {
    const Eigen::Vector3d d = p - centroid;
    cov.noalias() += d * d.transpose();
  }
  cov /= static_cast<double>(neighbors.size());

  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> solver(cov);
  // Eigen returns ascending eigenvalues.
  const Eigen::Vector3d values = solver.eigenvalues();
  frame.eigenvalues = {std::max(values[2], 0.0), std::max(values[1], 0.0),
                       std::max(values[0], 0.0)};
  Eigen::Vector3d normal = solver.eigenvectors().col(0);
  const double norm = normal.norm();
  normal = norm > 0.0 ? Eigen::Vector3d(normal / norm) : Eigen::Vector3d::UnitZ();
  if (normal.z() < 0.0) normal = -normal;
  frame.normal = normal;
  return frame;
}

std::optional<LocalFrame> local_frame(const NeighborIndex& index, const Eigen::Vector3d& p,
                                      double radius, std::size_t min_neighbors) {
  if (!(radius > 0.0)) throw Error(ErrorKind::invalid_argument, "feature radius must be positive");
  if (min_neighbors < 3) throw Error(ErrorKind::invalid_argument, "min_neighbors must be >= 3");
  thread_local std::vector<std::size_t> ids;
  thread_local std::vector<Eigen::Vector3d> pts;
  index.radius_search(p, radius, ids);
  if (ids.size() < min_neighbors) return std::nullopt;
  pts.clear();
  for (std::size_t i : ids) pts.push_back(index.position(i));
  return frame_from_points(pts);
}

double verticality(const LocalFrame& frame) noexcept {
  return std::clamp(1.0 - std::abs(frame.normal.z()), 0.0, 1.0);
}

double surface_variation(const LocalFrame& frame) noexcept {
  const auto& ev = frame.eigenvalues;
  const double sum = ev[0] + ev[1] + ev[2];
  if (!(sum > 0.0)) return 0.0;
  return std::clamp(ev[2] / sum, 0.0, 1.0 / 3.0);
}

std::vector<std::optional<LocalFrame>> compute_frames(const PointCloud& cloud,
                                                      const NeighborIndex& index,
                                                      const FeatureParams& params) {
  std::vector<std::optional<LocalFrame>> frames(cloud.size());
  parallel_for(cloud.size(), [&](std::size_t i) {
    frames[i] = local_frame(index, cloud.points[i].position(), params.radius, params.min_neighbors);
  });
  return frames;
}

}  // namespace terrasafe
