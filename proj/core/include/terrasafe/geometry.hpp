#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Core>

#include "terrasafe/cloud_io.hpp"

namespace terrasafe {

/// Static kd-tree over a cloud's positions. Immutable after construction,
/// so concurrent queries from several threads are safe.
class NeighborIndex {
 public:
  /// Throws Error(invalid_argument) on an empty cloud.
  explicit NeighborIndex(const PointCloud& cloud);
  explicit NeighborIndex(std::vector<Eigen::Vector3d> positions);

  std::size_t size() const noexcept { return positions_.size(); }
  const Eigen::Vector3d& position(std::size_t i) const noexcept { return positions_[i]; }

  // Indices of all points with distance <= radius, in ascending index order.
  std::vector<std::size_t> radius_search(const Eigen::Vector3d& query, double radius) const;
  void radius_search(const Eigen::Vector3d& query, double radius,
                     std::vector<std::size_t>& out) const;

  // The k nearest points ordered by distance, ties broken by index.
  std::vector<std::size_t> knn(const Eigen::Vector3d& query, std::size_t k) const;

 private:
  struct Node {
    // Leaf when axis < 0: [begin, end) is a range of order_.
    std::int32_t axis = -1;
    double split = 0.0;
    std::uint32_t begin = 0;
    std::uint32_t end = 0;
    std::uint32_t left = 0;
    std::uint32_t right = 0;
    Eigen::Vector3d lo{0, 0, 0};
    Eigen::Vector3d hi{0, 0, 0};
  };

  std::uint32_t build(std::uint32_t begin, std::uint32_t end);

  std::vector<Eigen::Vector3d> positions_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

/// PCA of a neighborhood: eigenvalues of the covariance about the centroid,
/// sorted descending and clamped at zero, with the smallest-eigenvalue
/// eigenvector as the normal (oriented so normal.z >= 0).
struct LocalFrame {
  Eigen::Vector3d normal{0, 0, 1};
  std::array<double, 3> eigenvalues{0, 0, 0};
  std::size_t neighbor_count = 0;

  bool degenerate() const noexcept {
    return eigenvalues[0] + eigenvalues[1] + eigenvalues[2] <= 0.0;
  }
};

/// Frame of the points in `neighbors`. Requires at least one point.
LocalFrame frame_from_points(const std::vector<Eigen::Vector3d>& neighbors);

/// Frame of the radius neighborhood around p, or nullopt when fewer than
/// min_neighbors points (p itself included, if indexed) fall inside.
/// Throws Error(invalid_argument) unless radius > 0 and min_neighbors >= 3.
std::optional<LocalFrame> local_frame(const NeighborIndex& index, const Eigen::Vector3d& p,
                                      double radius, std::size_t min_neighbors);

// 1 - |n_z|: zero on level ground, one on a vertical wall.
double verticality(const LocalFrame& frame) noexcept;

// lambda3 / (lambda1 + lambda2 + lambda3), in [0, 1/3]; zero for a
// degenerate frame.
double surface_variation(const LocalFrame& frame) noexcept;

struct FeatureParams {
  double radius = 0.5;
  std::size_t min_neighbors = 8;
};

/// local_frame for every point of the cloud, computed in parallel.
std::vector<std::optional<LocalFrame>> compute_frames(const PointCloud& cloud,
                                                      const NeighborIndex& index,
                                                      const FeatureParams& params);

}  // namespace terrasafe
