#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "mlidar/geometry.hpp"

namespace mlidar {

struct Neighbor {
  std::uint32_t index;
  double dist2;
};

/// Static 3-d tree over a point set. Holds a reference to the points; the
/// caller keeps them alive and unchanged for the lifetime of the tree.
class KdTree {
 public:
  KdTree() = default;
  explicit KdTree(std::span<const Vec3> points);

  /// k nearest neighbours sorted by ascending distance (ties by index).
  std::vector<Neighbor> knn(const Vec3& query, std::size_t k) const;
  /// k nearest plus every further point tied with the k-th within a relative
  /// distance tolerance, so the result does not depend on rounding on grids.
  std::vector<Neighbor> knn_with_ties(const Vec3& query, std::size_t k, double rel_tol = 1e-6) const;

  /// Nearest point with squared distance <= max_dist2, if any.
  bool nearest(const Vec3& query, double max_dist2, Neighbor& out) const;

  /// All points within radius (unsorted).
  void radius(const Vec3& query, double r, std::vector<Neighbor>& out) const;

  std::size_t size() const { return index_.size(); }
  bool empty() const { return index_.empty(); }

 private:
  struct Node {
    std::int32_t left = -1;
    std::int32_t right = -1;
    std::uint32_t begin = 0;  // leaf range into index_
    std::uint32_t end = 0;
    std::int8_t axis = -1;  // -1 for leaves
    double split = 0.0;
  };

  std::int32_t build(std::uint32_t begin, std::uint32_t end);

  template <typename Visitor>
  void search(std::int32_t node, const Vec3& q, Visitor& visit, double& bound2) const;

  std::span<const Vec3> points_;
  std::vector<std::uint32_t> index_;
  std::vector<Node> nodes_;
};

}  // namespace mlidar
