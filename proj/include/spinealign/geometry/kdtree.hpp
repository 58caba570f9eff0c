#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <vector>

#include "spinealign/geometry/types.hpp"

namespace spinealign::geometry {

struct Neighbor {
  std::size_t index = 0;
  double distance = 0.0;  // mm
};

inline double squared_distance(const Vec3& a, const Vec3& b) {
  const double dx = a.x() - b.x();
  const double dy = a.y() - b.y();
  const double dz = a.z() - b.z();
  return dx * dx + dy * dy + dz * dz;
}

// Exact 3-D kd-tree over a fixed point set. Immutable after construction;
// all queries are const and safe to issue from several threads at once.
// Ties in distance resolve to the smaller point index.
class KdTree {
 public:
  KdTree() = default;
  explicit KdTree(std::span<const Vec3> points, std::size_t leaf_size = 12);

  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }
  const std::vector<Vec3>& points() const { return points_; }

  std::optional<Neighbor> nearest(const Vec3& query) const;
  // Closest point iff its distance is <= max_dist.
  std::optional<Neighbor> nearest_within(const Vec3& query, double max_dist) const;
  // Up to k nearest points, sorted by increasing distance.
  std::vector<Neighbor> knn(const Vec3& query, std::size_t k) const;
  // All points with distance <= radius, in index order.
  std::vector<std::size_t> radius_search(const Vec3& query, double radius) const;

 private:
  struct Node {
    // Leaf when left == kNone; then [begin, end) indexes order_.
    std::uint32_t begin = 0;
    std::uint32_t end = 0;
    std::uint32_t left = kNone;
    std::uint32_t right = kNone;
    double split = 0.0;
    int axis = 0;
  };
  static constexpr std::uint32_t kNone = std::numeric_limits<std::uint32_t>::max();

  std::uint32_t build(std::uint32_t begin, std::uint32_t end, std::size_t leaf_size);
  void search_nearest(std::uint32_t node, const Vec3& q, double& best_sq, std::size_t& best_idx) const;

  std::vector<Vec3> points_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

}  // namespace spinealign::geometry
