#include "spinealign/geometry/kdtree.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>

#include "spinealign/error.hpp"

namespace spinealign::geometry {

KdTree::KdTree(std::span<const Vec3> points, std::size_t leaf_size)
    : points_(points.begin(), points.end()), order_(points.size()) {
  if (points.size() >= kNone) throw InvalidArgument("kd-tree: too many points");
  std::iota(order_.begin(), order_.end(), 0u);
  if (!points_.empty()) {
    nodes_.reserve(2 * points_.size() / std::max<std::size_t>(leaf_size, 1) + 1);
    build(0, static_cast<std::uint32_t>(points_.size()), std::max<std::size_t>(leaf_size, 1));
  }
}

std::uint32_t KdTree::build(std::uint32_t begin, std::uint32_t end, std::size_t leaf_size) {
  const auto id = static_cast<std::uint32_t>(nodes_.size());
  nodes_.push_back(Node{begin, end});
  if (end - begin <= leaf_size) return id;

  Vec3 lo = points_[order_[begin]];
  Vec3 hi = lo;
  for (auto i = begin; i < end; ++i) {
    lo = lo.cwiseMin(points_[order_[i]]);
    hi = hi.cwiseMax(points_[order_[i]]);
  }
  int axis = 0;
  (hi - lo).maxCoeff(&axis);
  if (hi[axis] == lo[axis]) return id;  // all coincident: keep as leaf

  const auto mid = begin + (end - begin) / 2;
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) { return points_[a][axis] < points_[b][axis]; });
  const double split = points_[order_[mid]][axis];

  const auto left = build(begin, mid, leaf_size);
  const auto right = build(mid, end, leaf_size);
  nodes_[id].left = left;
  nodes_[id].right = right;
  nodes_[id].split = split;
  nodes_[id].axis = axis;
  return id;
}

void KdTree::search_nearest(std::uint32_t node_id, const Vec3& q, double& best_sq, std::size_t& best_idx) const {
  const Node& node = nodes_[node_id];
  if (node.left == kNone) {
    for (auto i = node.begin; i < node.end; ++i) {
      const auto idx = order_[i];
      const double d = squared_distance(q, points_[idx]);
      if (d < best_sq || (d == best_sq && idx < best_idx)) {
        best_sq = d;
        best_idx = idx;
      }
    }
    return;
  }
  // Left subtree holds values <= split, right holds values >= split.
  const double diff = q[node.axis] - node.split;
  const auto near = diff <= 0.0 ? node.left : node.right;
  const auto far = diff <= 0.0 ? node.right : node.left;
  search_nearest(near, q, best_sq, best_idx);
  if (diff * diff <= best_sq) search_nearest(far, q, best_sq, best_idx);
}

std::optional<Neighbor> KdTree::nearest(const Vec3& query) const {
  if (points_.empty()) return std::nullopt;
  double best_sq = std::numeric_limits<double>::infinity();
  std::size_t best_idx = std::numeric_limits<std::size_t>::max();
  search_nearest(0, query, best_sq, best_idx);
  return Neighbor{best_idx, std::sqrt(best_sq)};
}

std::optional<Neighbor> KdTree::nearest_within(const Vec3& query, double max_dist) const {
  if (points_.empty() || !(max_dist >= 0.0)) return std::nullopt;
  // Slightly inflated bound for pruning; the exact test is on the distance.
  double best_sq = max_dist * max_dist * (1.0 + 1e-12) + 1e-300;
  std::size_t best_idx = std::numeric_limits<std::size_t>::max();
  search_nearest(0, query, best_sq, best_idx);
  if (best_idx == std::numeric_limits<std::size_t>::max()) return std::nullopt;
  const double d = std::sqrt(best_sq);
  if (d > max_dist) return std::nullopt;
  return Neighbor{best_idx, d};
}

std::vector<Neighbor> KdTree::knn(const Vec3& query, std::size_t k) const {
  std::vector<Neighbor> out;
  if (points_.empty() || k == 0) return out;

  // Max-heap on (squared distance, index).
  using Entry = std::pair<double, std::uint32_t>;
  std::priority_queue<Entry> heap;
  auto bound = [&] { return heap.size() < k ? std::numeric_limits<double>::infinity() : heap.top().first; };

  std::vector<std::uint32_t> stack{0};
  while (!stack.empty()) {
    const Node& node = nodes_[stack.back()];
    stack.pop_back();
    if (node.left == kNone) {
      for (auto i = node.begin; i < node.end; ++i) {
        const Entry e{squared_distance(query, points_[order_[i]]), order_[i]};
        if (heap.size() < k) {
          heap.push(e);
        } else if (e < heap.top()) {
          heap.pop();
          heap.push(e);
        }
      }
      continue;
    }
    const double diff = query[node.axis] - node.split;
    const auto near = diff <= 0.0 ? node.left : node.right;
    const auto far = diff <= 0.0 ? node.right : node.left;
    // Far is pushed first so near is explored first.
    if (diff * diff <= bound()) stack.push_back(far);
    stack.push_back(near);
  }

  out.resize(heap.size());
  for (auto i = heap.size(); i-- > 0;) {
    out[i] = Neighbor{heap.top().second, std::sqrt(heap.top().first)};
    heap.pop();
  }
  return out;
}

std::vector<std::size_t> KdTree::radius_search(const Vec3& query, double radius) const {
  std::vector<std::size_t> out;
  if (points_.empty() || !(radius >= 0.0)) return out;
  const double r_sq = radius * radius * (1.0 + 1e-12);
  std::vector<std::uint32_t> stack{0};
  while (!stack.empty()) {
    const Node& node = nodes_[stack.back()];
    stack.pop_back();
    if (node.left == kNone) {
      for (auto i = node.begin; i < node.end; ++i) {
        const auto idx = order_[i];
        const double d = squared_distance(query, points_[idx]);
        if (d <= r_sq && std::sqrt(d) <= radius) out.push_back(idx);
      }
      continue;
    }
    const double diff = query[node.axis] - node.split;
    if (diff <= 0.0 || diff * diff <= r_sq) stack.push_back(node.left);
    if (diff >= 0.0 || diff * diff <= r_sq) stack.push_back(node.right);
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace spinealign::geometry
