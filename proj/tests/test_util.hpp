#pragma once

// Shared fixtures for the unit tests. Everything here is deliberately naive:
// brute-force loops and analytic constructions that do not go through the
// library code paths they are used to check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "spinealign/geometry/types.hpp"

namespace spinealign::testing {

inline constexpr double kPi = 3.14159265358979323846;
inline double deg(double d) { return d * kPi / 180.0; }

inline std::vector<Vec3> random_points(std::size_t n, std::uint64_t seed, double extent = 100.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-extent / 2, extent / 2);
  std::vector<Vec3> pts(n);
  for (auto& p : pts) p = Vec3(u(rng), u(rng), u(rng));
  return pts;
}

inline PointCloud random_cloud(std::size_t n, std::uint64_t seed, double extent = 100.0) {
  PointCloud c;
  c.positions = random_points(n, seed, extent);
  return c;
}

inline Mat3 random_rotation(std::mt19937_64& rng, double max_angle = kPi) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, max_angle);
  Vec3 axis(g(rng), g(rng), g(rng));
  axis.normalize();
  return Eigen::AngleAxisd(u(rng), axis).toRotationMatrix();
}

inline RigidTransform random_transform(std::mt19937_64& rng, double max_angle = kPi, double max_t = 100.0) {
  std::uniform_real_distribution<double> u(-max_t, max_t);
  RigidTransform t;
  t.rotation = random_rotation(rng, max_angle);
  t.translation = Vec3(u(rng), u(rng), u(rng));
  return t;
}

inline double brute_sq(const Vec3& a, const Vec3& b) {
  double s = 0.0;
  for (int k = 0; k < 3; ++k) s += (a[k] - b[k]) * (a[k] - b[k]);
  return s;
}

// Index and distance of the closest point; ties go to the smaller index.
inline std::pair<std::size_t, double> brute_nearest(const std::vector<Vec3>& pts, const Vec3& q) {
  std::size_t best = 0;
  double best_sq = INFINITY;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double d = brute_sq(pts[i], q);
    if (d < best_sq) {
      best_sq = d;
      best = i;
    }
  }
  return {best, std::sqrt(best_sq)};
}

inline double brute_chamfer(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  double ab = 0.0, ba = 0.0;
  for (const auto& p : a) ab += brute_nearest(b, p).second;
  for (const auto& p : b) ba += brute_nearest(a, p).second;
  return 0.5 * (ab / a.size() + ba / b.size());
}

inline double brute_hausdorff(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  double h = 0.0;
  for (const auto& p : a) h = std::max(h, brute_nearest(b, p).second);
  for (const auto& p : b) h = std::max(h, brute_nearest(a, p).second);
  return h;
}

// Closed axis-aligned box with outward winding.
inline TriMesh box_mesh(const Vec3& lo, const Vec3& hi) {
  TriMesh m;
  for (int i = 0; i < 8; ++i) {
    m.vertices.emplace_back((i & 1) ? hi.x() : lo.x(), (i & 2) ? hi.y() : lo.y(), (i & 4) ? hi.z() : lo.z());
  }
  const std::uint32_t f[12][3] = {{0, 2, 1}, {1, 2, 3}, {4, 5, 6}, {5, 7, 6}, {0, 1, 4}, {1, 5, 4},
                                  {2, 6, 3}, {3, 6, 7}, {0, 4, 2}, {2, 4, 6}, {1, 3, 5}, {3, 7, 5}};
  for (auto& t : f) m.triangles.push_back({t[0], t[1], t[2]});
  return m;
}

// Box "vertebra" with a posterior fin along +y so the largest principal axis
// and its sign are unambiguous. Centred near `at`.
inline TriMesh finned_block(const Vec3& at) {
  TriMesh m = box_mesh(at + Vec3(-15, -10, -8), at + Vec3(15, 10, 8));
  const TriMesh fin = box_mesh(at + Vec3(-2, 10, -3), at + Vec3(2, 40, 3));
  const auto base = static_cast<std::uint32_t>(m.vertices.size());
  m.vertices.insert(m.vertices.end(), fin.vertices.begin(), fin.vertices.end());
  for (const auto& t : fin.triangles) m.triangles.push_back({t[0] + base, t[1] + base, t[2] + base});
  return m;
}

// Digitized ball: voxel centres within `radius` voxels of the grid centre.
inline VoxelMask sphere_mask(double radius, std::size_t n, double spacing = 1.0) {
  VoxelMask mask({n, n, n}, Vec3::Constant(spacing), Vec3::Zero());
  const double c = (static_cast<double>(n) - 1.0) / 2.0;
  for (std::size_t z = 0; z < n; ++z)
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x) {
        const double dx = x - c, dy = y - c, dz = z - c;
        mask.set(x, y, z, dx * dx + dy * dy + dz * dz <= radius * radius);
      }
  return mask;
}

// Counts V - E + F for a triangle mesh.
inline long euler_characteristic(const TriMesh& m) {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges;
  for (const auto& t : m.triangles) {
    for (int i = 0; i < 3; ++i) {
      auto a = t[i], b = t[(i + 1) % 3];
      edges.emplace_back(std::min(a, b), std::max(a, b));
    }
  }
  std::sort(edges.begin(), edges.end());
  const auto e = std::unique(edges.begin(), edges.end()) - edges.begin();
  return static_cast<long>(m.vertices.size()) - static_cast<long>(e) + static_cast<long>(m.triangles.size());
}

// True when every undirected edge is used by exactly two triangles with
// opposite directions (closed, consistently oriented manifold).
inline bool is_closed_oriented(const TriMesh& m) {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> directed;
  for (const auto& t : m.triangles) {
    for (int i = 0; i < 3; ++i) directed.emplace_back(t[i], t[(i + 1) % 3]);
  }
  std::sort(directed.begin(), directed.end());
  if (std::adjacent_find(directed.begin(), directed.end()) != directed.end()) return false;
  for (const auto& [a, b] : directed) {
    if (!std::binary_search(directed.begin(), directed.end(), std::make_pair(b, a))) return false;
  }
  return true;
}

// Closest point on triangle (a, b, c) to p, by Voronoi-region case analysis.
inline Vec3 closest_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0 && d2 <= 0) return a;
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0 && d4 <= d3) return b;
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0 && d1 >= 0 && d3 <= 0) return a + ab * (d1 / (d1 - d3));
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0 && d5 <= d6) return c;
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0 && d2 >= 0 && d6 <= 0) return a + ac * (d2 / (d2 - d6));
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0 && (d4 - d3) >= 0 && (d5 - d6) >= 0) return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

inline double brute_mesh_distance(const TriMesh& m, const Vec3& p) {
  double best = INFINITY;
  for (const auto& t : m.triangles) {
    const Vec3 q = closest_on_triangle(p, m.vertices[t[0]], m.vertices[t[1]], m.vertices[t[2]]);
    best = std::min(best, (q - p).norm());
  }
  return best;
}

}  // namespace spinealign::testing
