#include "spinealign/geometry/sampling.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <unordered_map>

#include "spinealign/error.hpp"

namespace spinealign::geometry {

SurfaceSample sample_faces(const TriMesh& mesh, const std::vector<bool>& keep, std::size_t count,
                           std::uint64_t seed) {
  mesh.validate();
  std::vector<double> cumulative(mesh.triangles.size());
  double total = 0.0;
  for (std::size_t t = 0; t < mesh.triangles.size(); ++t) {
    if (keep.empty() || keep[t]) total += mesh.face_area(t);
    cumulative[t] = total;
  }
  if (!(total > 0.0)) throw InvalidArgument("sample_surface: mesh has no surface area to sample");

  SurfaceSample out;
  out.cloud.positions.reserve(count);
  out.cloud.normals.reserve(count);
  out.faces.reserve(count);

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  for (std::size_t i = 0; i < count; ++i) {
    const double u = uniform(rng) * total;
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    if (it == cumulative.end()) --it;
    // upper_bound never lands on a zero-area or excluded face.
    const auto t = static_cast<std::size_t>(it - cumulative.begin());

    const auto& tri = mesh.triangles[t];
    const double r1 = std::sqrt(uniform(rng));
    const double r2 = uniform(rng);
    const Vec3& a = mesh.vertices[tri[0]];
    const Vec3& b = mesh.vertices[tri[1]];
    const Vec3& c = mesh.vertices[tri[2]];
    out.cloud.positions.push_back((1.0 - r1) * a + r1 * (1.0 - r2) * b + r1 * r2 * c);
    out.cloud.normals.push_back(mesh.face_normal(t));
    out.faces.push_back(static_cast<std::uint32_t>(t));
  }
  return out;
}

SurfaceSample sample_surface_with_faces(const TriMesh& mesh, std::size_t count, std::uint64_t seed) {
  return sample_faces(mesh, {}, count, seed);
}

PointCloud sample_surface(const TriMesh& mesh, std::size_t count, std::uint64_t seed) {
  return sample_surface_with_faces(mesh, count, seed).cloud;
}

PointCloud voxel_downsample(const PointCloud& cloud, double voxel) {
  if (!(voxel > 0.0)) throw InvalidArgument("voxel_downsample: voxel size must be > 0");
  cloud.validate();
  struct KeyHash {
    std::size_t operator()(const std::array<std::int64_t, 3>& k) const {
      return static_cast<std::size_t>(k[0] * 73856093) ^ static_cast<std::size_t>(k[1] * 19349663) ^
             static_cast<std::size_t>(k[2] * 83492791);
    }
  };
  std::unordered_map<std::array<std::int64_t, 3>, std::size_t, KeyHash> slot;
  std::vector<Vec3> pos_sum, col_sum;
  std::vector<std::size_t> count;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const Vec3& p = cloud.positions[i];
    const std::array<std::int64_t, 3> key = {static_cast<std::int64_t>(std::floor(p.x() / voxel)),
                                             static_cast<std::int64_t>(std::floor(p.y() / voxel)),
                                             static_cast<std::int64_t>(std::floor(p.z() / voxel))};
    auto [it, fresh] = slot.try_emplace(key, pos_sum.size());
    if (fresh) {
      pos_sum.push_back(Vec3::Zero());
      col_sum.push_back(Vec3::Zero());
      count.push_back(0);
    }
    pos_sum[it->second] += p;
    if (cloud.has_colors()) col_sum[it->second] += cloud.colors[i];
    ++count[it->second];
  }
  PointCloud out;
  out.positions.resize(pos_sum.size());
  if (cloud.has_colors()) out.colors.resize(pos_sum.size());
  for (std::size_t v = 0; v < pos_sum.size(); ++v) {
    const double n = static_cast<double>(count[v]);
    out.positions[v] = pos_sum[v] / n;
    if (cloud.has_colors()) out.colors[v] = col_sum[v] / n;
  }
  return out;
}

}  // namespace spinealign::geometry
