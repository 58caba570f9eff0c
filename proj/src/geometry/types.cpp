#include "spinealign/geometry/types.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "spinealign/error.hpp"

namespace spinealign {

RigidTransform RigidTransform::from_axis_angle(const Vec3& rotation_vector, const Vec3& translation) {
  RigidTransform t;
  const double angle = rotation_vector.norm();
  if (angle > 0.0) {
    t.rotation = Eigen::AngleAxisd(angle, rotation_vector / angle).toRotationMatrix();
  }
  t.translation = translation;
  return t;
}

RigidTransform RigidTransform::rotation_about(const Vec3& pivot, const Vec3& axis, double angle) {
  RigidTransform t;
  t.rotation = Eigen::AngleAxisd(angle, axis.normalized()).toRotationMatrix();
  t.translation = pivot - t.rotation * pivot;
  return t;
}

RigidTransform RigidTransform::inverse() const {
  RigidTransform inv;
  inv.rotation = rotation.transpose();
  inv.translation = -(inv.rotation * translation);
  return inv;
}

RigidTransform RigidTransform::operator*(const RigidTransform& rhs) const {
  RigidTransform out;
  out.rotation = rotation * rhs.rotation;
  out.translation = rotation * rhs.translation + translation;
  return out;
}

Vec3 RigidTransform::rotation_vector() const {
  const Eigen::AngleAxisd aa(rotation);
  return aa.axis() * aa.angle();
}

double RigidTransform::angle() const {
  // acos of the trace loses precision near 0; use the quaternion instead.
  const Eigen::Quaterniond q(rotation);
  return 2.0 * std::atan2(q.vec().norm(), std::abs(q.w()));
}

bool RigidTransform::is_valid(double tol) const {
  if (!rotation.allFinite() || !translation.allFinite()) return false;
  if (std::abs(rotation.determinant() - 1.0) > tol) return false;
  return (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol;
}

void PointCloud::validate() const {
  if (!colors.empty() && colors.size() != positions.size()) {
    throw InvalidArgument("point cloud: color count " + std::to_string(colors.size()) +
                          " != point count " + std::to_string(positions.size()));
  }
  if (!normals.empty()) {
    if (normals.size() != positions.size()) {
      throw InvalidArgument("point cloud: normal count " + std::to_string(normals.size()) +
                            " != point count " + std::to_string(positions.size()));
    }
    for (std::size_t i = 0; i < normals.size(); ++i) {
      if (std::abs(normals[i].norm() - 1.0) > 1e-6) {
        throw InvalidArgument("point cloud: normal " + std::to_string(i) + " is not unit length");
      }
    }
  }
}

PointCloud PointCloud::transformed(const RigidTransform& t) const {
  PointCloud out;
  out.positions = transform_points(t, positions);
  out.colors = colors;
  out.normals.reserve(normals.size());
  for (const auto& n : normals) out.normals.push_back(t.rotation * n);
  return out;
}

PointCloud PointCloud::subset(std::span<const std::size_t> indices) const {
  PointCloud out;
  out.positions.reserve(indices.size());
  for (auto i : indices) out.positions.push_back(positions[i]);
  if (has_colors()) {
    for (auto i : indices) out.colors.push_back(colors[i]);
  }
  if (has_normals()) {
    for (auto i : indices) out.normals.push_back(normals[i]);
  }
  return out;
}

void TriMesh::validate() const {
  const auto n = vertices.size();
  for (std::size_t t = 0; t < triangles.size(); ++t) {
    for (auto idx : triangles[t]) {
      if (idx >= n) {
        throw InvalidArgument("triangle " + std::to_string(t) + " references vertex " + std::to_string(idx) +
                              " but mesh has " + std::to_string(n) + " vertices");
      }
    }
  }
}

std::size_t TriMesh::remove_degenerate(double min_area) {
  const std::size_t before = triangles.size();
  std::erase_if(triangles, [&](const Triangle& tri) {
    if (tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2]) return true;
    const Vec3 e1 = vertices[tri[1]] - vertices[tri[0]];
    const Vec3 e2 = vertices[tri[2]] - vertices[tri[0]];
    return 0.5 * e1.cross(e2).norm() <= min_area;
  });

  // Compact unreferenced vertices, keeping the survivors in their original order.
  std::vector<bool> used(vertices.size(), false);
  for (const auto& tri : triangles) {
    for (auto idx : tri) used[idx] = true;
  }
  std::vector<std::uint32_t> remap(vertices.size(), UINT32_MAX);
  std::vector<Vec3> kept;
  kept.reserve(vertices.size());
  for (std::size_t i = 0; i < vertices.size(); ++i) {
    if (!used[i]) continue;
    remap[i] = static_cast<std::uint32_t>(kept.size());
    kept.push_back(vertices[i]);
  }
  for (auto& tri : triangles) {
    for (auto& idx : tri) idx = remap[idx];
  }
  vertices = std::move(kept);
  return before - triangles.size();
}

TriMesh TriMesh::transformed(const RigidTransform& t) const {
  TriMesh out;
  out.vertices = transform_points(t, vertices);
  out.triangles = triangles;
  return out;
}

Vec3 TriMesh::vertex_centroid() const {
  Vec3 sum = Vec3::Zero();
  for (const auto& v : vertices) sum += v;
  return vertices.empty() ? sum : Vec3(sum / static_cast<double>(vertices.size()));
}

double TriMesh::face_area(std::size_t t) const {
  const auto& tri = triangles[t];
  const Vec3 e1 = vertices[tri[1]] - vertices[tri[0]];
  const Vec3 e2 = vertices[tri[2]] - vertices[tri[0]];
  return 0.5 * e1.cross(e2).norm();
}

Vec3 TriMesh::face_normal(std::size_t t) const {
  const auto& tri = triangles[t];
  const Vec3 n = (vertices[tri[1]] - vertices[tri[0]]).cross(vertices[tri[2]] - vertices[tri[0]]);
  const double len = n.norm();
  return len > 0.0 ? Vec3(n / len) : Vec3::Zero();
}

double TriMesh::surface_area() const {
  double area = 0.0;
  for (std::size_t t = 0; t < triangles.size(); ++t) area += face_area(t);
  return area;
}

double TriMesh::signed_volume() const {
  double vol = 0.0;
  for (const auto& tri : triangles) {
    vol += vertices[tri[0]].dot(vertices[tri[1]].cross(vertices[tri[2]]));
  }
  return vol / 6.0;
}

void append_mesh(TriMesh& a, const TriMesh& b) {
  const auto base = static_cast<std::uint32_t>(a.vertices.size());
  a.vertices.insert(a.vertices.end(), b.vertices.begin(), b.vertices.end());
  a.triangles.reserve(a.triangles.size() + b.triangles.size());
  for (const auto& tri : b.triangles) a.triangles.push_back({tri[0] + base, tri[1] + base, tri[2] + base});
}

VoxelMask::VoxelMask(std::array<std::size_t, 3> dims_, Vec3 spacing_, Vec3 origin_)
    : dims(dims_), spacing(spacing_), origin(origin_), occupancy(dims_[0] * dims_[1] * dims_[2], 0) {
  validate();
}

void VoxelMask::validate() const {
  if (!(spacing.x() > 0.0 && spacing.y() > 0.0 && spacing.z() > 0.0)) {
    throw InvalidArgument("voxel mask: spacing components must be positive");
  }
  if (occupancy.size() != voxel_count()) {
    throw InvalidArgument("voxel mask: occupancy size " + std::to_string(occupancy.size()) +
                          " does not match dims");
  }
}

std::vector<Vec3> transform_points(const RigidTransform& t, std::span<const Vec3> points) {
  std::vector<Vec3> out(points.size());
  const auto n = static_cast<std::ptrdiff_t>(points.size());
#pragma omp parallel for schedule(static) if (n > 4096)
  for (std::ptrdiff_t i = 0; i < n; ++i) out[i] = t.apply(points[i]);
  return out;
}

}  // namespace spinealign
