#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace spinealign {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Proper rigid motion p -> R p + t. Units: mm.
struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static RigidTransform identity() { return {}; }
  static RigidTransform from_axis_angle(const Vec3& rotation_vector, const Vec3& translation);
  // Rotation by `angle` about the line through `pivot` with direction `axis`.
  static RigidTransform rotation_about(const Vec3& pivot, const Vec3& axis, double angle);

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  Vec3 apply_vector(const Vec3& v) const { return rotation * v; }

  RigidTransform inverse() const;
  // (*this) after `rhs`: x -> this(rhs(x)).
  RigidTransform operator*(const RigidTransform& rhs) const;

  Vec3 rotation_vector() const;
  // Rotation angle in radians, in [0, pi].
  double angle() const;
  bool is_valid(double tol = 1e-9) const;
};

struct PointCloud {
  std::vector<Vec3> positions;
  std::vector<Vec3> colors;   // empty or one per point, components in [0,1]
  std::vector<Vec3> normals;  // empty or one unit vector per point

  std::size_t size() const { return positions.size(); }
  bool empty() const { return positions.empty(); }
  bool has_colors() const { return !colors.empty(); }
  bool has_normals() const { return !normals.empty(); }

  // Throws InvalidArgument when optional attributes have the wrong length or
  // normals are not unit length.
  void validate() const;

  PointCloud transformed(const RigidTransform& t) const;
  PointCloud subset(std::span<const std::size_t> indices) const;
};

using Triangle = std::array<std::uint32_t, 3>;

struct TriMesh {
  std::vector<Vec3> vertices;
  std::vector<Triangle> triangles;

  std::size_t vertex_count() const { return vertices.size(); }
  std::size_t triangle_count() const { return triangles.size(); }
  bool empty() const { return triangles.empty(); }

  // Throws InvalidArgument when an index is out of range.
  void validate() const;

  // Drops triangles with (near) zero area or repeated indices, then removes
  // unreferenced vertices. Returns the number of triangles removed.
  std::size_t remove_degenerate(double min_area = 1e-12);

  TriMesh transformed(const RigidTransform& t) const;
  Vec3 vertex_centroid() const;
  double surface_area() const;
  // Signed enclosed volume; positive when faces are oriented outward.
  double signed_volume() const;
  // Unit normal of triangle `t` from its winding (zero for degenerate).
  Vec3 face_normal(std::size_t t) const;
  double face_area(std::size_t t) const;
};

// Appends `b` to `a` with re-based indices.
void append_mesh(TriMesh& a, const TriMesh& b);

struct VoxelMask {
  std::array<std::size_t, 3> dims{0, 0, 0};
  Vec3 spacing = Vec3::Ones();  // mm per voxel
  Vec3 origin = Vec3::Zero();   // world position of voxel (0,0,0), mm
  std::vector<std::uint8_t> occupancy;  // x fastest, then y, then z

  VoxelMask() = default;
  VoxelMask(std::array<std::size_t, 3> dims, Vec3 spacing, Vec3 origin);

  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const {
    return x + dims[0] * (y + dims[1] * z);
  }
  bool at(std::size_t x, std::size_t y, std::size_t z) const { return occupancy[index(x, y, z)] != 0; }
  void set(std::size_t x, std::size_t y, std::size_t z, bool v) { occupancy[index(x, y, z)] = v ? 1 : 0; }
  Vec3 world(double x, double y, double z) const {
    return origin + Vec3(x * spacing.x(), y * spacing.y(), z * spacing.z());
  }
  std::size_t voxel_count() const { return dims[0] * dims[1] * dims[2]; }
  void validate() const;
};

struct PrincipalFrame {
  Vec3 centroid = Vec3::Zero();
  std::array<Vec3, 3> axes{Vec3::UnitX(), Vec3::UnitY(), Vec3::UnitZ()};
  Vec3 variances = Vec3::Zero();  // descending, mm^2
};

std::vector<Vec3> transform_points(const RigidTransform& t, std::span<const Vec3> points);

}  // namespace spinealign
