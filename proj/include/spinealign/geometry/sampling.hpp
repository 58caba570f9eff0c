#pragma once

#include <cstdint>
#include <vector>

#include "spinealign/geometry/types.hpp"

namespace spinealign::geometry {

struct SurfaceSample {
  PointCloud cloud;                  // positions + face normals
  std::vector<std::uint32_t> faces;  // source triangle of each point
};

// Area-weighted uniform sampling of the mesh surface. Deterministic for a
// given seed. Throws InvalidArgument for a mesh without positive area.
PointCloud sample_surface(const TriMesh& mesh, std::size_t count, std::uint64_t seed);
SurfaceSample sample_surface_with_faces(const TriMesh& mesh, std::size_t count, std::uint64_t seed);

// Same, restricted to the triangles for which `keep[t]` is true.
SurfaceSample sample_faces(const TriMesh& mesh, const std::vector<bool>& keep, std::size_t count,
                           std::uint64_t seed);

// One point per occupied cubic voxel of edge `voxel` (grid anchored at the
// origin): the mean position and mean colour of its points. Output order is
// the order in which voxels are first hit. Normals are dropped.
// Throws InvalidArgument unless voxel > 0.
PointCloud voxel_downsample(const PointCloud& cloud, double voxel);

}  // namespace spinealign::geometry
