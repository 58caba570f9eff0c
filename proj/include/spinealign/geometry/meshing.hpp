#pragma once

#include <cstdint>
#include <vector>

#include "spinealign/geometry/types.hpp"

namespace spinealign::geometry {

inline constexpr double kDefaultIsoLevel = 0.5;
inline constexpr int kDefaultSmoothIterations = 5;
inline constexpr double kDefaultSmoothFactor = 0.5;

// Iso-surface of the occupancy field (0/1 per voxel, sampled at voxel
// centres) in world mm. Voxels outside the grid read as 0, so surfaces that
// touch the grid boundary are closed. Faces are oriented outward.
// Throws InvalidArgument if any grid dimension is < 2.
TriMesh marching_cubes(const VoxelMask& mask, double iso_level = kDefaultIsoLevel);

// Uniform-weight umbrella smoothing: each iteration moves every vertex by
// `factor` toward the mean of its 1-ring neighbours (Jacobi update).
TriMesh laplacian_smooth(const TriMesh& mesh, int iterations = kDefaultSmoothIterations,
                         double factor = kDefaultSmoothFactor);

// Marching cubes followed by Laplacian smoothing with the defaults above.
TriMesh mesh_from_mask(const VoxelMask& mask, int smooth_iterations = kDefaultSmoothIterations,
                       double smooth_factor = kDefaultSmoothFactor);

// Unique 1-ring neighbour lists built from triangle edges.
std::vector<std::vector<std::uint32_t>> vertex_neighbors(const TriMesh& mesh);

}  // namespace spinealign::geometry
