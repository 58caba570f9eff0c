#pragma once

#include <cstddef>
#include <vector>

#include "spinealign/geometry/kdtree.hpp"
#include "spinealign/geometry/types.hpp"

namespace spinealign::labels {

inline constexpr double kDefaultCropRadius = 50.0;  // mm

struct SceneCrop {
  std::vector<std::size_t> scene_indices;  // ascending
  std::vector<std::size_t> mesh_indices;   // ascending, into the mesh sample
};

// Scene points whose nearest mesh-sample point lies within `radius`, and the
// mesh-sample points that are the nearest neighbour of at least one of them.
// Throws InvalidArgument when either cloud is empty or radius < 0.
SceneCrop crop_scene(const PointCloud& scene, const PointCloud& deformed_sample, double radius = kDefaultCropRadius);
SceneCrop crop_scene(const PointCloud& scene, const geometry::KdTree& sample_index,
                     double radius = kDefaultCropRadius);

// Largest nearest-neighbour distance of a cropped scene point. 0 for an
// empty crop.
double max_crop_distance(const SceneCrop& crop, const PointCloud& scene, const geometry::KdTree& sample_index);

}  // namespace spinealign::labels
