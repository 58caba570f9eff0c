#include "spinealign/labels/crop.hpp"

#include <algorithm>

#include "spinealign/error.hpp"

namespace spinealign::labels {

SceneCrop crop_scene(const PointCloud& scene, const PointCloud& deformed_sample, double radius) {
  if (deformed_sample.empty()) throw InvalidArgument("crop_scene: empty mesh sample");
  const geometry::KdTree index(deformed_sample.positions);
  return crop_scene(scene, index, radius);
}

SceneCrop crop_scene(const PointCloud& scene, const geometry::KdTree& sample_index, double radius) {
  if (scene.empty()) throw InvalidArgument("crop_scene: empty scene");
  if (sample_index.empty()) throw InvalidArgument("crop_scene: empty mesh sample");
  if (!(radius >= 0.0)) throw InvalidArgument("crop_scene: radius must be >= 0");

  const std::size_t n = scene.size();
  constexpr std::size_t kOutside = static_cast<std::size_t>(-1);
  std::vector<std::size_t> nearest(n, kOutside);
#pragma omp parallel for schedule(dynamic, 512)
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
    if (auto nb = sample_index.nearest_within(scene.positions[i], radius)) nearest[i] = nb->index;
  }

  SceneCrop crop;
  std::vector<bool> used(sample_index.size(), false);
  for (std::size_t i = 0; i < n; ++i) {
    if (nearest[i] == kOutside) continue;
    crop.scene_indices.push_back(i);
    used[nearest[i]] = true;
  }
  for (std::size_t j = 0; j < used.size(); ++j)
    if (used[j]) crop.mesh_indices.push_back(j);
  return crop;
}

double max_crop_distance(const SceneCrop& crop, const PointCloud& scene, const geometry::KdTree& sample_index) {
  double worst = 0.0;
  for (std::size_t i : crop.scene_indices) {
    if (i >= scene.size()) throw InvalidArgument("max_crop_distance: scene index out of range");
    worst = std::max(worst, sample_index.nearest(scene.positions[i])->distance);
  }
  return worst;
}

}  // namespace spinealign::labels
