#pragma once

#include <span>
#include <vector>

#include <json.hpp>

#include "spinealign/geometry/kdtree.hpp"
#include "spinealign/geometry/types.hpp"

namespace spinealign::registration {

struct FitnessReport {
  double fitness = 0.0;      // matched source points / source points
  double inlier_rmse = 0.0;  // mm, over matched pairs
  int iterations = 0;
  RigidTransform transform;  // maps the source into the target frame
};

nlohmann::json fitness_to_json(const FitnessReport& r);
FitnessReport fitness_from_json(const nlohmann::json& doc);

// Fitness and inlier RMSE of `source` as it stands.
FitnessReport evaluate_alignment(std::span<const Vec3> source, const geometry::KdTree& target_index, double threshold);

inline constexpr double kIcpConvergence = 1e-6;  // rad + mm of the last update

// Point-to-point ICP starting from `init`. Stops when an update moves less
// than kIcpConvergence or after max_iterations. With no correspondences at
// `init` the report has fitness 0 and transform = init.
// `fitness_history`, when given, receives the fitness before each update.
FitnessReport icp_refine(std::span<const Vec3> source, const geometry::KdTree& target_index, double threshold,
                         int max_iterations, const RigidTransform& init = RigidTransform::identity(),
                         std::vector<double>* fitness_history = nullptr);

// ICP with the roles swapped: `scene` is the moving set and `model_index`
// the target. `init` and the returned transform both map model -> scene;
// fitness and RMSE are those of the scene points.
FitnessReport icp_refine_reverse(std::span<const Vec3> scene, const geometry::KdTree& model_index, double threshold,
                                 int max_iterations, const RigidTransform& init = RigidTransform::identity());

}  // namespace spinealign::registration
