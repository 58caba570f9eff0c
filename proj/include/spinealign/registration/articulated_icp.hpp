#pragma once

#include "spinealign/geometry/kdtree.hpp"
#include "spinealign/kinematics/spine_model.hpp"
#include "spinealign/registration/objective.hpp"

namespace spinealign::registration {

struct ArticulatedIcpOptions {
  double threshold = 8.0;           // mm, scene-to-mesh pair cutoff
  int max_iterations = 30;
  std::size_t mesh_samples = 30000;
  std::size_t scene_samples = 4000;  // evenly strided subset of the scene
  double convergence = 1e-4;        // max parameter change, rad or mm
  std::uint64_t seed = 0;
};

struct ArticulatedIcpResult {
  kinematics::ArticulatedPose pose;
  double rmse = 0.0;     // over the final pairs
  double fitness = 0.0;  // matched scene points / scene points used
  int iterations = 0;
};

// ICP over the whole pose vector: scene points are paired with their nearest
// deformed mesh sample point, and joint angles plus the global transform are
// re-fit to those pairs by the bounded quasi-Newton solver. Scene points
// drive the pairing, so mesh surfaces the camera never saw do not bias the
// fit. Bounds are those of `cfg` around the starting global transform.
ArticulatedIcpResult articulated_icp(const kinematics::SpineModel& model, const PointCloud& scene,
                                     const kinematics::ArticulatedPose& init, const OptimizerConfig& cfg,
                                     const ArticulatedIcpOptions& options = {});

}  // namespace spinealign::registration
