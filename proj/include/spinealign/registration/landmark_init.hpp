#pragma once

#include <span>
#include <vector>

#include "spinealign/kinematics/spine_model.hpp"

namespace spinealign::registration {

// A landmark cue tied to the vertebra it was picked on.
struct LinkLandmark {
  std::size_t link = 0;
  Vec3 pre;    // rest frame of the model
  Vec3 intra;  // scene frame
};

// Articulated starting pose from per-vertebra landmarks. Each link with at
// least three non-collinear cues gets its own rigid fit; joints between two
// such neighbouring links take the angles of the relative motion, clamped to
// the limits, and all other joints stay at zero. The global transform is then
// refit over every cue with the chosen angles applied.
kinematics::ArticulatedPose landmark_pose_init(const kinematics::SpineModel& model,
                                               std::span<const LinkLandmark> landmarks);

}  // namespace spinealign::registration
