#pragma once

#include <filesystem>

#include "spinealign/phantom/batch.hpp"

namespace spinealign::app {

struct CaseOptions {
  std::size_t exposure = 3;
  std::size_t index = 0;  // trial index within the batch config
  std::size_t frames = 1;
  double drift_per_frame = 0.5;  // mm of camera motion between frames
  Vec3 drift_direction = Vec3(0.6, -0.48, 0.64);
};

struct PhantomCase {
  std::filesystem::path model;      // model JSON
  std::filesystem::path scene;      // first frame
  std::filesystem::path landmarks;  // tagged with their link
  std::filesystem::path sequence;   // manifest over all frames
  std::filesystem::path gt_pose;
  kinematics::ArticulatedPose gt;
};

// Writes one phantom trial's inputs as files: the trial's scan is frame 0 and
// later frames are fresh scans with the camera drifting along
// `drift_direction`.
PhantomCase write_phantom_case(const phantom::BatchConfig& config, const CaseOptions& options,
                               const std::filesystem::path& dir);

}  // namespace spinealign::app
