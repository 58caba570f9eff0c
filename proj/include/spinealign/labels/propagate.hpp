#pragma once

#include <filesystem>
#include <string>

#include "spinealign/kinematics/spine_model.hpp"
#include "spinealign/labels/label.hpp"

namespace spinealign::labels {

// Surface samples the label's transforms apply to: the deformed model with
// the global transform left out, and the rest-pose model. Both are fully
// determined by the pose and cfg.sample_count / cfg.sample_seed.
PointCloud deformed_sample(const kinematics::SpineModel& model, const kinematics::ArticulatedPose& pose,
                           const PropagationConfig& cfg);
PointCloud rigid_sample(const kinematics::SpineModel& model, const PropagationConfig& cfg);

// Labels a sequence from the articulated pose found on its reference frame.
// The reference entry keeps pose.global for the deformed sample and runs a
// rigid ICP for the rest-pose sample; each later frame runs ICP for both
// samples starting from the previous frame's transforms. Frames before the
// reference are not visited. Unreadable frames are recorded as skipped and
// the chain continues from the last good frame. An unreadable reference
// frame throws.
//
// When `label_dir` is given, cloud paths are recorded relative to it and the
// crops are also written there as binary PLY subsets.
AlignmentLabel propagate_labels(const SequenceRecord& seq, const kinematics::SpineModel& model,
                                const std::string& model_ref, const kinematics::ArticulatedPose& pose,
                                const PropagationConfig& cfg, const std::filesystem::path& label_dir = {});

// Worst nearest-neighbour distance from a stored crop point to the
// transformed deformed sample, over all frames with crops. Reloads the
// frame clouds from `label_dir`.
double max_stored_crop_distance(const AlignmentLabel& label, const kinematics::SpineModel& model,
                                const std::filesystem::path& label_dir);

}  // namespace spinealign::labels
