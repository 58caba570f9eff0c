#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include <json.hpp>

#include "spinealign/kinematics/spine_model.hpp"
#include "spinealign/registration/articulated_icp.hpp"
#include "spinealign/registration/icp.hpp"
#include "spinealign/registration/landmark_init.hpp"
#include "spinealign/registration/objective.hpp"
#include "spinealign/registration/optimizer.hpp"

namespace spinealign::phantom {

// Procedural lumbar-like vertebrae. Rest frame: x mediolateral, y
// anteroposterior with the spinous process toward +y, z longitudinal
// (caudal -> rostral). Vertebra i has its body centre at z = i * pitch.
struct PhantomSpec {
  std::size_t n_vertebrae = 4;
  double scale = 40.0;      // mm; body width is 0.9 * scale
  double gap = 8.0;         // mm between vertebral bodies
  double voxel_size = 1.0;  // mm, meshing resolution
  double jitter = 0.05;     // relative per-vertebra size variation
  std::uint64_t seed = 0;

  void validate() const;
  double pitch() const { return 0.6 * scale + gap; }
};

struct ScanSpec {
  Vec3 viewpoint = Vec3(0, 400, 0);  // scene frame, mm
  std::vector<std::size_t> exposed;  // link indices
  double noise_sigma = 0.0;          // mm
  std::size_t point_count = 20000;   // before occlusion
  double occlusion_fraction = 0.0;   // in [0, 1)
  bool zbuffer = false;              // drop points hidden behind other surfaces
  std::size_t normal_neighbors = 30;
  std::uint64_t seed = 0;

  void validate(std::size_t link_count) const;
};

kinematics::SpineModel make_phantom(const PhantomSpec& spec);

// Deforms the model, samples the camera-facing surface of the exposed
// vertebrae, cuts a contiguous occlusion patch, adds noise and estimates
// normals oriented toward the viewpoint.
PointCloud simulate_scan(const kinematics::SpineModel& model, const kinematics::ArticulatedPose& pose,
                         const ScanSpec& scan);

// Camera position in the rest frame: `distance` mm posterior of the middle
// of the spine.
Vec3 posterior_viewpoint(const kinematics::SpineModel& model, double distance);

// Rest-frame landmark cues per link: spinous tip (max y), then left and
// right transverse tips (min x, max x).
std::vector<Vec3> phantom_landmarks(const kinematics::SpineModel& model, const std::vector<std::size_t>& links);

// Pointing-gesture cues: the phantom_landmarks of `links` paired with their
// positions under `gt_pose`, plus Gaussian noise per coordinate.
std::vector<registration::LinkLandmark> landmark_cues(const kinematics::SpineModel& model,
                                                     const kinematics::ArticulatedPose& gt_pose,
                                                     const std::vector<std::size_t>& links, double noise_sigma,
                                                     std::uint64_t seed);

// Ranges for random articulated ground truths.
struct PoseRanges {
  double ml_min = 0.08726646259971647;  // rad, 5 deg; one random sign per pose
  double ml_max = 0.20943951023931956;  // 12 deg
  double ap_max = 0.08726646259971647;  // 5 deg
  double lon_max = 0.04363323129985824; // 2.5 deg
  double global_rotation_max = 0.17453292519943295;  // 10 deg
  double global_translation_max = 20.0;               // mm
};

kinematics::ArticulatedPose random_pose(const kinematics::SpineModel& model, const PoseRanges& ranges,
                                        std::mt19937_64& rng);

struct TrialOptions {
  double fitness_threshold = 8.0;   // mm
  std::size_t fitness_sample = 30000;
  int icp_max_iterations = 100;
  double landmark_noise = 1.0;      // mm, Gaussian per coordinate
  // Scene-driven articulated ICP after the objective search, standing in for
  // the manual joint adjustment of the labelling tool.
  bool articulated_refine = true;
};

struct TrialReport {
  std::uint64_t seed = 0;
  std::size_t exposure = 0;
  registration::FitnessReport rigid;
  registration::FitnessReport deformed;
  kinematics::ArticulatedPose gt_pose;
  kinematics::ArticulatedPose recovered_pose;
  RigidTransform coarse;
  std::vector<double> angle_errors;   // recovered - truth, rad, 3 per joint
  double global_translation_error = 0.0;  // mm, at the model centroid
  double global_rotation_error = 0.0;     // rad
  registration::ObjectiveReport objective;  // at the optimized pose
  double elapsed_ms = 0.0;
};

nlohmann::json trial_to_json(const TrialReport& r);

// Full pipeline for one phantom: scan at gt_pose, landmark coarse alignment,
// rigid ICP baseline, articulated optimization followed by ICP.
TrialReport run_trial(const PhantomSpec& spec, const ScanSpec& scan, const kinematics::ArticulatedPose& gt_pose,
                      const registration::OptimizerConfig& cfg, const TrialOptions& options = {});

// Recomputes the error fields of a report from its poses.
void compute_pose_errors(const kinematics::SpineModel& model, TrialReport& report);

}  // namespace spinealign::phantom
