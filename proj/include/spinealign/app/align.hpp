#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>

#include <json.hpp>

#include "spinealign/app/inputs.hpp"
#include "spinealign/labels/label.hpp"
#include "spinealign/registration/articulated_icp.hpp"
#include "spinealign/registration/optimizer.hpp"

namespace spinealign::app {

struct AlignOptions {
  registration::OptimizerConfig optimizer;
  labels::PropagationConfig label;
  double icp_threshold = 8.0;  // mm, final rigid refinement of the deformed mesh
  int icp_max_iterations = 100;
  bool articulated_refine = true;
  registration::ArticulatedIcpOptions articulated;
  std::string sequence_id = "aligned";
  std::size_t exposure = 0;  // 0: links carrying landmarks, or all links without link tags

  void validate() const;
};

// {"optimizer": {...}, "label": {...}, "align": {...}}; every section and
// key is optional, unknown keys throw ConfigError.
AlignOptions align_options_from_json(const nlohmann::json& doc);
nlohmann::json align_options_to_json(const AlignOptions& o);

// One seed drives the optimizer, the articulated refinement and the label
// sample.
void apply_seed(AlignOptions& o, std::uint64_t seed);

struct AlignResult {
  RigidTransform coarse;
  double landmark_rms = 0.0;  // mm, of the coarse transform
  kinematics::ArticulatedPose init;
  registration::OptimizeResult optimized;
  std::optional<registration::ArticulatedIcpResult> articulated;
  registration::FitnessReport icp;          // final rigid refinement, scene points as source
  registration::ObjectiveReport objective;  // hard terms at the final pose
  kinematics::ArticulatedPose pose;         // final
  labels::AlignmentLabel label;
};

// Landmark coarse alignment, articulated search from the landmark pose,
// optional articulated ICP, rigid ICP of the deformed mesh and a label for
// the reference frame. Throws DegenerateGeometry for collinear landmarks
// (naming the triple) and InvalidArgument for fewer than three.
AlignResult run_align(const kinematics::SpineModel& model, const std::string& model_ref, const PointCloud& scene,
                      const std::filesystem::path& scene_path, std::span<const Landmark> landmarks,
                      const AlignOptions& options, const std::filesystem::path& label_dir,
                      const registration::ProgressCallback& progress = {});

}  // namespace spinealign::app
