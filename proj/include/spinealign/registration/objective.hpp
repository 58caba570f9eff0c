#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "spinealign/geometry/kdtree.hpp"
#include "spinealign/geometry/types.hpp"
#include "spinealign/kinematics/spine_model.hpp"

namespace spinealign::registration {

struct OptimizerConfig {
  double corr_threshold = 8.0;  // mm
  int basinhop_iterations = 50;
  // Hop size per parameter, as a fraction of that parameter's box half-width.
  double hop_step = 0.5;
  double metropolis_temperature = 0.1;
  int inner_max_iters = 50;
  int lbfgs_memory = 8;
  double fd_step_angle = 1e-3;        // rad
  double fd_step_translation = 0.1;   // mm
  double global_rotation_bound = 0.2617993877991494;  // rad (15 deg) per axis-angle component
  double global_translation_bound = 50.0;             // mm per component
  std::size_t sample_count = 3000;  // mesh points used inside the objective
  bool smooth_objective = false;
  double smooth_width = 1.0;  // mm
  double inner_gradient_tolerance = 1e-6;
  double inner_value_tolerance = 1e-9;
  std::uint64_t seed = 0;

  // Throws InvalidArgument naming the first bad field.
  void validate() const;
};

nlohmann::json config_to_json(const OptimizerConfig& cfg);
// Missing keys keep their defaults; unknown keys are rejected.
OptimizerConfig config_from_json(const nlohmann::json& doc);

struct ObjectiveReport {
  double corr_ratio = 0.0;
  double containment = 1.0;
  double combined = 1.0;
  std::size_t pairs = 0;
  bool smoothed = false;

  static double combine(double corr_ratio, double containment) { return 0.5 * (1.0 - corr_ratio) + 0.5 * containment; }
};

nlohmann::json report_to_json(const ObjectiveReport& r);

// Points sampled on the rest-pose model surface, tagged with their link.
struct ModelSample {
  std::vector<Vec3> points;
  std::vector<std::uint32_t> link;
};

ModelSample sample_model(const kinematics::SpineModel& model, std::size_t count, std::uint64_t seed);
std::vector<Vec3> pose_sample(const kinematics::SpineModel& model, const ModelSample& sample,
                              const kinematics::ArticulatedPose& pose);

// Flat parameter vector for the optimizer:
//   [3 angles per joint..., rotation vector (3), translation (3)]
// The last six describe a rigid correction applied on top of the initial
// global transform, rotating about the model centroid as placed by that
// initial transform. Bounds are the joint limits and +-global bounds.
class PoseCodec {
 public:
  PoseCodec(const kinematics::SpineModel& model, const RigidTransform& init_global, const OptimizerConfig& cfg);

  std::size_t size() const { return lower_.size(); }
  std::size_t joint_parameters() const { return joint_parameters_; }
  const std::vector<double>& lower() const { return lower_; }
  const std::vector<double>& upper() const { return upper_; }
  // Finite-difference step for each parameter.
  const std::vector<double>& fd_steps() const { return fd_steps_; }
  const Vec3& pivot() const { return pivot_; }
  const RigidTransform& init_global() const { return init_global_; }

  std::vector<double> encode(const kinematics::ArticulatedPose& pose) const;
  kinematics::ArticulatedPose decode(std::span<const double> x) const;
  std::vector<double> project(std::span<const double> x) const;

 private:
  std::size_t joint_parameters_ = 0;
  RigidTransform init_global_;
  Vec3 pivot_ = Vec3::Zero();
  std::vector<double> lower_, upper_, fd_steps_;
};

// Evaluation state shared by all objective calls of one optimization: the
// model, the scene with its index, and a fixed model surface sample.
// Holds references; `model`, `scene` and `scene_index` must outlive it.
class ObjectiveContext {
 public:
  ObjectiveContext(const kinematics::SpineModel& model, const PointCloud& scene, const geometry::KdTree& scene_index,
                   const OptimizerConfig& cfg, const RigidTransform& init_global);

  // Clamps the pose, deforms the sample and scores it. Uses the smoothed
  // terms when cfg.smooth_objective is set.
  ObjectiveReport evaluate(const kinematics::ArticulatedPose& pose) const;
  // Always the thresholded count and sign test.
  ObjectiveReport evaluate_hard(const kinematics::ArticulatedPose& pose) const;
  ObjectiveReport evaluate_vector(std::span<const double> x) const;

  const kinematics::SpineModel& model() const { return model_; }
  const PointCloud& scene() const { return scene_; }
  const geometry::KdTree& scene_index() const { return index_; }
  const OptimizerConfig& config() const { return cfg_; }
  const ModelSample& sample() const { return sample_; }
  const PoseCodec& codec() const { return codec_; }

 private:
  ObjectiveReport score(const kinematics::ArticulatedPose& pose, bool smooth) const;

  const kinematics::SpineModel& model_;
  const PointCloud& scene_;
  const geometry::KdTree& index_;
  OptimizerConfig cfg_;
  ModelSample sample_;
  PoseCodec codec_;
};

}  // namespace spinealign::registration
