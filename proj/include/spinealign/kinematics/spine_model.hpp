#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "spinealign/geometry/types.hpp"

namespace spinealign::kinematics {

// Joint axis order. This is also the order of the per-joint angle triple and
// the order in which the three rotations are composed.
enum Axis : int { kMediolateral = 0, kAnteroposterior = 1, kLongitudinal = 2 };
inline constexpr std::array<const char*, 3> kAxisNames = {"mediolateral", "anteroposterior", "longitudinal"};

struct AngleRange {
  double min = 0.0;  // radians
  double max = 0.0;
};
using JointLimits = std::array<AngleRange, 3>;

// +-13 deg mediolateral, +-6 deg anteroposterior, +-3 deg longitudinal.
JointLimits default_joint_limits();

struct VertebraLink {
  std::string label;
  TriMesh mesh;
  Vec3 centroid = Vec3::Zero();  // mean of mesh vertices
};

struct BallJoint {
  Vec3 position = Vec3::Zero();
  std::array<Vec3, 3> axes = {Vec3::UnitX(), Vec3::UnitY(), Vec3::UnitZ()};  // indexed by Axis
  JointLimits limits = default_joint_limits();

  void validate() const;
};

// Links are ordered caudal -> rostral; joint i connects links i and i+1.
struct SpineModel {
  std::vector<VertebraLink> links;
  std::vector<BallJoint> joints;

  std::size_t link_count() const { return links.size(); }
  std::size_t joint_count() const { return joints.size(); }
  std::size_t angle_count() const { return 3 * joints.size(); }

  // Checks the structural invariants (joint count, midpoint positions,
  // orthonormal axes, limits bracketing zero, centroids).
  void validate() const;

  // All link meshes concatenated in link order.
  TriMesh combined_mesh() const;
};

struct ArticulatedPose {
  std::vector<double> joint_angles;  // 3 per joint, radians, Axis order
  RigidTransform global;

  static ArticulatedPose zero(std::size_t joint_count);
  std::size_t joint_count() const { return joint_angles.size() / 3; }
  double& angle(std::size_t joint, Axis axis) { return joint_angles[3 * joint + axis]; }
  double angle(std::size_t joint, Axis axis) const { return joint_angles[3 * joint + axis]; }

  bool operator==(const ArticulatedPose& other) const;
};

// Builds the chain from meshes ordered caudal -> rostral. Joint frames come
// from the principal axes of the caudal vertebra of each pair.
SpineModel build_chain(const std::vector<std::pair<std::string, TriMesh>>& vertebrae,
                       const JointLimits& limits = default_joint_limits());

// Rotation applied by a joint at rest, about its own position and axes.
RigidTransform joint_motion(const BallJoint& joint, double ml, double ap, double lon);

// Inverse of the rotation part of joint_motion: angles (ml, ap, lon) with
// |ap| <= pi/2 whose composed rotation equals `rotation`.
std::array<double, 3> joint_angles_from_rotation(const BallJoint& joint, const Mat3& rotation);

// One transform per link. Link 0 only receives the global transform.
std::vector<RigidTransform> forward_kinematics(const SpineModel& model, const ArticulatedPose& pose);

// Same as forward_kinematics without the global transform.
std::vector<RigidTransform> local_link_transforms(const SpineModel& model, const ArticulatedPose& pose);

TriMesh deform_mesh(const SpineModel& model, const ArticulatedPose& pose);

ArticulatedPose clamp_pose(const SpineModel& model, const ArticulatedPose& pose);
bool within_limits(const SpineModel& model, const ArticulatedPose& pose);

// Throws DimensionMismatch if the pose does not fit the model.
void check_dimensions(const SpineModel& model, const ArticulatedPose& pose);

// JSON forms. The model document references one PLY per vertebra, relative
// to the directory holding the JSON file.
nlohmann::json pose_to_json(const ArticulatedPose& pose);
ArticulatedPose pose_from_json(const nlohmann::json& doc);
nlohmann::json transform_to_json(const RigidTransform& t);
RigidTransform transform_from_json(const nlohmann::json& doc);

void save_model(const std::filesystem::path& json_path, const SpineModel& model);
SpineModel load_model(const std::filesystem::path& json_path);

}  // namespace spinealign::kinematics
