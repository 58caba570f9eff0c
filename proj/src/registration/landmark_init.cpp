#include "spinealign/registration/landmark_init.hpp"

#include <optional>

#include "spinealign/error.hpp"
#include "spinealign/registration/procrustes.hpp"

namespace spinealign::registration {

using kinematics::ArticulatedPose;

namespace {

bool spans_plane(const std::vector<Vec3>& p) {
  if (p.size() < 3) return false;
  double scale = 0.0;
  for (const auto& q : p) scale = std::max(scale, (q - p[0]).norm());
  for (std::size_t i = 1; i < p.size(); ++i)
    for (std::size_t j = i + 1; j < p.size(); ++j) {
      if ((p[i] - p[0]).cross(p[j] - p[0]).norm() > 1e-6 * scale * scale) return true;
    }
  return false;
}

}  // namespace

ArticulatedPose landmark_pose_init(const kinematics::SpineModel& model, std::span<const LinkLandmark> landmarks) {
  const std::size_t n = model.link_count();
  std::vector<std::vector<Vec3>> pre(n), intra(n);
  for (const auto& l : landmarks) {
    if (l.link >= n) throw InvalidArgument("landmark link index " + std::to_string(l.link) + " out of range");
    pre[l.link].push_back(l.pre);
    intra[l.link].push_back(l.intra);
  }

  std::vector<std::optional<RigidTransform>> fit(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (spans_plane(pre[i]) && spans_plane(intra[i])) fit[i] = procrustes(pre[i], intra[i]);
  }

  auto pose = ArticulatedPose::zero(model.joint_count());
  for (std::size_t j = 0; j < model.joint_count(); ++j) {
    if (!fit[j] || !fit[j + 1]) continue;
    const Mat3 relative = fit[j]->rotation.transpose() * fit[j + 1]->rotation;
    const auto angles = kinematics::joint_angles_from_rotation(model.joints[j], relative);
    for (int k = 0; k < 3; ++k) pose.angle(j, static_cast<kinematics::Axis>(k)) = angles[k];
  }
  pose = kinematics::clamp_pose(model, pose);

  const auto local = kinematics::local_link_transforms(model, pose);
  std::vector<Vec3> from, to;
  for (const auto& l : landmarks) {
    from.push_back(local[l.link].apply(l.pre));
    to.push_back(l.intra);
  }
  pose.global = coarse_align_landmarks(from, to);
  return pose;
}

}  // namespace spinealign::registration
