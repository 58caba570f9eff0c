#include "spinealign/registration/objective.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "spinealign/error.hpp"
#include "spinealign/geometry/sampling.hpp"
#include "spinealign/registration/correspondence.hpp"

namespace spinealign::registration {

using kinematics::ArticulatedPose;
using kinematics::SpineModel;

void OptimizerConfig::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) throw InvalidArgument(std::string("optimizer config: ") + name + " must be positive");
  };
  positive(corr_threshold, "corr_threshold");
  positive(hop_step, "hop_step");
  positive(metropolis_temperature, "metropolis_temperature");
  positive(fd_step_angle, "fd_step_angle");
  positive(fd_step_translation, "fd_step_translation");
  positive(global_rotation_bound, "global_rotation_bound");
  positive(global_translation_bound, "global_translation_bound");
  positive(smooth_width, "smooth_width");
  positive(inner_gradient_tolerance, "inner_gradient_tolerance");
  positive(inner_value_tolerance, "inner_value_tolerance");
  if (basinhop_iterations < 0) throw InvalidArgument("optimizer config: basinhop_iterations must be >= 0");
  if (inner_max_iters < 1) throw InvalidArgument("optimizer config: inner_max_iters must be >= 1");
  if (lbfgs_memory < 1) throw InvalidArgument("optimizer config: lbfgs_memory must be >= 1");
  if (sample_count < 1) throw InvalidArgument("optimizer config: sample_count must be >= 1");
}

nlohmann::json config_to_json(const OptimizerConfig& c) {
  return {{"corr_threshold", c.corr_threshold},
          {"basinhop_iterations", c.basinhop_iterations},
          {"hop_step", c.hop_step},
          {"metropolis_temperature", c.metropolis_temperature},
          {"inner_max_iters", c.inner_max_iters},
          {"lbfgs_memory", c.lbfgs_memory},
          {"fd_step_angle", c.fd_step_angle},
          {"fd_step_translation", c.fd_step_translation},
          {"global_rotation_bound", c.global_rotation_bound},
          {"global_translation_bound", c.global_translation_bound},
          {"sample_count", c.sample_count},
          {"smooth_objective", c.smooth_objective},
          {"smooth_width", c.smooth_width},
          {"inner_gradient_tolerance", c.inner_gradient_tolerance},
          {"inner_value_tolerance", c.inner_value_tolerance},
          {"seed", c.seed}};
}

OptimizerConfig config_from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw InvalidArgument("optimizer config must be a JSON object");
  OptimizerConfig c;
  const auto known = config_to_json(c);
  for (const auto& [key, value] : doc.items()) {
    if (!known.contains(key)) throw InvalidArgument("optimizer config: unknown key '" + key + "'");
  }
  auto read = [&](const char* key, auto& field) {
    if (!doc.contains(key)) return;
    try {
      doc.at(key).get_to(field);
    } catch (const nlohmann::json::exception&) {
      throw InvalidArgument(std::string("optimizer config: '") + key + "' has the wrong type");
    }
  };
  read("corr_threshold", c.corr_threshold);
  read("basinhop_iterations", c.basinhop_iterations);
  read("hop_step", c.hop_step);
  read("metropolis_temperature", c.metropolis_temperature);
  read("inner_max_iters", c.inner_max_iters);
  read("lbfgs_memory", c.lbfgs_memory);
  read("fd_step_angle", c.fd_step_angle);
  read("fd_step_translation", c.fd_step_translation);
  read("global_rotation_bound", c.global_rotation_bound);
  read("global_translation_bound", c.global_translation_bound);
  read("sample_count", c.sample_count);
  read("smooth_objective", c.smooth_objective);
  read("smooth_width", c.smooth_width);
  read("inner_gradient_tolerance", c.inner_gradient_tolerance);
  read("inner_value_tolerance", c.inner_value_tolerance);
  read("seed", c.seed);
  c.validate();
  return c;
}

nlohmann::json report_to_json(const ObjectiveReport& r) {
  return {{"corr_ratio", r.corr_ratio},
          {"containment", r.containment},
          {"combined", r.combined},
          {"pairs", r.pairs},
          {"smoothed", r.smoothed}};
}

ModelSample sample_model(const SpineModel& model, std::size_t count, std::uint64_t seed) {
  const TriMesh mesh = model.combined_mesh();
  std::vector<std::uint32_t> face_link;
  face_link.reserve(mesh.triangle_count());
  for (std::size_t i = 0; i < model.link_count(); ++i) {
    face_link.insert(face_link.end(), model.links[i].mesh.triangle_count(), static_cast<std::uint32_t>(i));
  }
  const auto s = geometry::sample_surface_with_faces(mesh, count, seed);
  ModelSample out;
  out.points = s.cloud.positions;
  out.link.reserve(s.faces.size());
  for (auto f : s.faces) out.link.push_back(face_link[f]);
  return out;
}

std::vector<Vec3> pose_sample(const SpineModel& model, const ModelSample& sample, const ArticulatedPose& pose) {
  const auto transforms = kinematics::forward_kinematics(model, pose);
  std::vector<Vec3> out(sample.points.size());
  const auto n = static_cast<std::ptrdiff_t>(out.size());
#pragma omp parallel for schedule(static) if (n > 4096)
  for (std::ptrdiff_t i = 0; i < n; ++i) out[i] = transforms[sample.link[i]].apply(sample.points[i]);
  return out;
}

PoseCodec::PoseCodec(const SpineModel& model, const RigidTransform& init_global, const OptimizerConfig& cfg)
    : joint_parameters_(model.angle_count()), init_global_(init_global) {
  Vec3 centroid = Vec3::Zero();
  for (const auto& link : model.links) centroid += link.centroid;
  if (model.link_count() > 0) centroid /= static_cast<double>(model.link_count());
  pivot_ = init_global.apply(centroid);

  for (const auto& joint : model.joints) {
    for (int a = 0; a < 3; ++a) {
      lower_.push_back(joint.limits[a].min);
      upper_.push_back(joint.limits[a].max);
      fd_steps_.push_back(cfg.fd_step_angle);
    }
  }
  for (int k = 0; k < 3; ++k) {
    lower_.push_back(-cfg.global_rotation_bound);
    upper_.push_back(cfg.global_rotation_bound);
    fd_steps_.push_back(cfg.fd_step_angle);
  }
  for (int k = 0; k < 3; ++k) {
    lower_.push_back(-cfg.global_translation_bound);
    upper_.push_back(cfg.global_translation_bound);
    fd_steps_.push_back(cfg.fd_step_translation);
  }
}

std::vector<double> PoseCodec::encode(const ArticulatedPose& pose) const {
  if (pose.joint_angles.size() != joint_parameters_) {
    throw DimensionMismatch("pose has " + std::to_string(pose.joint_angles.size()) + " angles, expected " +
                            std::to_string(joint_parameters_));
  }
  std::vector<double> x(pose.joint_angles);
  // pose.global = D * init, with D(p) = R (p - c) + c + t.
  const RigidTransform d = pose.global * init_global_.inverse();
  const Vec3 w = d.rotation_vector();
  const Vec3 t = d.translation - pivot_ + d.rotation * pivot_;
  x.insert(x.end(), {w.x(), w.y(), w.z(), t.x(), t.y(), t.z()});
  return x;
}

ArticulatedPose PoseCodec::decode(std::span<const double> x) const {
  if (x.size() != size()) {
    throw DimensionMismatch("parameter vector has " + std::to_string(x.size()) + " entries, expected " +
                            std::to_string(size()));
  }
  ArticulatedPose pose;
  pose.joint_angles.assign(x.begin(), x.begin() + static_cast<std::ptrdiff_t>(joint_parameters_));
  const std::size_t g = joint_parameters_;
  const Vec3 w(x[g], x[g + 1], x[g + 2]);
  const Vec3 t(x[g + 3], x[g + 4], x[g + 5]);
  RigidTransform d = RigidTransform::from_axis_angle(w, Vec3::Zero());
  d.translation = pivot_ - d.rotation * pivot_ + t;
  pose.global = d * init_global_;
  return pose;
}

std::vector<double> PoseCodec::project(std::span<const double> x) const {
  std::vector<double> out(x.begin(), x.end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(out[i], lower_[i], upper_[i]);
  return out;
}

ObjectiveContext::ObjectiveContext(const SpineModel& model, const PointCloud& scene, const geometry::KdTree& scene_index,
                                   const OptimizerConfig& cfg, const RigidTransform& init_global)
    : model_(model),
      scene_(scene),
      index_(scene_index),
      cfg_((cfg.validate(), cfg)),
      sample_(sample_model(model, cfg.sample_count, cfg.seed)),
      codec_(model, init_global, cfg) {
  if (!scene.has_normals()) throw InvalidArgument("objective: scene cloud needs normals");
  if (scene_index.size() != scene.size()) throw DimensionMismatch("objective: scene index does not match scene");
}

ObjectiveReport ObjectiveContext::score(const ArticulatedPose& pose, bool smooth) const {
  const auto points = pose_sample(model_, sample_, kinematics::clamp_pose(model_, pose));
  ObjectiveReport r;
  r.smoothed = smooth;
  if (smooth) {
    const auto soft = soft_terms(points, index_, scene_, cfg_.corr_threshold, cfg_.smooth_width);
    r.corr_ratio = soft.ratio;
    r.containment = soft.containment;
  } else {
    const auto corrs = build_correspondences(points, index_, cfg_.corr_threshold, true);
    r.pairs = corrs.pairs.size();
    r.corr_ratio = corrs.ratio();
    r.containment = containment_score(corrs, points, scene_);
  }
  r.combined = ObjectiveReport::combine(r.corr_ratio, r.containment);
  return r;
}

ObjectiveReport ObjectiveContext::evaluate(const ArticulatedPose& pose) const {
  return score(pose, cfg_.smooth_objective);
}

ObjectiveReport ObjectiveContext::evaluate_hard(const ArticulatedPose& pose) const { return score(pose, false); }

ObjectiveReport ObjectiveContext::evaluate_vector(std::span<const double> x) const {
  return evaluate(codec_.decode(x));
}

}  // namespace spinealign::registration
