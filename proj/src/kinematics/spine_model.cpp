#include "spinealign/kinematics/spine_model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>
#include <string>

#include "spinealign/error.hpp"
#include "spinealign/geometry/analysis.hpp"
#include "spinealign/geometry/io.hpp"

namespace spinealign::kinematics {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;
constexpr int kSchemaVersion = 1;

std::string joint_name(std::size_t j) { return "joint " + std::to_string(j); }

}  // namespace

JointLimits default_joint_limits() {
  return {AngleRange{-13.0 * kDeg, 13.0 * kDeg}, AngleRange{-6.0 * kDeg, 6.0 * kDeg},
          AngleRange{-3.0 * kDeg, 3.0 * kDeg}};
}

void BallJoint::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (std::abs(axes[a].norm() - 1.0) > 1e-6) {
      throw InvalidArgument(std::string(kAxisNames[a]) + " axis is not unit length");
    }
    for (int b = a + 1; b < 3; ++b) {
      if (std::abs(axes[a].dot(axes[b])) > 1e-6) {
        throw InvalidArgument(std::string(kAxisNames[a]) + " and " + kAxisNames[b] + " axes are not orthogonal");
      }
    }
    if (!(limits[a].min <= 0.0 && 0.0 <= limits[a].max)) {
      throw InvalidArgument(std::string(kAxisNames[a]) + " limits must satisfy min <= 0 <= max");
    }
  }
}

void SpineModel::validate() const {
  if (links.size() < 2) throw InvalidArgument("spine model needs at least 2 vertebrae");
  if (joints.size() + 1 != links.size()) {
    throw InvalidArgument("spine model has " + std::to_string(links.size()) + " links but " +
                          std::to_string(joints.size()) + " joints");
  }
  for (const auto& link : links) {
    if ((link.centroid - link.mesh.vertex_centroid()).norm() > 1e-6) {
      throw InvalidArgument("centroid of " + link.label + " does not match its mesh");
    }
  }
  for (std::size_t j = 0; j < joints.size(); ++j) {
    joints[j].validate();
    const Vec3 mid = 0.5 * (links[j].centroid + links[j + 1].centroid);
    if ((joints[j].position - mid).norm() > 1e-6) {
      throw InvalidArgument(joint_name(j) + " is not at the midpoint of its vertebra centroids");
    }
  }
}

TriMesh SpineModel::combined_mesh() const {
  TriMesh out;
  for (const auto& link : links) append_mesh(out, link.mesh);
  return out;
}

ArticulatedPose ArticulatedPose::zero(std::size_t joint_count) {
  ArticulatedPose p;
  p.joint_angles.assign(3 * joint_count, 0.0);
  return p;
}

bool ArticulatedPose::operator==(const ArticulatedPose& other) const {
  return joint_angles == other.joint_angles && global.rotation == other.global.rotation &&
         global.translation == other.global.translation;
}

SpineModel build_chain(const std::vector<std::pair<std::string, TriMesh>>& vertebrae, const JointLimits& limits) {
  if (vertebrae.size() < 2) {
    throw InvalidArgument("build_chain needs at least 2 vertebrae, got " + std::to_string(vertebrae.size()));
  }
  SpineModel model;
  model.links.reserve(vertebrae.size());
  for (const auto& [label, mesh] : vertebrae) {
    if (mesh.vertices.empty()) throw DegenerateGeometry("vertebra " + label + " has no vertices");
    mesh.validate();
    model.links.push_back({label, mesh, mesh.vertex_centroid()});
  }

  for (std::size_t i = 0; i + 1 < model.links.size(); ++i) {
    const auto& caudal = model.links[i];
    const auto& rostral = model.links[i + 1];
    PrincipalFrame frame;
    try {
      frame = geometry::principal_frame(caudal.mesh.vertices);
    } catch (const DegenerateGeometry& e) {
      throw DegenerateGeometry("vertebra " + caudal.label + ": " + e.what());
    }

    // Anteroposterior: largest principal axis, pointing at the farthest
    // vertex along it (the spinous process tip).
    Vec3 ap = frame.axes[0];
    double lo = 0.0, hi = 0.0;
    for (const auto& v : caudal.mesh.vertices) {
      const double s = (v - frame.centroid).dot(ap);
      lo = std::min(lo, s);
      hi = std::max(hi, s);
    }
    if (-lo > hi) ap = -ap;

    const Vec3 toward_rostral = rostral.centroid - caudal.centroid;
    if (toward_rostral.norm() == 0.0) {
      throw DegenerateGeometry("vertebrae " + caudal.label + " and " + rostral.label + " share a centroid");
    }
    const Vec3 dir = toward_rostral.normalized();
    Vec3 lon = std::abs(frame.axes[1].dot(dir)) >= std::abs(frame.axes[2].dot(dir)) ? frame.axes[1] : frame.axes[2];
    if (lon.dot(dir) < 0.0) lon = -lon;

    const Vec3 ml = ap.cross(lon).normalized();
    lon = ml.cross(ap).normalized();

    BallJoint joint;
    joint.position = 0.5 * (caudal.centroid + rostral.centroid);
    joint.axes = {ml, ap, lon};
    joint.limits = limits;
    joint.validate();
    model.joints.push_back(joint);
  }
  return model;
}

RigidTransform joint_motion(const BallJoint& joint, double ml, double ap, double lon) {
  const Mat3 r = (Eigen::AngleAxisd(ml, joint.axes[kMediolateral]) * Eigen::AngleAxisd(ap, joint.axes[kAnteroposterior]) *
                  Eigen::AngleAxisd(lon, joint.axes[kLongitudinal]))
                     .toRotationMatrix();
  RigidTransform t;
  t.rotation = r;
  t.translation = joint.position - r * joint.position;
  return t;
}

std::array<double, 3> joint_angles_from_rotation(const BallJoint& joint, const Mat3& rotation) {
  Mat3 frame;
  for (int k = 0; k < 3; ++k) frame.col(k) = joint.axes[k];
  // In the joint frame the rotation is Rx(ml) Ry(ap) Rz(lon).
  const Mat3 r = frame.transpose() * rotation * frame;
  const double ap = std::asin(std::clamp(r(0, 2), -1.0, 1.0));
  const double ml = std::atan2(-r(1, 2), r(2, 2));
  const double lon = std::atan2(-r(0, 1), r(0, 0));
  return {ml, ap, lon};
}

void check_dimensions(const SpineModel& model, const ArticulatedPose& pose) {
  if (pose.joint_angles.size() != model.angle_count()) {
    throw DimensionMismatch("pose has " + std::to_string(pose.joint_angles.size()) + " angles, model expects " +
                            std::to_string(model.angle_count()));
  }
}

std::vector<RigidTransform> local_link_transforms(const SpineModel& model, const ArticulatedPose& pose) {
  check_dimensions(model, pose);
  // Joint i moves with link i, so its world motion is A_i M_i A_i^-1 where
  // M_i is the rest-frame motion; applied after A_i this gives A_{i+1} = A_i M_i.
  std::vector<RigidTransform> out(model.link_count());
  for (std::size_t j = 0; j < model.joint_count(); ++j) {
    const auto m = joint_motion(model.joints[j], pose.angle(j, kMediolateral), pose.angle(j, kAnteroposterior),
                                pose.angle(j, kLongitudinal));
    out[j + 1] = out[j] * m;
  }
  return out;
}

std::vector<RigidTransform> forward_kinematics(const SpineModel& model, const ArticulatedPose& pose) {
  auto out = local_link_transforms(model, pose);
  for (auto& t : out) t = pose.global * t;
  return out;
}

TriMesh deform_mesh(const SpineModel& model, const ArticulatedPose& pose) {
  const auto transforms = forward_kinematics(model, pose);
  TriMesh out;
  for (std::size_t i = 0; i < model.link_count(); ++i) {
    append_mesh(out, model.links[i].mesh.transformed(transforms[i]));
  }
  return out;
}

ArticulatedPose clamp_pose(const SpineModel& model, const ArticulatedPose& pose) {
  check_dimensions(model, pose);
  ArticulatedPose out = pose;
  for (std::size_t j = 0; j < model.joint_count(); ++j) {
    for (int a = 0; a < 3; ++a) {
      const auto& lim = model.joints[j].limits[a];
      double& v = out.angle(j, static_cast<Axis>(a));
      v = std::clamp(v, lim.min, lim.max);
    }
  }
  return out;
}

bool within_limits(const SpineModel& model, const ArticulatedPose& pose) {
  if (pose.joint_angles.size() != model.angle_count()) return false;
  for (std::size_t j = 0; j < model.joint_count(); ++j) {
    for (int a = 0; a < 3; ++a) {
      const auto& lim = model.joints[j].limits[a];
      const double v = pose.angle(j, static_cast<Axis>(a));
      if (!(v >= lim.min && v <= lim.max)) return false;
    }
  }
  return true;
}

namespace {

nlohmann::json vec_json(const Vec3& v) { return nlohmann::json::array({v.x(), v.y(), v.z()}); }

Vec3 vec_from(const nlohmann::json& j, const std::string& what) {
  if (!j.is_array() || j.size() != 3) throw InvalidArgument(what + " must be an array of 3 numbers");
  return Vec3(j[0].get<double>(), j[1].get<double>(), j[2].get<double>());
}

}  // namespace

nlohmann::json transform_to_json(const RigidTransform& t) {
  nlohmann::json rot = nlohmann::json::array();
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) rot.push_back(t.rotation(r, c));
  return {{"rotation", rot}, {"translation", vec_json(t.translation)}};
}

RigidTransform transform_from_json(const nlohmann::json& doc) {
  const auto& rot = doc.at("rotation");
  if (!rot.is_array() || rot.size() != 9) throw InvalidArgument("rotation must be 9 numbers, row-major");
  RigidTransform t;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) t.rotation(r, c) = rot[3 * r + c].get<double>();
  t.translation = vec_from(doc.at("translation"), "translation");
  if (!t.is_valid(1e-6)) throw InvalidArgument("rotation is not a proper orthonormal matrix");
  return t;
}

nlohmann::json pose_to_json(const ArticulatedPose& pose) {
  nlohmann::json angles = nlohmann::json::array();
  for (std::size_t j = 0; j < pose.joint_count(); ++j) {
    angles.push_back({pose.angle(j, kMediolateral), pose.angle(j, kAnteroposterior), pose.angle(j, kLongitudinal)});
  }
  return {{"joint_angles", angles}, {"global", transform_to_json(pose.global)}};
}

ArticulatedPose pose_from_json(const nlohmann::json& doc) {
  ArticulatedPose pose;
  for (const auto& triple : doc.at("joint_angles")) {
    if (!triple.is_array() || triple.size() != 3) throw InvalidArgument("each joint needs 3 angles");
    for (const auto& v : triple) pose.joint_angles.push_back(v.get<double>());
  }
  pose.global = transform_from_json(doc.at("global"));
  return pose;
}

void save_model(const std::filesystem::path& json_path, const SpineModel& model) {
  model.validate();
  const auto dir = json_path.parent_path();
  nlohmann::json vertebrae = nlohmann::json::array();
  for (std::size_t i = 0; i < model.link_count(); ++i) {
    std::string name = model.links[i].label;
    std::replace_if(name.begin(), name.end(), [](char c) { return !std::isalnum(static_cast<unsigned char>(c)); }, '_');
    const std::string file = json_path.stem().string() + "_" + std::to_string(i) + "_" + name + ".ply";
    io::save_mesh_ply(dir / file, model.links[i].mesh, io::PlyEncoding::BinaryLittleEndian);
    vertebrae.push_back({{"label", model.links[i].label}, {"mesh", file}});
  }
  nlohmann::json joints = nlohmann::json::array();
  for (const auto& j : model.joints) {
    nlohmann::json axes, limits;
    for (int a = 0; a < 3; ++a) {
      axes[kAxisNames[a]] = vec_json(j.axes[a]);
      limits[kAxisNames[a]] = {j.limits[a].min, j.limits[a].max};
    }
    joints.push_back({{"position", vec_json(j.position)}, {"axes", axes}, {"limits", limits}});
  }
  const nlohmann::json doc = {{"schema_version", kSchemaVersion}, {"vertebrae", vertebrae}, {"joints", joints}};
  io::write_file_atomic(json_path, doc.dump(2) + "\n");
}

SpineModel load_model(const std::filesystem::path& json_path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(io::read_file(json_path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(json_path.string() + ": " + e.what(), e.byte);
  }
  try {
    if (doc.at("schema_version").get<int>() != kSchemaVersion) {
      throw ParseError(json_path.string() + ": unsupported schema_version");
    }
    SpineModel model;
    for (const auto& v : doc.at("vertebrae")) {
      VertebraLink link;
      link.label = v.at("label").get<std::string>();
      link.mesh = io::load_mesh(json_path.parent_path() / v.at("mesh").get<std::string>());
      link.centroid = link.mesh.vertex_centroid();
      model.links.push_back(std::move(link));
    }
    for (const auto& jj : doc.at("joints")) {
      BallJoint joint;
      joint.position = vec_from(jj.at("position"), "joint position");
      for (int a = 0; a < 3; ++a) {
        joint.axes[a] = vec_from(jj.at("axes").at(kAxisNames[a]), kAxisNames[a]);
        const auto& lim = jj.at("limits").at(kAxisNames[a]);
        joint.limits[a] = {lim.at(0).get<double>(), lim.at(1).get<double>()};
      }
      model.joints.push_back(joint);
    }
    model.validate();
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(json_path.string() + ": " + e.what());
  }
}

}  // namespace spinealign::kinematics
