#include "spinealign/phantom/phantom.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <string>
#include <unordered_map>

#include "spinealign/error.hpp"
#include "spinealign/geometry/analysis.hpp"
#include "spinealign/geometry/kdtree.hpp"
#include "spinealign/geometry/meshing.hpp"
#include "spinealign/geometry/sampling.hpp"
#include "spinealign/registration/landmark_init.hpp"
#include "spinealign/registration/procrustes.hpp"

namespace spinealign::phantom {

using kinematics::ArticulatedPose;
using kinematics::SpineModel;

void PhantomSpec::validate() const {
  if (n_vertebrae < 2) throw InvalidArgument("phantom needs at least 2 vertebrae");
  if (!(scale > 0.0) || !(gap > 0.0) || !(voxel_size > 0.0)) {
    throw InvalidArgument("phantom scale, gap and voxel size must be positive");
  }
  if (!(jitter >= 0.0 && jitter < 0.5)) throw InvalidArgument("phantom jitter must be in [0, 0.5)");
}

void ScanSpec::validate(std::size_t link_count) const {
  if (exposed.empty()) throw InvalidArgument("scan: exposed vertebra set is empty");
  for (auto i : exposed) {
    if (i >= link_count) throw InvalidArgument("scan: exposed index " + std::to_string(i) + " out of range");
  }
  if (!(noise_sigma >= 0.0)) throw InvalidArgument("scan: noise_sigma must be >= 0");
  if (!(occlusion_fraction >= 0.0 && occlusion_fraction < 1.0)) {
    throw InvalidArgument("scan: occlusion_fraction must be in [0, 1)");
  }
  if (point_count == 0) throw InvalidArgument("scan: point_count must be positive");
}

namespace {

std::string vertebra_label(std::size_t i) {
  static const char* names[] = {"L5",  "L4",  "L3", "L2", "L1", "T12", "T11", "T10", "T9",
                                "T8",  "T7",  "T6", "T5", "T4", "T3",  "T2",  "T1"};
  return i < std::size(names) ? names[i] : "V" + std::to_string(i);
}

struct VertebraShape {
  Vec3 body;                 // ellipsoid semi-axes
  double spinous_half_width, spinous_y0, spinous_y1, spinous_half_height;
  double transverse_x0, transverse_x1, transverse_y0, transverse_y1, transverse_half_height;

  bool inside(const Vec3& p) const {
    const Vec3 q = p.cwiseQuotient(body);
    if (q.squaredNorm() <= 1.0) return true;
    if (std::abs(p.x()) <= spinous_half_width && p.y() >= spinous_y0 && p.y() <= spinous_y1 &&
        std::abs(p.z()) <= spinous_half_height) {
      return true;
    }
    const double ax = std::abs(p.x());
    return ax >= transverse_x0 && ax <= transverse_x1 && p.y() >= transverse_y0 && p.y() <= transverse_y1 &&
           std::abs(p.z()) <= transverse_half_height;
  }
};

VertebraShape jittered_shape(double s, double jitter, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(1.0 - jitter, 1.0 + jitter);
  VertebraShape v;
  v.body = Vec3(0.45 * s * u(rng), 0.35 * s * u(rng), 0.30 * s * u(rng));
  v.spinous_half_width = 0.08 * s * u(rng);
  v.spinous_y0 = 0.25 * s;
  v.spinous_y1 = 1.30 * s * u(rng);
  v.spinous_half_height = 0.20 * s * u(rng);
  v.transverse_x0 = 0.30 * s;
  v.transverse_x1 = 0.70 * s * u(rng);
  v.transverse_y0 = 0.10 * s;
  v.transverse_y1 = 0.30 * s * u(rng);
  v.transverse_half_height = 0.12 * s * u(rng);
  return v;
}

TriMesh mesh_vertebra(const VertebraShape& shape, const Vec3& centre, double voxel, double s) {
  const Vec3 lo = Vec3(-0.8 * s, -0.45 * s, -0.35 * s) - Vec3::Constant(2 * voxel);
  const Vec3 hi = Vec3(0.8 * s, 1.4 * s, 0.35 * s) + Vec3::Constant(2 * voxel);
  std::array<std::size_t, 3> dims{};
  for (int k = 0; k < 3; ++k) dims[k] = static_cast<std::size_t>(std::ceil((hi[k] - lo[k]) / voxel)) + 1;
  VoxelMask mask(dims, Vec3::Constant(voxel), centre + lo);
  for (std::size_t z = 0; z < dims[2]; ++z)
    for (std::size_t y = 0; y < dims[1]; ++y)
      for (std::size_t x = 0; x < dims[0]; ++x) {
        mask.set(x, y, z, shape.inside(lo + Vec3(x * voxel, y * voxel, z * voxel)));
      }
  return geometry::mesh_from_mask(mask, geometry::kDefaultSmoothIterations, geometry::kDefaultSmoothFactor);
}

// ICP with the scan as the moving side: fitness is the fraction of scan
// points matched, and hidden mesh surfaces cannot pull the fit toward the
// camera. The returned transform places the mesh in the scene.
registration::FitnessReport scene_to_mesh_icp(const PointCloud& scene, const geometry::KdTree& mesh_index,
                                              const RigidTransform& init, const TrialOptions& options) {
  return registration::icp_refine_reverse(scene.positions, mesh_index, options.fitness_threshold,
                                          options.icp_max_iterations, init);
}

}  // namespace

SpineModel make_phantom(const PhantomSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::vector<std::pair<std::string, TriMesh>> vertebrae;
  for (std::size_t i = 0; i < spec.n_vertebrae; ++i) {
    const auto shape = jittered_shape(spec.scale, spec.jitter, rng);
    const Vec3 centre(0.0, 0.0, static_cast<double>(i) * spec.pitch());
    vertebrae.emplace_back(vertebra_label(i), mesh_vertebra(shape, centre, spec.voxel_size, spec.scale));
  }
  return kinematics::build_chain(vertebrae);
}

Vec3 posterior_viewpoint(const SpineModel& model, double distance) {
  Vec3 mid = Vec3::Zero();
  for (const auto& link : model.links) mid += link.centroid;
  mid /= static_cast<double>(model.link_count());
  return mid + Vec3(0.0, distance, 0.0);
}

PointCloud simulate_scan(const SpineModel& model, const ArticulatedPose& pose, const ScanSpec& scan) {
  scan.validate(model.link_count());
  const auto transforms = kinematics::forward_kinematics(model, pose);
  TriMesh visible;
  for (auto i : scan.exposed) append_mesh(visible, model.links[i].mesh.transformed(transforms[i]));

  std::vector<bool> facing(visible.triangle_count());
  std::size_t facing_count = 0;
  for (std::size_t t = 0; t < visible.triangle_count(); ++t) {
    const auto& tri = visible.triangles[t];
    const Vec3 c = (visible.vertices[tri[0]] + visible.vertices[tri[1]] + visible.vertices[tri[2]]) / 3.0;
    facing[t] = visible.face_normal(t).dot(scan.viewpoint - c) > 0.0;
    facing_count += facing[t];
  }
  if (facing_count == 0) throw DegenerateGeometry("scan: no surface faces the viewpoint");

  std::mt19937_64 rng(scan.seed);
  PointCloud cloud = geometry::sample_faces(visible, facing, scan.point_count, rng()).cloud;
  cloud.normals.clear();

  if (scan.zbuffer) {
    // Point-splat depth buffer: bin rays by pinhole coordinates and drop
    // points more than 2 mm behind the nearest point of their bin.
    Vec3 centre = Vec3::Zero();
    for (const auto& p : cloud.positions) centre += p;
    centre /= static_cast<double>(cloud.size());
    const Vec3 f = (centre - scan.viewpoint).normalized();
    const Vec3 u = f.unitOrthogonal();
    const Vec3 w = f.cross(u);
    const double range = (centre - scan.viewpoint).norm();
    const double bin = 2.0 / range;
    std::unordered_map<std::int64_t, double> nearest;
    std::vector<std::int64_t> keys(cloud.size());
    std::vector<double> depth(cloud.size());
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      const Vec3 d = cloud.positions[i] - scan.viewpoint;
      depth[i] = d.dot(f);
      const auto a = static_cast<std::int64_t>(std::floor(d.dot(u) / depth[i] / bin));
      const auto b = static_cast<std::int64_t>(std::floor(d.dot(w) / depth[i] / bin));
      keys[i] = a * 1000003 + b;
      auto [it, inserted] = nearest.emplace(keys[i], depth[i]);
      if (!inserted) it->second = std::min(it->second, depth[i]);
    }
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < cloud.size(); ++i) {
      if (depth[i] <= nearest[keys[i]] + 2.0) keep.push_back(i);
    }
    cloud = cloud.subset(keep);
  }

  const auto drop = static_cast<std::size_t>(std::llround(scan.occlusion_fraction * static_cast<double>(cloud.size())));
  if (drop > 0) {
    const geometry::KdTree tree(cloud.positions);
    const std::size_t seed_point = std::uniform_int_distribution<std::size_t>(0, cloud.size() - 1)(rng);
    std::vector<bool> removed(cloud.size(), false);
    for (const auto& nb : tree.knn(cloud.positions[seed_point], drop)) removed[nb.index] = true;
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < cloud.size(); ++i)
      if (!removed[i]) keep.push_back(i);
    cloud = cloud.subset(keep);
  }

  if (scan.noise_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, scan.noise_sigma);
    for (auto& p : cloud.positions) p += Vec3(noise(rng), noise(rng), noise(rng));
  }
  if (cloud.size() < scan.normal_neighbors) throw DegenerateGeometry("scan: too few points left for normals");
  return geometry::estimate_normals(cloud, scan.normal_neighbors, scan.viewpoint);
}

std::vector<Vec3> phantom_landmarks(const SpineModel& model, const std::vector<std::size_t>& links) {
  std::vector<Vec3> out;
  for (auto i : links) {
    if (i >= model.link_count()) throw InvalidArgument("landmark link index out of range");
    const auto& v = model.links[i].mesh.vertices;
    auto by = [&](int axis, bool largest) {
      return *std::max_element(v.begin(), v.end(), [&](const Vec3& a, const Vec3& b) {
        return largest ? a[axis] < b[axis] : a[axis] > b[axis];
      });
    };
    out.push_back(by(1, true));
    out.push_back(by(0, false));
    out.push_back(by(0, true));
  }
  return out;
}

ArticulatedPose random_pose(const SpineModel& model, const PoseRanges& r, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto sym = [&](double m) { return (2.0 * unit(rng) - 1.0) * m; };
  auto pose = ArticulatedPose::zero(model.joint_count());
  // One bending direction for the whole chain, as in a flexed or extended spine.
  const double sign = unit(rng) < 0.5 ? -1.0 : 1.0;
  for (std::size_t j = 0; j < model.joint_count(); ++j) {
    pose.angle(j, kinematics::kMediolateral) = sign * (r.ml_min + (r.ml_max - r.ml_min) * unit(rng));
    pose.angle(j, kinematics::kAnteroposterior) = sym(r.ap_max);
    pose.angle(j, kinematics::kLongitudinal) = sym(r.lon_max);
  }
  std::normal_distribution<double> g(0.0, 1.0);
  const Vec3 axis = Vec3(g(rng), g(rng), g(rng)).normalized();
  const double angle = unit(rng) * r.global_rotation_max;
  const Vec3 t(sym(r.global_translation_max), sym(r.global_translation_max), sym(r.global_translation_max));
  pose.global = RigidTransform::from_axis_angle(angle * axis, t);
  return kinematics::clamp_pose(model, pose);
}

void compute_pose_errors(const SpineModel& model, TrialReport& report) {
  const auto& gt = report.gt_pose;
  const auto& rec = report.recovered_pose;
  report.angle_errors.resize(gt.joint_angles.size());
  for (std::size_t i = 0; i < gt.joint_angles.size(); ++i) {
    report.angle_errors[i] = rec.joint_angles[i] - gt.joint_angles[i];
  }
  Vec3 c = Vec3::Zero();
  for (const auto& link : model.links) c += link.centroid;
  c /= static_cast<double>(model.link_count());
  report.global_translation_error = (rec.global.apply(c) - gt.global.apply(c)).norm();
  report.global_rotation_error = (rec.global.inverse() * gt.global).angle();
}

std::vector<registration::LinkLandmark> landmark_cues(const SpineModel& model, const ArticulatedPose& gt_pose,
                                                     const std::vector<std::size_t>& links, double noise_sigma,
                                                     std::uint64_t seed) {
  const auto pre = phantom_landmarks(model, links);
  const auto truth = kinematics::forward_kinematics(model, gt_pose);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, noise_sigma > 0.0 ? noise_sigma : 1.0);
  std::vector<registration::LinkLandmark> cues;
  for (std::size_t k = 0; k < pre.size(); ++k) {
    const std::size_t link = links[k / 3];
    Vec3 p = truth[link].apply(pre[k]);
    if (noise_sigma > 0.0) p += Vec3(noise(rng), noise(rng), noise(rng));
    cues.push_back({link, pre[k], p});
  }
  return cues;
}

TrialReport run_trial(const PhantomSpec& spec, const ScanSpec& scan, const ArticulatedPose& gt_pose,
                      const registration::OptimizerConfig& cfg, const TrialOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  const SpineModel model = make_phantom(spec);
  if (!kinematics::within_limits(model, gt_pose)) throw InvalidArgument("trial: ground-truth pose outside joint limits");

  TrialReport report;
  report.seed = spec.seed;
  report.exposure = scan.exposed.size();
  report.gt_pose = gt_pose;

  const PointCloud scene = simulate_scan(model, gt_pose, scan);
  const geometry::KdTree index(scene.positions);

  const auto cues = landmark_cues(model, gt_pose, scan.exposed, options.landmark_noise, spec.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<Vec3> pre, intra;
  for (const auto& c : cues) {
    pre.push_back(c.pre);
    intra.push_back(c.intra);
  }
  report.coarse = registration::coarse_align_landmarks(pre, intra);

  const auto sample = registration::sample_model(model, options.fitness_sample, spec.seed + 1);
  const geometry::KdTree rest_index(sample.points);
  report.rigid = scene_to_mesh_icp(scene, rest_index, report.coarse, options);

  const auto init = registration::landmark_pose_init(model, cues);
  const registration::ObjectiveContext context(model, scene, index, cfg, init.global);
  const auto optimized = registration::optimize_pose(context, init);
  report.objective = optimized.report;

  auto articulated = optimized.pose;
  if (options.articulated_refine) {
    registration::ArticulatedIcpOptions refine;
    refine.threshold = options.fitness_threshold;
    refine.seed = spec.seed + 2;
    articulated = registration::articulated_icp(model, scene, optimized.pose, cfg, refine).pose;
  }

  auto local = articulated;
  local.global = RigidTransform::identity();
  const auto deformed_points = registration::pose_sample(model, sample, local);
  const geometry::KdTree deformed_index(deformed_points);
  report.deformed = scene_to_mesh_icp(scene, deformed_index, articulated.global, options);

  report.recovered_pose = articulated;
  report.recovered_pose.global = report.deformed.transform;
  compute_pose_errors(model, report);
  report.elapsed_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return report;
}

nlohmann::json trial_to_json(const TrialReport& r) {
  return {{"seed", r.seed},
          {"exposure", r.exposure},
          {"rigid", registration::fitness_to_json(r.rigid)},
          {"deformed", registration::fitness_to_json(r.deformed)},
          {"gt_pose", kinematics::pose_to_json(r.gt_pose)},
          {"recovered_pose", kinematics::pose_to_json(r.recovered_pose)},
          {"coarse", kinematics::transform_to_json(r.coarse)},
          {"angle_errors_rad", r.angle_errors},
          {"global_translation_error_mm", r.global_translation_error},
          {"global_rotation_error_rad", r.global_rotation_error},
          {"objective", registration::report_to_json(r.objective)},
          {"elapsed_ms", r.elapsed_ms}};
}

}  // namespace spinealign::phantom
