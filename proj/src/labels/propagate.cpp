#include "spinealign/labels/propagate.hpp"

#include <cstdio>

#include "spinealign/error.hpp"
#include "spinealign/geometry/io.hpp"
#include "spinealign/geometry/kdtree.hpp"
#include "spinealign/geometry/sampling.hpp"
#include "spinealign/registration/icp.hpp"

namespace spinealign::labels {

namespace fs = std::filesystem;

PointCloud deformed_sample(const kinematics::SpineModel& model, const kinematics::ArticulatedPose& pose,
                           const PropagationConfig& cfg) {
  kinematics::ArticulatedPose local = pose;
  local.global = RigidTransform::identity();
  return geometry::sample_surface(kinematics::deform_mesh(model, local), cfg.sample_count, cfg.sample_seed);
}

PointCloud rigid_sample(const kinematics::SpineModel& model, const PropagationConfig& cfg) {
  return geometry::sample_surface(model.combined_mesh(), cfg.sample_count, cfg.sample_seed);
}

namespace {

std::string crop_name(const std::string& seq_id, std::size_t frame, const char* kind) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "frame_%05zu_%s.ply", frame, kind);
  return "crops_" + seq_id + "/" + buf;
}

void write_crop(FrameLabel& entry, const std::string& seq_id, const PointCloud& scene, const PointCloud& placed,
                const fs::path& label_dir) {
  auto& c = *entry.crop;
  c.scene_file = crop_name(seq_id, entry.frame, "scene");
  c.mesh_file = crop_name(seq_id, entry.frame, "mesh");
  io::save_cloud_ply(label_dir / c.scene_file, scene.subset(c.crop.scene_indices));
  io::save_cloud_ply(label_dir / c.mesh_file, placed.subset(c.crop.mesh_indices));
}

struct Tracked {
  const PointCloud& sample;
  geometry::KdTree index;
};

registration::FitnessReport track(const Tracked& model, const PointCloud& scene, const geometry::KdTree& scene_index,
                                  const RigidTransform& init, const PropagationConfig& cfg) {
  const double thr = cfg.icp_threshold;
  const auto icp = cfg.scene_as_source
                       ? registration::icp_refine_reverse(scene.positions, model.index, thr, cfg.icp_max_iterations, init)
                       : registration::icp_refine(model.sample.positions, scene_index, thr, cfg.icp_max_iterations, init);
  auto report = registration::evaluate_alignment(transform_points(icp.transform, model.sample.positions), scene_index, thr);
  report.transform = icp.transform;
  report.iterations = icp.iterations;
  return report;
}

}  // namespace

AlignmentLabel propagate_labels(const SequenceRecord& seq, const kinematics::SpineModel& model,
                                const std::string& model_ref, const kinematics::ArticulatedPose& pose,
                                const PropagationConfig& cfg, const fs::path& label_dir) {
  seq.validate();
  cfg.validate();
  kinematics::check_dimensions(model, pose);
  if (!kinematics::within_limits(model, pose)) throw InvalidArgument("propagate_labels: pose is outside the joint limits");

  AlignmentLabel label;
  label.sequence_id = seq.id;
  label.exposure = seq.exposure;
  label.model = model_ref;
  label.pose = pose;
  label.reference_frame = seq.reference_frame;
  label.config = cfg;

  const PointCloud deformed = deformed_sample(model, pose, cfg);
  const PointCloud rigid = rigid_sample(model, cfg);
  const Tracked deformed_model{deformed, cfg.scene_as_source ? geometry::KdTree(deformed.positions) : geometry::KdTree()};
  const Tracked rigid_model{rigid, cfg.scene_as_source ? geometry::KdTree(rigid.positions) : geometry::KdTree()};
  const bool write_files = !label_dir.empty();

  RigidTransform prev_deformed = pose.global;
  RigidTransform prev_rigid = pose.global;
  for (std::size_t k = seq.reference_frame; k < seq.frames.size(); ++k) {
    const bool is_reference = k == seq.reference_frame;
    FrameLabel entry;
    entry.frame = k;
    entry.cloud.path = reference_path(seq.frames[k], label_dir);

    PointCloud scene;
    try {
      const std::string bytes = io::read_file(seq.frames[k]);
      scene = io::parse_ply_cloud(bytes);
      if (scene.empty()) throw ParseError("cloud has no points");
      entry.cloud.sha256 = sha256_hex(bytes);
    } catch (const Error& e) {
      if (is_reference) throw;
      entry.skipped = true;
      entry.skip_reason = e.what();
      label.frames.push_back(std::move(entry));
      continue;
    }

    const geometry::KdTree index(scene.positions);
    if (is_reference) {
      entry.deformed = registration::evaluate_alignment(transform_points(pose.global, deformed.positions), index,
                                                        cfg.icp_threshold);
      entry.deformed.transform = pose.global;
    } else {
      entry.deformed = track(deformed_model, scene, index, prev_deformed, cfg);
    }
    entry.rigid = track(rigid_model, scene, index, prev_rigid, cfg);
    prev_deformed = entry.deformed.transform;
    prev_rigid = entry.rigid.transform;

    if (cfg.compute_crops) {
      const PointCloud placed = deformed.transformed(entry.deformed.transform);
      entry.crop = StoredCrop{crop_scene(scene, placed, cfg.crop_radius), {}, {}};
      if (write_files) write_crop(entry, seq.id, scene, placed, label_dir);
    }
    label.frames.push_back(std::move(entry));
  }
  label.validate();
  return label;
}

double max_stored_crop_distance(const AlignmentLabel& label, const kinematics::SpineModel& model,
                                const fs::path& label_dir) {
  const PointCloud deformed = deformed_sample(model, label.pose, label.config);
  double worst = 0.0;
  for (const auto& f : label.frames) {
    if (f.skipped || !f.crop) continue;
    const PointCloud scene = io::load_cloud(resolve_reference(label_dir, f.cloud.path));
    const geometry::KdTree index(deformed.transformed(f.deformed.transform).positions);
    worst = std::max(worst, max_crop_distance(f.crop->crop, scene, index));
  }
  return worst;
}

}  // namespace spinealign::labels
