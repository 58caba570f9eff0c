#include "spinealign/app/align.hpp"

#include <set>

#include "spinealign/labels/propagate.hpp"
#include "spinealign/registration/icp.hpp"
#include "spinealign/registration/landmark_init.hpp"
#include "spinealign/registration/procrustes.hpp"

namespace spinealign::app {

void AlignOptions::validate() const {
  optimizer.validate();
  label.validate();
  if (!(icp_threshold > 0.0)) throw InvalidArgument("align.icp_threshold must be > 0");
  if (icp_max_iterations < 1) throw InvalidArgument("align.icp_max_iterations must be >= 1");
  if (!(articulated.threshold > 0.0)) throw InvalidArgument("align.articulated.threshold must be > 0");
  if (articulated.max_iterations < 1) throw InvalidArgument("align.articulated.max_iterations must be >= 1");
  if (articulated.mesh_samples < 3 || articulated.scene_samples < 3)
    throw InvalidArgument("align.articulated sample counts must be >= 3");
  if (!(articulated.convergence > 0.0)) throw InvalidArgument("align.articulated.convergence must be > 0");
  if (sequence_id.empty()) throw InvalidArgument("align.sequence_id must not be empty");
}

namespace {

void reject_unknown(const nlohmann::json& obj, std::initializer_list<const char*> known, const std::string& section) {
  if (!obj.is_object()) throw ConfigError("'" + section + "' must be an object");
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ConfigError("unknown key '" + (section.empty() ? key : section + "." + key) + "'");
  }
}

template <class T>
void read(const nlohmann::json& obj, const char* key, T& field, const std::string& section) {
  if (!obj.contains(key)) return;
  try {
    field = obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("'" + section + "." + key + "' has the wrong type");
  }
}

}  // namespace

AlignOptions align_options_from_json(const nlohmann::json& doc) {
  reject_unknown(doc, {"optimizer", "label", "align"}, "");
  AlignOptions o;
  try {
    if (doc.contains("optimizer")) o.optimizer = registration::config_from_json(doc.at("optimizer"));
    if (doc.contains("label")) o.label = labels::propagation_from_json(doc.at("label"));
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  if (doc.contains("align")) {
    const auto& a = doc.at("align");
    reject_unknown(a,
                   {"icp_threshold", "icp_max_iterations", "articulated_refine", "articulated", "sequence_id",
                    "exposure"},
                   "align");
    read(a, "icp_threshold", o.icp_threshold, "align");
    read(a, "icp_max_iterations", o.icp_max_iterations, "align");
    read(a, "articulated_refine", o.articulated_refine, "align");
    read(a, "sequence_id", o.sequence_id, "align");
    read(a, "exposure", o.exposure, "align");
    if (a.contains("articulated")) {
      const auto& r = a.at("articulated");
      const std::string sec = "align.articulated";
      reject_unknown(r, {"threshold", "max_iterations", "mesh_samples", "scene_samples", "convergence"}, sec);
      read(r, "threshold", o.articulated.threshold, sec);
      read(r, "max_iterations", o.articulated.max_iterations, sec);
      read(r, "mesh_samples", o.articulated.mesh_samples, sec);
      read(r, "scene_samples", o.articulated.scene_samples, sec);
      read(r, "convergence", o.articulated.convergence, sec);
    }
  }
  try {
    o.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  return o;
}

nlohmann::json align_options_to_json(const AlignOptions& o) {
  const auto& r = o.articulated;
  return {{"optimizer", registration::config_to_json(o.optimizer)},
          {"label", labels::propagation_to_json(o.label)},
          {"align",
           {{"icp_threshold", o.icp_threshold},
            {"icp_max_iterations", o.icp_max_iterations},
            {"articulated_refine", o.articulated_refine},
            {"articulated",
             {{"threshold", r.threshold},
              {"max_iterations", r.max_iterations},
              {"mesh_samples", r.mesh_samples},
              {"scene_samples", r.scene_samples},
              {"convergence", r.convergence}}},
            {"sequence_id", o.sequence_id},
            {"exposure", o.exposure}}}};
}

void apply_seed(AlignOptions& o, std::uint64_t seed) {
  o.optimizer.seed = seed;
  o.articulated.seed = seed + 1;
  o.label.sample_seed = seed + 2;
}

AlignResult run_align(const kinematics::SpineModel& model, const std::string& model_ref, const PointCloud& scene,
                      const std::filesystem::path& scene_path, std::span<const Landmark> landmarks,
                      const AlignOptions& options, const std::filesystem::path& label_dir,
                      const registration::ProgressCallback& progress) {
  options.validate();
  if (landmarks.size() < 3)
    throw InvalidArgument("align: need at least 3 landmark pairs, got " + std::to_string(landmarks.size()));
  if (!scene.has_normals()) throw InvalidArgument("align: scene cloud needs normals");

  AlignResult out;
  std::vector<Vec3> pre, intra;
  std::vector<registration::LinkLandmark> cues;
  std::set<std::size_t> links;
  bool tagged = true;
  for (const auto& l : landmarks) {
    pre.push_back(l.mesh);
    intra.push_back(l.scene);
    if (!l.link) {
      tagged = false;
      continue;
    }
    if (*l.link >= model.link_count())
      throw InvalidArgument("align: landmark link " + std::to_string(*l.link) + " is not in the model");
    cues.push_back({*l.link, l.mesh, l.scene});
    links.insert(*l.link);
  }
  out.coarse = registration::coarse_align_landmarks(pre, intra);
  out.landmark_rms = registration::landmark_rms(out.coarse, pre, intra);

  if (tagged) {
    out.init = registration::landmark_pose_init(model, cues);
  } else {
    out.init = kinematics::ArticulatedPose::zero(model.joint_count());
    out.init.global = out.coarse;
  }

  const geometry::KdTree index(scene.positions);
  const registration::ObjectiveContext context(model, scene, index, options.optimizer, out.init.global);
  out.optimized = registration::optimize_pose(context, out.init, progress);
  kinematics::ArticulatedPose pose = out.optimized.pose;
  if (options.articulated_refine) {
    out.articulated = registration::articulated_icp(model, scene, pose, options.optimizer, options.articulated);
    pose = out.articulated->pose;
  }

  const PointCloud local = labels::deformed_sample(model, pose, options.label);
  const geometry::KdTree local_index(local.positions);
  out.icp = registration::icp_refine_reverse(scene.positions, local_index, options.icp_threshold,
                                             options.icp_max_iterations, pose.global);
  pose.global = out.icp.transform;
  out.pose = pose;
  out.objective = context.evaluate_hard(pose);

  labels::SequenceRecord seq;
  seq.id = options.sequence_id;
  seq.frames = {scene_path};
  seq.reference_frame = 0;
  seq.exposure = options.exposure ? options.exposure : (tagged ? links.size() : model.link_count());
  for (const auto& l : landmarks) seq.landmarks.push_back({l.mesh, l.scene});
  out.label = labels::propagate_labels(seq, model, model_ref, pose, options.label, label_dir);
  return out;
}

}  // namespace spinealign::app
