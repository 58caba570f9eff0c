#include "spinealign/app/phantom_case.hpp"

#include <cstdio>

#include "spinealign/app/inputs.hpp"
#include "spinealign/geometry/io.hpp"
#include "spinealign/labels/label.hpp"

namespace spinealign::app {

namespace fs = std::filesystem;

PhantomCase write_phantom_case(const phantom::BatchConfig& config, const CaseOptions& options, const fs::path& dir) {
  if (options.frames == 0) throw InvalidArgument("phantom case: need at least one frame");
  if (!(options.drift_direction.norm() > 0.0)) throw InvalidArgument("phantom case: zero drift direction");
  const auto setup = phantom::make_trial_setup(config, options.exposure, options.index);
  const auto model = phantom::make_phantom(setup.phantom);

  PhantomCase c;
  c.gt = setup.gt_pose;
  c.model = dir / "model" / "model.json";
  kinematics::save_model(c.model, model);

  const Vec3 step = options.drift_direction.normalized() * options.drift_per_frame;
  labels::SequenceRecord seq;
  seq.id = "phantom_e" + std::to_string(options.exposure) + "_" + std::to_string(setup.phantom.seed);
  seq.exposure = options.exposure;
  for (std::size_t k = 0; k < options.frames; ++k) {
    auto scan_spec = setup.scan;
    scan_spec.seed = setup.scan.seed + 7919 * k;
    PointCloud frame = phantom::simulate_scan(model, setup.gt_pose, scan_spec);
    for (auto& p : frame.positions) p -= step * static_cast<double>(k);
    char name[32];
    std::snprintf(name, sizeof name, "frame_%03zu.ply", k);
    io::save_cloud_ply(dir / name, frame);
    seq.frames.push_back(name);
  }
  c.scene = dir / seq.frames.front();

  const auto cues = phantom::landmark_cues(model, setup.gt_pose, setup.scan.exposed, config.trial.landmark_noise,
                                           setup.phantom.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<Landmark> landmarks;
  for (const auto& q : cues) {
    landmarks.push_back({q.pre, q.intra, q.link});
    seq.landmarks.push_back({q.pre, q.intra});
  }
  c.landmarks = dir / "landmarks.json";
  io::write_file_atomic(c.landmarks, landmarks_to_json(landmarks).dump(2) + "\n");
  c.sequence = dir / "sequence.json";
  labels::save_sequence(c.sequence, seq);
  c.gt_pose = dir / "gt_pose.json";
  io::write_file_atomic(c.gt_pose, kinematics::pose_to_json(setup.gt_pose).dump(2) + "\n");
  return c;
}

}  // namespace spinealign::app
