#include "spinealign/registration/articulated_icp.hpp"

#include <algorithm>
#include <cmath>

#include "spinealign/error.hpp"
#include "spinealign/registration/optimizer.hpp"

namespace spinealign::registration {

using kinematics::ArticulatedPose;

namespace {

struct Pair {
  Vec3 scene;
  Vec3 rest;  // mesh sample point in its link's rest frame
  std::uint32_t link;
};

double pair_cost(const kinematics::SpineModel& model, const std::vector<Pair>& pairs, const ArticulatedPose& pose) {
  const auto transforms = kinematics::forward_kinematics(model, pose);
  double sum = 0.0;
  for (const auto& p : pairs) sum += (transforms[p.link].apply(p.rest) - p.scene).squaredNorm();
  return sum / static_cast<double>(pairs.size());
}

}  // namespace

ArticulatedIcpResult articulated_icp(const kinematics::SpineModel& model, const PointCloud& scene,
                                     const ArticulatedPose& init, const OptimizerConfig& cfg,
                                     const ArticulatedIcpOptions& options) {
  kinematics::check_dimensions(model, init);
  if (scene.empty()) throw InvalidArgument("articulated_icp: empty scene");
  if (!(options.threshold > 0.0) || options.max_iterations < 1 || options.mesh_samples == 0 ||
      options.scene_samples == 0) {
    throw InvalidArgument("articulated_icp: invalid options");
  }

  const auto sample = sample_model(model, options.mesh_samples, options.seed);
  const std::size_t stride = std::max<std::size_t>(1, scene.size() / options.scene_samples);
  std::vector<Vec3> queries;
  for (std::size_t i = 0; i < scene.size(); i += stride) queries.push_back(scene.positions[i]);

  const PoseCodec codec(model, init.global, cfg);
  std::vector<double> fd(codec.size());
  for (std::size_t k = 0; k < fd.size(); ++k) fd[k] = codec.fd_steps()[k] * 1e-2;

  ArticulatedIcpResult result;
  result.pose = kinematics::clamp_pose(model, init);
  std::vector<double> x = codec.encode(result.pose);
  std::vector<Pair> pairs;

  for (int it = 0; it < options.max_iterations; ++it) {
    const auto placed = pose_sample(model, sample, result.pose);
    const geometry::KdTree tree(placed);
    pairs.clear();
    for (const auto& q : queries) {
      if (const auto nb = tree.nearest_within(q, options.threshold)) {
        pairs.push_back({q, sample.points[nb->index], sample.link[nb->index]});
      }
    }
    result.iterations = it + 1;
    if (pairs.size() < 3) break;

    BoxProblem problem{[&](std::span<const double> v) { return pair_cost(model, pairs, codec.decode(v)); },
                       codec.lower(), codec.upper(), fd};
    LbfgsOptions lbfgs;
    lbfgs.max_iterations = 50;
    lbfgs.memory = cfg.lbfgs_memory;
    const auto local = minimize_box(problem, x, lbfgs);

    double change = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) change = std::max(change, std::abs(local.x[k] - x[k]));
    x = local.x;
    result.pose = codec.decode(x);
    if (change < options.convergence) break;
  }

  const auto placed = pose_sample(model, sample, result.pose);
  const geometry::KdTree tree(placed);
  double sum = 0.0;
  std::size_t matched = 0;
  for (const auto& q : queries) {
    if (const auto nb = tree.nearest_within(q, options.threshold)) {
      sum += nb->distance * nb->distance;
      ++matched;
    }
  }
  result.fitness = static_cast<double>(matched) / static_cast<double>(queries.size());
  result.rmse = matched ? std::sqrt(sum / static_cast<double>(matched)) : 0.0;
  return result;
}

}  // namespace spinealign::registration
