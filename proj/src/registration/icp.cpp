#include "spinealign/registration/icp.hpp"

#include <cmath>

#include "spinealign/error.hpp"
#include "spinealign/kinematics/spine_model.hpp"
#include "spinealign/registration/correspondence.hpp"
#include "spinealign/registration/procrustes.hpp"

namespace spinealign::registration {

nlohmann::json fitness_to_json(const FitnessReport& r) {
  return {{"fitness", r.fitness},
          {"inlier_rmse", r.inlier_rmse},
          {"iterations", r.iterations},
          {"transform", kinematics::transform_to_json(r.transform)}};
}

FitnessReport fitness_from_json(const nlohmann::json& doc) {
  FitnessReport r;
  r.fitness = doc.at("fitness").get<double>();
  r.inlier_rmse = doc.at("inlier_rmse").get<double>();
  r.iterations = doc.at("iterations").get<int>();
  r.transform = kinematics::transform_from_json(doc.at("transform"));
  return r;
}

namespace {

FitnessReport score(const CorrespondenceSet& corrs) {
  FitnessReport r;
  r.fitness = corrs.ratio();
  if (!corrs.pairs.empty()) {
    double sum = 0.0;
    for (const auto& c : corrs.pairs) sum += c.distance * c.distance;
    r.inlier_rmse = std::sqrt(sum / static_cast<double>(corrs.pairs.size()));
  }
  return r;
}

}  // namespace

FitnessReport evaluate_alignment(std::span<const Vec3> source, const geometry::KdTree& target_index, double threshold) {
  if (source.empty() || target_index.empty()) throw InvalidArgument("evaluate_alignment: empty source or target");
  return score(build_correspondences(source, target_index, threshold));
}

FitnessReport icp_refine(std::span<const Vec3> source, const geometry::KdTree& target_index, double threshold,
                         int max_iterations, const RigidTransform& init, std::vector<double>* fitness_history) {
  if (source.empty() || target_index.empty()) throw InvalidArgument("icp_refine: empty source or target");
  if (!(threshold > 0.0)) throw InvalidArgument("icp_refine: threshold must be positive");

  const auto& target = target_index.points();
  RigidTransform current = init;
  int iterations = 0;
  std::vector<Vec3> from, to;
  for (; iterations < max_iterations; ++iterations) {
    const auto moved = transform_points(current, source);
    const auto corrs = build_correspondences(moved, target_index, threshold);
    if (fitness_history) fitness_history->push_back(corrs.ratio());
    if (corrs.pairs.empty()) break;

    from.clear();
    to.clear();
    for (const auto& c : corrs.pairs) {
      from.push_back(moved[c.source]);
      to.push_back(target[c.target]);
    }
    const RigidTransform update = procrustes(from, to);
    current = update * current;
    if (update.angle() + update.translation.norm() < kIcpConvergence) {
      ++iterations;
      break;
    }
  }

  FitnessReport r = score(build_correspondences(transform_points(current, source), target_index, threshold));
  r.iterations = iterations;
  r.transform = current;
  return r;
}

FitnessReport icp_refine_reverse(std::span<const Vec3> scene, const geometry::KdTree& model_index, double threshold,
                                 int max_iterations, const RigidTransform& init) {
  FitnessReport r = icp_refine(scene, model_index, threshold, max_iterations, init.inverse());
  r.transform = r.transform.inverse();
  return r;
}

}  // namespace spinealign::registration
