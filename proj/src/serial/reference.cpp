#include "spinealign/serial/reference.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Eigenvalues>

#include "spinealign/error.hpp"

namespace spinealign::serial {

std::vector<double> nearest_distances(std::span<const Vec3> queries, const geometry::KdTree& tree) {
  std::vector<double> out;
  out.reserve(queries.size());
  for (const auto& q : queries) out.push_back(tree.nearest(q)->distance);
  return out;
}

double chamfer_distance(const PointCloud& a, const PointCloud& b) {
  if (a.empty() || b.empty()) throw InvalidArgument("chamfer_distance: both clouds must be non-empty");
  const geometry::KdTree ta(a.positions);
  const geometry::KdTree tb(b.positions);
  double ab = 0.0;
  for (double d : nearest_distances(a.positions, tb)) ab += d;
  double ba = 0.0;
  for (double d : nearest_distances(b.positions, ta)) ba += d;
  return 0.5 * (ab / static_cast<double>(a.size()) + ba / static_cast<double>(b.size()));
}

double hausdorff_distance(const PointCloud& a, const PointCloud& b) {
  if (a.empty() || b.empty()) throw InvalidArgument("hausdorff_distance: both clouds must be non-empty");
  const geometry::KdTree ta(a.positions);
  const geometry::KdTree tb(b.positions);
  double worst = 0.0;
  for (double d : nearest_distances(a.positions, tb)) worst = std::max(worst, d);
  for (double d : nearest_distances(b.positions, ta)) worst = std::max(worst, d);
  return worst;
}

PointCloud estimate_normals(const PointCloud& cloud, std::size_t k, const Vec3& viewpoint) {
  if (k < 3 || cloud.size() < k) throw InvalidArgument("estimate_normals: need k >= 3 and at least k points");
  const geometry::KdTree tree(cloud.positions);
  PointCloud out = cloud;
  out.normals.clear();
  for (const auto& p : cloud.positions) {
    const auto nbrs = tree.knn(p, k);
    Vec3 mean = Vec3::Zero();
    for (const auto& nb : nbrs) mean += cloud.positions[nb.index];
    mean /= static_cast<double>(nbrs.size());
    Mat3 cov = Mat3::Zero();
    for (const auto& nb : nbrs) {
      const Vec3 d = cloud.positions[nb.index] - mean;
      cov.noalias() += d * d.transpose();
    }
    const Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
    Vec3 normal = es.eigenvectors().col(0).normalized();
    if (normal.dot(viewpoint - p) < 0.0) normal = -normal;
    out.normals.push_back(normal);
  }
  return out;
}

std::vector<Vec3> transform_points(const RigidTransform& t, std::span<const Vec3> points) {
  std::vector<Vec3> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(t.apply(p));
  return out;
}

registration::CorrespondenceSet build_correspondences(std::span<const Vec3> source, const geometry::KdTree& target_index,
                                                      double threshold, bool target_has_normals) {
  registration::CorrespondenceSet out;
  out.source_size = source.size();
  out.threshold = threshold;
  out.target_has_normals = target_has_normals;
  if (target_index.empty()) return out;
  for (std::size_t i = 0; i < source.size(); ++i) {
    if (const auto hit = target_index.nearest_within(source[i], threshold)) {
      out.pairs.push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(hit->index), hit->distance});
    }
  }
  return out;
}

registration::SoftTerms soft_terms(std::span<const Vec3> source, const geometry::KdTree& target_index,
                                   const PointCloud& target, double threshold, double width) {
  registration::SoftTerms out;
  if (source.empty() || target_index.empty()) return out;
  auto logistic = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
  double sum_w = 0.0, sum_p = 0.0;
  for (const auto& p : source) {
    const auto hit = target_index.nearest_within(p, threshold + 4.0 * width);
    if (!hit) continue;
    const double w = logistic((threshold - hit->distance) / width);
    sum_w += w;
    sum_p += w * logistic(-target.normals[hit->index].dot(target.positions[hit->index] - p) / width);
  }
  out.ratio = sum_w / static_cast<double>(source.size());
  out.containment = sum_w > 0.0 ? sum_p / sum_w : 1.0;
  return out;
}

}  // namespace spinealign::serial
