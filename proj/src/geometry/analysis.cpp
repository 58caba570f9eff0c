#include "spinealign/geometry/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Eigenvalues>

#include "spinealign/error.hpp"

namespace spinealign::geometry {

namespace {

Mat3 covariance(std::span<const Vec3> points, const Vec3& mean) {
  Mat3 cov = Mat3::Zero();
  for (const auto& p : points) {
    const Vec3 d = p - mean;
    cov.noalias() += d * d.transpose();
  }
  return cov / static_cast<double>(points.size());
}

void require_non_empty(const PointCloud& a, const PointCloud& b, const char* what) {
  if (a.empty() || b.empty()) throw InvalidArgument(std::string(what) + ": both clouds must be non-empty");
}

}  // namespace

PointCloud estimate_normals(const PointCloud& cloud, std::size_t k, const Vec3& viewpoint) {
  if (k < 3) throw InvalidArgument("estimate_normals: k must be >= 3");
  if (cloud.size() < k) {
    throw InvalidArgument("estimate_normals: cloud has " + std::to_string(cloud.size()) + " points, fewer than k=" +
                          std::to_string(k));
  }
  const KdTree tree(cloud.positions);
  PointCloud out = cloud;
  out.normals.assign(cloud.size(), Vec3::UnitZ());

  const auto n = static_cast<std::ptrdiff_t>(cloud.size());
#pragma omp parallel for schedule(dynamic, 256)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const Vec3& p = cloud.positions[i];
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
    out.normals[i] = normal;
  }
  return out;
}

PrincipalFrame principal_frame(std::span<const Vec3> points) {
  if (points.size() < 4) {
    throw DegenerateGeometry("principal_frame: need at least 4 points, got " + std::to_string(points.size()));
  }
  PrincipalFrame frame;
  Vec3 sum = Vec3::Zero();
  for (const auto& p : points) sum += p;
  frame.centroid = sum / static_cast<double>(points.size());

  const Eigen::SelfAdjointEigenSolver<Mat3> es(covariance(points, frame.centroid));
  const Vec3 evals = es.eigenvalues();  // ascending
  if (!(evals[2] > 0.0) || evals[1] <= 1e-12 * evals[2]) {
    throw DegenerateGeometry("principal_frame: covariance is rank deficient (points are coincident or collinear)");
  }
  for (int i = 0; i < 2; ++i) {
    Vec3 axis = es.eigenvectors().col(2 - i).normalized();
    Eigen::Index largest = 0;
    axis.cwiseAbs().maxCoeff(&largest);
    if (axis[largest] < 0.0) axis = -axis;
    frame.axes[i] = axis;
    frame.variances[i] = evals[2 - i];
  }
  frame.axes[2] = frame.axes[0].cross(frame.axes[1]).normalized();
  frame.variances[2] = std::max(evals[0], 0.0);
  return frame;
}

std::vector<double> nearest_distances(std::span<const Vec3> queries, const KdTree& tree) {
  std::vector<double> out(queries.size());
  const auto n = static_cast<std::ptrdiff_t>(queries.size());
#pragma omp parallel for schedule(dynamic, 512)
  for (std::ptrdiff_t i = 0; i < n; ++i) out[i] = tree.nearest(queries[i])->distance;
  return out;
}

double chamfer_distance(const PointCloud& a, const PointCloud& b) {
  require_non_empty(a, b, "chamfer_distance");
  const KdTree ta(a.positions);
  const KdTree tb(b.positions);
  // Sums are reduced serially in index order so the result does not depend
  // on the thread schedule.
  double ab = 0.0;
  for (double d : nearest_distances(a.positions, tb)) ab += d;
  double ba = 0.0;
  for (double d : nearest_distances(b.positions, ta)) ba += d;
  return 0.5 * (ab / static_cast<double>(a.size()) + ba / static_cast<double>(b.size()));
}

double hausdorff_distance(const PointCloud& a, const PointCloud& b) {
  require_non_empty(a, b, "hausdorff_distance");
  const KdTree ta(a.positions);
  const KdTree tb(b.positions);
  double worst = 0.0;
  for (double d : nearest_distances(a.positions, tb)) worst = std::max(worst, d);
  for (double d : nearest_distances(b.positions, ta)) worst = std::max(worst, d);
  return worst;
}

}  // namespace spinealign::geometry
