#pragma once

#include <span>

#include "spinealign/geometry/kdtree.hpp"
#include "spinealign/geometry/types.hpp"

namespace spinealign::geometry {

inline constexpr std::size_t kDefaultNormalNeighbors = 30;

// Per-point normal from the smallest-variance eigenvector of the k-NN
// covariance, flipped so that normal . (viewpoint - point) >= 0.
// Throws InvalidArgument if k < 3 or the cloud has fewer than k points.
PointCloud estimate_normals(const PointCloud& cloud, std::size_t k = kDefaultNormalNeighbors,
                            const Vec3& viewpoint = Vec3::Zero());

// Principal axes of the centred covariance, descending variance, right
// handed. Each axis is signed so its largest-magnitude component is positive
// (axis 2 is then fixed by handedness).
// Throws DegenerateGeometry for fewer than 4 points or collinear input.
PrincipalFrame principal_frame(std::span<const Vec3> points);
inline PrincipalFrame principal_frame(const PointCloud& cloud) { return principal_frame(cloud.positions); }

// 0.5 * (mean NN distance a->b + mean NN distance b->a). mm.
double chamfer_distance(const PointCloud& a, const PointCloud& b);
// max over both directions of the largest NN distance. mm.
double hausdorff_distance(const PointCloud& a, const PointCloud& b);

// Nearest-neighbour distance from every point of `queries` into `tree`.
std::vector<double> nearest_distances(std::span<const Vec3> queries, const KdTree& tree);

}  // namespace spinealign::geometry
