#pragma once

// Single-threaded reference versions of the OpenMP kernels. They share the
// data structures of the parallel code but none of its loop scheduling, and
// exist so tests and the benchmark can compare the two paths.

#include <span>
#include <vector>

#include "spinealign/geometry/kdtree.hpp"
#include "spinealign/geometry/types.hpp"
#include "spinealign/registration/correspondence.hpp"

namespace spinealign::serial {

std::vector<double> nearest_distances(std::span<const Vec3> queries, const geometry::KdTree& tree);
double chamfer_distance(const PointCloud& a, const PointCloud& b);
double hausdorff_distance(const PointCloud& a, const PointCloud& b);
PointCloud estimate_normals(const PointCloud& cloud, std::size_t k, const Vec3& viewpoint);
std::vector<Vec3> transform_points(const RigidTransform& t, std::span<const Vec3> points);
registration::CorrespondenceSet build_correspondences(std::span<const Vec3> source, const geometry::KdTree& target_index,
                                                      double threshold, bool target_has_normals = false);
registration::SoftTerms soft_terms(std::span<const Vec3> source, const geometry::KdTree& target_index,
                                   const PointCloud& target, double threshold, double width);

}  // namespace spinealign::serial
