#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "spinealign/geometry/kdtree.hpp"
#include "spinealign/geometry/types.hpp"

namespace spinealign::registration {

struct Correspondence {
  std::uint32_t source = 0;
  std::uint32_t target = 0;
  double distance = 0.0;  // mm
};

struct CorrespondenceSet {
  std::vector<Correspondence> pairs;  // ordered by source index
  std::size_t source_size = 0;
  double threshold = 0.0;  // mm
  bool target_has_normals = false;

  // |pairs| / source_size, 0 for an empty source.
  double ratio() const;
};

// Nearest target point for every source point, kept when its distance is
// <= threshold.
CorrespondenceSet build_correspondences(std::span<const Vec3> source, const geometry::KdTree& target_index,
                                        double threshold, bool target_has_normals = false);

// Fraction of pairs whose source point lies on the outer side of the target
// surface: delta_i = 1 when n_i . (target_i - source_i) < 0, else 0.
// An empty set scores 1. Throws InvalidArgument if the target has no normals.
double containment_score(const CorrespondenceSet& corrs, std::span<const Vec3> source, const PointCloud& target);
inline double containment_score(const CorrespondenceSet& corrs, const PointCloud& source, const PointCloud& target) {
  return containment_score(corrs, source.positions, target);
}

// Sigmoid-weighted versions of the correspondence ratio and containment
// score. A source point at NN distance d gets weight s((threshold - d) / width)
// (zero beyond threshold + 4 width) and a containment penalty
// s(-n . v / width), with s the logistic function.
struct SoftTerms {
  double ratio = 0.0;
  double containment = 1.0;
};
SoftTerms soft_terms(std::span<const Vec3> source, const geometry::KdTree& target_index, const PointCloud& target,
                     double threshold, double width);

}  // namespace spinealign::registration
