#include "spinealign/registration/correspondence.hpp"

#include <cmath>
#include <optional>

#include "spinealign/error.hpp"

namespace spinealign::registration {

double CorrespondenceSet::ratio() const {
  return source_size == 0 ? 0.0 : static_cast<double>(pairs.size()) / static_cast<double>(source_size);
}

CorrespondenceSet build_correspondences(std::span<const Vec3> source, const geometry::KdTree& target_index,
                                        double threshold, bool target_has_normals) {
  CorrespondenceSet out;
  out.source_size = source.size();
  out.threshold = threshold;
  out.target_has_normals = target_has_normals;
  if (source.empty() || target_index.empty()) return out;

  std::vector<std::optional<geometry::Neighbor>> hits(source.size());
  const auto n = static_cast<std::ptrdiff_t>(source.size());
#pragma omp parallel for schedule(static) if (n > 1024)
  for (std::ptrdiff_t i = 0; i < n; ++i) hits[i] = target_index.nearest_within(source[i], threshold);

  for (std::size_t i = 0; i < hits.size(); ++i) {
    if (hits[i]) {
      out.pairs.push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(hits[i]->index), hits[i]->distance});
    }
  }
  return out;
}

double containment_score(const CorrespondenceSet& corrs, std::span<const Vec3> source, const PointCloud& target) {
  if (!target.has_normals()) throw InvalidArgument("containment_score: target cloud has no normals");
  if (corrs.pairs.empty()) return 1.0;
  std::size_t above = 0;
  for (const auto& c : corrs.pairs) {
    const Vec3 v = target.positions[c.target] - source[c.source];
    if (target.normals[c.target].dot(v) < 0.0) ++above;
  }
  return static_cast<double>(above) / static_cast<double>(corrs.pairs.size());
}

namespace {

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

SoftTerms soft_terms(std::span<const Vec3> source, const geometry::KdTree& target_index, const PointCloud& target,
                     double threshold, double width) {
  if (!target.has_normals()) throw InvalidArgument("soft_terms: target cloud has no normals");
  if (!(width > 0.0)) throw InvalidArgument("soft_terms: width must be positive");
  SoftTerms out;
  if (source.empty() || target_index.empty()) return out;

  const double cutoff = threshold + 4.0 * width;
  std::vector<double> weight(source.size(), 0.0), penalty(source.size(), 0.0);
  const auto n = static_cast<std::ptrdiff_t>(source.size());
#pragma omp parallel for schedule(static) if (n > 1024)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    const auto hit = target_index.nearest_within(source[i], cutoff);
    if (!hit) continue;
    const double w = logistic((threshold - hit->distance) / width);
    const Vec3 v = target.positions[hit->index] - source[i];
    weight[i] = w;
    penalty[i] = w * logistic(-target.normals[hit->index].dot(v) / width);
  }

  double sum_w = 0.0, sum_p = 0.0;
  for (std::size_t i = 0; i < source.size(); ++i) {
    sum_w += weight[i];
    sum_p += penalty[i];
  }
  out.ratio = sum_w / static_cast<double>(source.size());
  out.containment = sum_w > 0.0 ? sum_p / sum_w : 1.0;
  return out;
}

}  // namespace spinealign::registration
