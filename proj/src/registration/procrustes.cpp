#include "spinealign/registration/procrustes.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/SVD>

#include "spinealign/error.hpp"

namespace spinealign::registration {

RigidTransform procrustes(std::span<const Vec3> from, std::span<const Vec3> to) {
  if (from.size() != to.size()) {
    throw DimensionMismatch("procrustes: " + std::to_string(from.size()) + " source points vs " +
                            std::to_string(to.size()) + " target points");
  }
  if (from.empty()) throw InvalidArgument("procrustes: no point pairs");

  Vec3 cf = Vec3::Zero(), ct = Vec3::Zero();
  for (std::size_t i = 0; i < from.size(); ++i) {
    cf += from[i];
    ct += to[i];
  }
  cf /= static_cast<double>(from.size());
  ct /= static_cast<double>(to.size());

  Mat3 h = Mat3::Zero();
  for (std::size_t i = 0; i < from.size(); ++i) h.noalias() += (from[i] - cf) * (to[i] - ct).transpose();

  const Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Mat3 u = svd.matrixU();
  const Mat3 v = svd.matrixV();
  Mat3 d = Mat3::Identity();
  if ((v * u.transpose()).determinant() < 0.0) d(2, 2) = -1.0;

  RigidTransform t;
  t.rotation = v * d * u.transpose();
  t.translation = ct - t.rotation * cf;
  return t;
}

namespace {

// Throws when every point lies on one line, naming a representative triple:
// the two most distant points plus the point farthest from their line.
void require_non_collinear(std::span<const Vec3> pts, const char* which) {
  std::size_t a = 0, b = 1;
  double span_sq = -1.0;
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = i + 1; j < pts.size(); ++j) {
      const double d = (pts[i] - pts[j]).squaredNorm();
      if (d > span_sq) {
        span_sq = d;
        a = i;
        b = j;
      }
    }
  std::size_t c = a == 0 ? (b == 1 ? 2 : 1) : 0;
  double off = -1.0;
  const Vec3 dir = span_sq > 0.0 ? Vec3((pts[b] - pts[a]).normalized()) : Vec3::Zero();
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (i == a || i == b) continue;
    const Vec3 r = pts[i] - pts[a];
    const double d = (r - r.dot(dir) * dir).norm();
    if (d > off) {
      off = d;
      c = i;
    }
  }
  const double length = std::sqrt(std::max(span_sq, 0.0));
  if (length == 0.0 || off <= 1e-9 * std::max(1.0, length)) {
    std::size_t idx[3] = {a, b, c};
    std::sort(idx, idx + 3);
    throw DegenerateGeometry(std::string(which) + " landmarks are collinear: triple (" + std::to_string(idx[0]) +
                             ", " + std::to_string(idx[1]) + ", " + std::to_string(idx[2]) + ")");
  }
}

}  // namespace

RigidTransform coarse_align_landmarks(std::span<const Vec3> pre, std::span<const Vec3> intra) {
  if (pre.size() != intra.size()) {
    throw DimensionMismatch("coarse alignment: " + std::to_string(pre.size()) + " preoperative landmarks vs " +
                            std::to_string(intra.size()) + " intraoperative landmarks");
  }
  if (pre.size() < 3) {
    throw InvalidArgument("coarse alignment needs at least 3 landmark pairs, got " + std::to_string(pre.size()));
  }
  require_non_collinear(pre, "preoperative");
  require_non_collinear(intra, "intraoperative");
  return procrustes(pre, intra);
}

double landmark_rms(const RigidTransform& t, std::span<const Vec3> from, std::span<const Vec3> to) {
  if (from.size() != to.size() || from.empty()) throw DimensionMismatch("landmark_rms: mismatched or empty sets");
  double sum = 0.0;
  for (std::size_t i = 0; i < from.size(); ++i) sum += (t.apply(from[i]) - to[i]).squaredNorm();
  return std::sqrt(sum / static_cast<double>(from.size()));
}

}  // namespace spinealign::registration
