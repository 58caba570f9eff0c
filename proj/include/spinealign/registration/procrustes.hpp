#pragma once

#include <span>

#include "spinealign/geometry/types.hpp"

namespace spinealign::registration {

// Least-squares rigid transform (no scale) taking `from[i]` onto `to[i]`,
// with det(R) = +1. Needs at least one pair; with fewer than three
// non-collinear pairs the rotation is not unique and an arbitrary minimiser
// is returned.
RigidTransform procrustes(std::span<const Vec3> from, std::span<const Vec3> to);

// Landmark-based coarse registration. Requires >= 3 pairs, equal counts and
// non-collinear landmarks on both sides; the error message names the
// offending triple.
RigidTransform coarse_align_landmarks(std::span<const Vec3> pre, std::span<const Vec3> intra);

// Root-mean-square residual |t(from[i]) - to[i]|.
double landmark_rms(const RigidTransform& t, std::span<const Vec3> from, std::span<const Vec3> to);

}  // namespace spinealign::registration
