#pragma once

#include <array>
#include <vector>

#include <revisit/lie.hpp>
#include <revisit/types.hpp>

namespace revisit {

// Three-point absolute pose: returns camera poses T such that T * points[i]
// lies along bearings[i] (unit direction vectors in the camera frame, z
// forward). Classical distance-ratio formulation: the two ratios satisfy a
// quartic, giving up to four algebraic solutions; degenerate geometry
// (collinear points, parallel bearings) may give none. Callers disambiguate
// with extra correspondences.
std::vector<SE3> solve_p3p(const std::array<Vec3, 3>& points,
                           const std::array<Vec3, 3>& bearings);

// Rigid least-squares alignment (no scale): T minimizing sum ||dst_i - T *
// src_i||^2 over rotations+translations. Requires equal non-empty sizes.
SE3 rigid_align(const std::vector<Vec3>& src, const std::vector<Vec3>& dst);

}  // namespace revisit
