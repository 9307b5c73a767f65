#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include <revisit/lie.hpp>
#include <revisit/types.hpp>

namespace revisit {

// Timestamped camera-to-world pose sample; rigid trajectories use scale 1.
struct TrajectoryPoint {
  double timestamp = 0.0;
  Sim3 pose;
  uint64_t id = 0;
};

using Trajectory = std::vector<TrajectoryPoint>;

enum class Alignment { kSim3, kSE3 };

// Closed-form least-squares similarity (or rigid, when with_scale is false)
// mapping src onto dst: centroid subtraction, cross-covariance SVD with a
// reflection guard, scale from the variance ratio. Throws InsufficientData
// (fewer than 3 points) and DegenerateConfiguration (coincident/collinear
// sets, which leave the rotation underdetermined).
Sim3 umeyama_alignment(const std::vector<Vec3>& src, const std::vector<Vec3>& dst,
                       bool with_scale);

// Pairs of indices (into a, into b): for each sample of a, the nearest
// b-sample by timestamp when within max_dt seconds.
std::vector<std::pair<size_t, size_t>> associate(const Trajectory& a, const Trajectory& b,
                                                 double max_dt);

// RMSE of position differences after optimally aligning the estimate onto the
// ground truth over timestamp-associated pairs (nearest within max_dt).
// Throws NoAssociations when fewer than 3 pairs associate.
double ate_rmse(const Trajectory& estimate, const Trajectory& ground_truth, Alignment alignment,
                double max_dt = 0.02);

// Start-to-end accumulated drift. All values are non-negative; e_s >= 1.
struct DriftReport {
  double e_align = 0.0;  // meters (RMSE between the two alignments' images)
  double e_t = 0.0;      // meters
  double e_r = 0.0;      // degrees
  double e_s = 1.0;      // dimensionless
};

// Aligns the trajectory independently against a ground-truth start segment
// and end segment (similarity alignments S_start, S_end); the drift transform
// D = S_start^-1 * S_end yields e_s = max(s_D, 1/s_D), e_r = rotation angle
// of D, e_t = |translation of D|, and e_align = RMSE over all trajectory
// positions between their S_start- and S_end-mapped images. Throws
// NoAssociations when either segment associates fewer than 3 poses, and
// propagates DegenerateConfiguration from the alignments.
DriftReport tum_mono_drift(const Trajectory& trajectory, const Trajectory& gt_start,
                           const Trajectory& gt_end, double max_dt = 0.02);

}  // namespace revisit
