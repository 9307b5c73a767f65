#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <vector>

#include <revisit/bow.hpp>
#include <revisit/camera.hpp>
#include <revisit/descriptor.hpp>
#include <revisit/keyframe.hpp>
#include <revisit/lie.hpp>

namespace revisit {

// One putative correspondence between a reference (candidate) keyframe point
// and a current keyframe point. The reference point always carries inverse
// depth; the current point may not (d_cur <= 0 means pixel-only: it
// contributes a 2D reprojection residual instead of a 3D one).
struct MatchedPair {
  Vec2 p_ref = Vec2::Zero();
  double d_ref = 0.0;
  Vec2 q_cur = Vec2::Zero();
  double d_cur = 0.0;
};

struct RansacPnpConfig {
  int max_iterations = 500;          // adaptive cap
  double confidence = 0.99;          // drives the adaptive iteration count
  double inlier_threshold_px = 3.0;  // reprojection gate (strict <)
  int min_inliers = 12;
  int refine_steps = 10;             // Gauss-Newton refit on the inlier set
  uint64_t seed = 0x9e3779b97f4a7c15ULL;
};

struct PnpResult {
  SE3 pose;                  // reference camera frame -> current camera frame
  std::vector<int> inliers;  // ascending indices into the match list
  int iterations = 0;        // RANSAC rounds actually run
};

// RANSAC over minimal 3-point hypotheses (disambiguated by the 4th sampled
// point), reprojection inlier gate, adaptive iteration count, final 6-DoF
// Gauss-Newton refit on the inlier set. Returns nothing when fewer than 4
// matches are given or no hypothesis reaches min_inliers.
std::optional<PnpResult> ransac_pnp(const std::vector<MatchedPair>& matches,
                                    const CameraIntrinsics& intrinsics,
                                    const RansacPnpConfig& config);

struct Sim3SolverConfig {
  double w1 = 1.0;         // 3D residual weight (1/m^2 scale)
  double w2 = 1.0;         // 2D residual weight (1/px^2 scale)
  double huber_3d = 0.5;   // meters
  double huber_2d = 2.0;   // pixels
  int max_iterations = 50;
  double convergence_eps = 1e-10;
  bool freeze_scale = false;  // solve the 6-DoF rigid special case
};

struct ResidualTerm {
  double norm = 0.0;      // residual magnitude (meters or pixels)
  bool depth_bearing = false;
};

struct Sim3Estimate {
  Sim3 s_cr;  // reference camera frame -> current camera frame
  double final_cost = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<ResidualTerm> residuals;  // one per input match, input order
};

// Refines a similarity transform from matched pairs by Gauss-Newton (with
// Levenberg damping when a step increases the cost) on the hybrid cost:
// depth-bearing pairs contribute Huber-weighted 3D point-to-point residuals,
// pixel-only pairs Huber-weighted 2D reprojection residuals. Left-
// multiplicative 7-DoF updates. Throws InsufficientData (no matches),
// RankDeficient (normal-matrix condition estimate above 1e12 at the first
// iteration, e.g. the scale gauge freedom when w1 = 0), Diverged (cost
// increased over 5 consecutive damped retries).
Sim3Estimate estimate_sim3(const std::vector<MatchedPair>& matches, const SE3& init,
                           const CameraIntrinsics& intrinsics, const Sim3SolverConfig& config);

// Direct cost evaluation at a fixed transform (used by gauge/uniqueness
// checks; same Huber weighting as estimate_sim3).
double sim3_cost(const std::vector<MatchedPair>& matches, const Sim3& s_cr,
                 const CameraIntrinsics& intrinsics, const Sim3SolverConfig& config);

struct VerifyConfig {
  int min_inliers = 20;
  double max_mean_residual_2d_px = 2.0;
  double max_mean_residual_3d_depth_factor = 0.05;  // of the median scene depth
};

// Geometric acceptance test on the refined constraint statistics.
bool verify(int inliers, double mean_residual_2d, double mean_residual_3d,
            double median_scene_depth, const VerifyConfig& config);

struct LoopConstraint {
  uint64_t id_ref = 0;
  uint64_t id_cur = 0;
  Sim3 s_cr;  // reference camera frame -> current camera frame
  int inliers = 0;
  double mean_residual_2d = 0.0;  // pixels, over 2D inlier terms
  double mean_residual_3d = 0.0;  // meters, over 3D inlier terms
  bool accepted = false;
};

using KeyframeStore = std::map<uint64_t, std::shared_ptr<const Keyframe>>;

struct LoopClosureConfig {
  size_t max_candidates = 5;
  int min_matches = 20;
  MatchConfig match;
  RansacPnpConfig ransac;
  double sigma_2d_px = 1.0;            // w2 = 1 / sigma^2
  double sigma_3d_depth_factor = 0.05; // sigma_3d = factor * median depth
  double huber_2d_px = 2.0;
  double huber_3d_depth_factor = 0.1;  // huber_3d = factor * median depth
  int solver_max_iterations = 50;
  double solver_convergence_eps = 1e-10;
  VerifyConfig verify;
};

struct LoopCandidate {
  std::shared_ptr<const Keyframe> keyframe;
  std::vector<FeatureMatch> matches;
  double score = 0.0;
};

// Database query + descriptor matching. Candidates with fewer than
// min_matches matches are dropped; results keep the database ranking.
std::vector<LoopCandidate> propose_and_match(const Keyframe& current,
                                             const KeyframeDatabase& db,
                                             const KeyframeStore& store,
                                             const std::vector<uint64_t>& exclude,
                                             const LoopClosureConfig& config);

// Matched pairs for the solvers: reference corners require inverse depth;
// current-corner depth is attached when available.
std::vector<MatchedPair> build_matched_pairs(const Keyframe& reference, const Keyframe& current,
                                             const std::vector<FeatureMatch>& matches);

// Median depth (1/inverse-depth) of the current keyframe over depth-bearing
// pairs; 0 when none have depth.
double median_scene_depth(const std::vector<MatchedPair>& pairs);

// Geometric cascade for one explicit (current, reference) pair using
// precomputed matches: pair building, RANSAC P3P, Sim(3) refinement,
// verification. Returns the constraint only when every gate passes.
std::optional<LoopConstraint> attempt_loop_closure_pair(const Keyframe& current,
                                                        const Keyframe& reference,
                                                        const std::vector<FeatureMatch>& matches,
                                                        const CameraIntrinsics& intrinsics,
                                                        const LoopClosureConfig& config);

// Same, matching the two keyframes' descriptors first.
std::optional<LoopConstraint> attempt_loop_closure_pair(const Keyframe& current,
                                                        const Keyframe& reference,
                                                        const CameraIntrinsics& intrinsics,
                                                        const LoopClosureConfig& config);

// Full per-keyframe loop attempt: propose, match, PnP, Sim(3) refine, verify.
// Returns the first accepted constraint in candidate order, or nothing.
std::optional<LoopConstraint> attempt_loop_closure(const Keyframe& current,
                                                   const KeyframeDatabase& db,
                                                   const KeyframeStore& store,
                                                   const std::vector<uint64_t>& exclude,
                                                   const CameraIntrinsics& intrinsics,
                                                   const LoopClosureConfig& config);

}  // namespace revisit
