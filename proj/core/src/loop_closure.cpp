#include <revisit/loop_closure.hpp>

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include <revisit/error.hpp>
#include <revisit/p3p.hpp>
#include <revisit/rng.hpp>

namespace revisit {

namespace {

constexpr double kMinDepthZ = 1e-8;

Vec3 bearing_from_pixel(const CameraIntrinsics& k, const Vec2& pixel) {
  Vec3 ray((pixel.x() - k.cx) / k.fx, (pixel.y() - k.cy) / k.fy, 1.0);
  return ray.normalized();
}

// Projection without the image-bounds check: reprojection residuals are
// meaningful slightly outside the frame.
bool project_unbounded(const CameraIntrinsics& k, const Vec3& x, Vec2& out) {
  if (x.z() <= kMinDepthZ) return false;
  out.x() = k.fx * x.x() / x.z() + k.cx;
  out.y() = k.fy * x.y() / x.z() + k.cy;
  return true;
}

double reprojection_error(const CameraIntrinsics& k, const SE3& pose, const Vec3& point,
                          const Vec2& observation) {
  Vec2 projected;
  if (!project_unbounded(k, pose * point, projected)) {
    return std::numeric_limits<double>::infinity();
  }
  return (projected - observation).norm();
}

// Huber loss of the residual magnitude.
double huber_rho(double e, double delta) {
  return e <= delta ? e * e : delta * (2.0 * e - delta);
}

// IRLS factor rho'(e) / (2e) = min(1, delta / e).
double huber_weight(double e, double delta) {
  return e <= delta ? 1.0 : delta / e;
}

struct TermEval {
  double cost = 0.0;
  std::vector<ResidualTerm> residuals;
};

// Out-of-view pixel-only terms get a large constant penalty so steps that
// push points behind the camera are rejected by the cost comparison.
constexpr double kBehindCameraResidual = 1e6;

TermEval evaluate_terms(const std::vector<MatchedPair>& matches, const Sim3& s_cr,
                        const CameraIntrinsics& k, const Sim3SolverConfig& cfg) {
  TermEval eval;
  eval.residuals.reserve(matches.size());
  for (const MatchedPair& m : matches) {
    const Vec3 p = backproject(k, m.p_ref, m.d_ref);
    const Vec3 x = s_cr * p;
    ResidualTerm term;
    if (m.d_cur > 0.0) {
      term.depth_bearing = true;
      const Vec3 q = backproject(k, m.q_cur, m.d_cur);
      term.norm = (x - q).norm();
      eval.cost += cfg.w1 * huber_rho(term.norm, cfg.huber_3d);
    } else {
      Vec2 projected;
      term.norm = project_unbounded(k, x, projected) ? (projected - m.q_cur).norm()
                                                     : kBehindCameraResidual;
      eval.cost += cfg.w2 * huber_rho(term.norm, cfg.huber_2d);
    }
    eval.residuals.push_back(term);
  }
  return eval;
}

}  // namespace

double sim3_cost(const std::vector<MatchedPair>& matches, const Sim3& s_cr,
                 const CameraIntrinsics& intrinsics, const Sim3SolverConfig& config) {
  return evaluate_terms(matches, s_cr, intrinsics, config).cost;
}

std::optional<PnpResult> ransac_pnp(const std::vector<MatchedPair>& matches,
                                    const CameraIntrinsics& intrinsics,
                                    const RansacPnpConfig& config) {
  const size_t n = matches.size();
  if (n < 4) {
    return std::nullopt;
  }
  std::vector<Vec3> points;
  std::vector<Vec3> bearings;
  std::vector<Vec2> observations;
  points.reserve(n);
  bearings.reserve(n);
  observations.reserve(n);
  for (const MatchedPair& m : matches) {
    points.push_back(backproject(intrinsics, m.p_ref, m.d_ref));
    bearings.push_back(bearing_from_pixel(intrinsics, m.q_cur));
    observations.push_back(m.q_cur);
  }

  Rng rng(config.seed);
  auto count_inliers = [&](const SE3& pose) {
    int count = 0;
    for (size_t i = 0; i < n; ++i) {
      if (reprojection_error(intrinsics, pose, points[i], observations[i]) <
          config.inlier_threshold_px) {
        ++count;
      }
    }
    return count;
  };

  SE3 best_pose;
  int best_count = 0;
  bool have_best = false;
  int required = config.max_iterations;
  int iterations = 0;
  while (iterations < std::min(required, config.max_iterations)) {
    ++iterations;
    // Four distinct sample indices: three for the minimal solver, one to
    // disambiguate its algebraic solutions.
    std::array<size_t, 4> sample{};
    for (int s = 0; s < 4;) {
      const size_t idx = static_cast<size_t>(rng.next_below(n));
      bool duplicate = false;
      for (int t = 0; t < s; ++t) duplicate |= sample[static_cast<size_t>(t)] == idx;
      if (!duplicate) {
        sample[static_cast<size_t>(s)] = idx;
        ++s;
      }
    }
    const std::array<Vec3, 3> sample_points = {points[sample[0]], points[sample[1]],
                                               points[sample[2]]};
    const std::array<Vec3, 3> sample_bearings = {bearings[sample[0]], bearings[sample[1]],
                                                 bearings[sample[2]]};
    SE3 hypothesis;
    double best_check = std::numeric_limits<double>::infinity();
    for (const SE3& candidate : solve_p3p(sample_points, sample_bearings)) {
      const double err =
          reprojection_error(intrinsics, candidate, points[sample[3]], observations[sample[3]]);
      if (err < best_check) {
        best_check = err;
        hypothesis = candidate;
      }
    }
    if (!std::isfinite(best_check)) {
      continue;
    }
    const int count = count_inliers(hypothesis);
    if (count > best_count) {
      best_count = count;
      best_pose = hypothesis;
      have_best = true;
      // Adaptive iteration bound for the configured confidence (sample size 4).
      const double w = static_cast<double>(count) / static_cast<double>(n);
      const double p_outlier_sample = 1.0 - w * w * w * w;
      if (p_outlier_sample <= 0.0) {
        required = iterations;
      } else if (p_outlier_sample < 1.0) {
        required = static_cast<int>(std::ceil(std::log(1.0 - config.confidence) /
                                              std::log(p_outlier_sample)));
      }
    }
  }

  if (!have_best || best_count < config.min_inliers) {
    return std::nullopt;
  }

  // Gauss-Newton refit of the 6-DoF pose on the inlier set.
  std::vector<size_t> refit_set;
  for (size_t i = 0; i < n; ++i) {
    if (reprojection_error(intrinsics, best_pose, points[i], observations[i]) <
        config.inlier_threshold_px) {
      refit_set.push_back(i);
    }
  }
  SE3 pose = best_pose;
  for (int step = 0; step < config.refine_steps; ++step) {
    Mat6 h = Mat6::Zero();
    Vec6 g = Vec6::Zero();
    for (size_t i : refit_set) {
      const Vec3 x = pose * points[i];
      Vec2 projected;
      if (!project_unbounded(intrinsics, x, projected)) continue;
      const Vec2 r = projected - observations[i];
      Eigen::Matrix<double, 2, 6> jac;
      jac.leftCols<3>() = project_jacobian(intrinsics, x);
      jac.rightCols<3>() = -project_jacobian(intrinsics, x) * hat(x);
      h += jac.transpose() * jac;
      g += jac.transpose() * r;
    }
    const Vec6 delta = h.ldlt().solve(-g);
    if (!delta.allFinite()) break;
    pose = SE3::exp(delta) * pose;
    if (delta.norm() < 1e-14) break;
  }

  PnpResult result;
  result.pose = pose;
  result.iterations = iterations;
  for (size_t i = 0; i < n; ++i) {
    if (reprojection_error(intrinsics, pose, points[i], observations[i]) <
        config.inlier_threshold_px) {
      result.inliers.push_back(static_cast<int>(i));
    }
  }
  if (static_cast<int>(result.inliers.size()) < config.min_inliers) {
    return std::nullopt;
  }
  return result;
}

Sim3Estimate estimate_sim3(const std::vector<MatchedPair>& matches, const SE3& init,
                           const CameraIntrinsics& intrinsics, const Sim3SolverConfig& config) {
  if (matches.empty()) {
    throw Error(ErrorCode::kInsufficientData, "no matches to refine a similarity from");
  }
  const int dof = config.freeze_scale ? 6 : 7;

  std::vector<Vec3> ref_points;
  ref_points.reserve(matches.size());
  for (const MatchedPair& m : matches) {
    ref_points.push_back(backproject(intrinsics, m.p_ref, m.d_ref));
  }

  Sim3 estimate = init.to_sim3();  // scale seeded at 1
  TermEval current = evaluate_terms(matches, estimate, intrinsics, config);

  Sim3Estimate out;
  out.iterations = 0;
  double lambda = 0.0;
  for (int iter = 0; iter < config.max_iterations; ++iter) {
    Mat7 h = Mat7::Zero();
    Vec7 g = Vec7::Zero();
    for (size_t i = 0; i < matches.size(); ++i) {
      const MatchedPair& m = matches[i];
      const Vec3 x = estimate * ref_points[i];
      Eigen::Matrix<double, 3, 7> point_jac;  // left-multiplicative increment
      point_jac.leftCols<3>() = Mat3::Identity();
      point_jac.block<3, 3>(0, 3) = -hat(x);
      point_jac.col(6) = x;
      if (m.d_cur > 0.0) {
        const Vec3 r = x - backproject(intrinsics, m.q_cur, m.d_cur);
        const double weight = config.w1 * huber_weight(r.norm(), config.huber_3d);
        h += weight * point_jac.transpose() * point_jac;
        g += weight * point_jac.transpose() * r;
      } else {
        Vec2 projected;
        if (!project_unbounded(intrinsics, x, projected)) continue;
        const Vec2 r = projected - m.q_cur;
        const Eigen::Matrix<double, 2, 7> jac = project_jacobian(intrinsics, x) * point_jac;
        const double weight = config.w2 * huber_weight(r.norm(), config.huber_2d);
        h += weight * jac.transpose() * jac;
        g += weight * jac.transpose() * r;
      }
    }

    if (iter == 0) {
      // Condition estimate of the (reduced) normal matrix; an unobservable
      // direction (for example the scale gauge with no 3D terms) shows up as
      // a vanishing eigenvalue.
      Eigen::SelfAdjointEigenSolver<MatX> eig(h.topLeftCorner(dof, dof));
      const double max_ev = eig.eigenvalues().cwiseAbs().maxCoeff();
      const double min_ev = eig.eigenvalues().minCoeff();
      if (!(min_ev > 0.0) || max_ev / min_ev > 1e12) {
        throw Error(ErrorCode::kRankDeficient,
                    "similarity normal matrix condition estimate exceeds 1e12");
      }
    }

    bool accepted = false;
    Vec7 delta = Vec7::Zero();
    double best_rejected = std::numeric_limits<double>::infinity();
    for (int attempt = 0; attempt < 5; ++attempt) {
      MatX damped = h.topLeftCorner(dof, dof);
      for (int d = 0; d < dof; ++d) {
        damped(d, d) += lambda * h(d, d);
      }
      const VecX step = damped.ldlt().solve(-g.head(dof));
      delta.setZero();
      delta.head(dof) = step;
      if (!delta.allFinite()) {
        lambda = lambda == 0.0 ? 1e-4 : lambda * 10.0;
        continue;
      }
      if (delta.norm() < config.convergence_eps) {
        // A vanishing step is convergence; at this size the cost comparison
        // below is last-ulp noise and must not be read as divergence.
        out.converged = true;
        break;
      }
      const Sim3 proposal = Sim3::exp(delta) * estimate;
      TermEval next = evaluate_terms(matches, proposal, intrinsics, config);
      if (next.cost <= current.cost) {
        estimate = proposal;
        current = std::move(next);
        lambda = lambda / 3.0;
        accepted = true;
        break;
      }
      best_rejected = std::min(best_rejected, next.cost);
      lambda = lambda == 0.0 ? 1e-4 : lambda * 10.0;
    }
    if (out.converged) {
      break;
    }
    if (!accepted) {
      // The robust reweighting leaves a fixed point where proposals tie the
      // current cost to within rounding; only a real increase is divergence.
      if (best_rejected <= current.cost * (1.0 + 1e-12)) {
        out.converged = true;
        break;
      }
      throw Error(ErrorCode::kDiverged, "similarity refinement cost increased repeatedly");
    }
    ++out.iterations;
    if (delta.norm() < config.convergence_eps) {
      out.converged = true;
      break;
    }
  }

  out.s_cr = estimate;
  out.final_cost = current.cost;
  out.residuals = std::move(current.residuals);
  return out;
}

bool verify(int inliers, double mean_residual_2d, double mean_residual_3d,
            double median_scene_depth, const VerifyConfig& config) {
  if (inliers < config.min_inliers) return false;
  if (mean_residual_2d > config.max_mean_residual_2d_px) return false;
  if (median_scene_depth <= 0.0) return false;
  return mean_residual_3d <= config.max_mean_residual_3d_depth_factor * median_scene_depth;
}

std::vector<LoopCandidate> propose_and_match(const Keyframe& current, const KeyframeDatabase& db,
                                             const KeyframeStore& store,
                                             const std::vector<uint64_t>& exclude,
                                             const LoopClosureConfig& config) {
  std::vector<LoopCandidate> out;
  if (current.descriptors.empty() || current.bow.empty()) {
    return out;
  }
  for (const QueryResult& hit : db.query(current.bow, config.max_candidates, exclude)) {
    auto it = store.find(hit.keyframe_id);
    if (it == store.end()) continue;
    std::vector<FeatureMatch> matches =
        match(it->second->descriptors, current.descriptors, config.match);
    if (static_cast<int>(matches.size()) < config.min_matches) continue;
    out.push_back({it->second, std::move(matches), hit.score});
  }
  return out;
}

std::vector<MatchedPair> build_matched_pairs(const Keyframe& reference, const Keyframe& current,
                                             const std::vector<FeatureMatch>& matches) {
  std::vector<MatchedPair> pairs;
  pairs.reserve(matches.size());
  for (const FeatureMatch& m : matches) {
    const size_t ri = static_cast<size_t>(m.ref_index);
    const size_t ci = static_cast<size_t>(m.cur_index);
    const double d_ref = reference.inv_depths[ri];
    if (d_ref <= 0.0) continue;  // reference points must carry depth
    MatchedPair pair;
    pair.p_ref = Vec2(reference.points[ri].u, reference.points[ri].v);
    pair.d_ref = d_ref;
    pair.q_cur = Vec2(current.points[ci].u, current.points[ci].v);
    pair.d_cur = current.inv_depths[ci] > 0.0 ? current.inv_depths[ci] : 0.0;
    pairs.push_back(pair);
  }
  return pairs;
}

double median_scene_depth(const std::vector<MatchedPair>& pairs) {
  std::vector<double> depths;
  for (const MatchedPair& p : pairs) {
    if (p.d_cur > 0.0) depths.push_back(1.0 / p.d_cur);
  }
  if (depths.empty()) return 0.0;
  // Upper median: deterministic and order-free.
  std::nth_element(depths.begin(), depths.begin() + static_cast<long>(depths.size() / 2),
                   depths.end());
  return depths[depths.size() / 2];
}

std::optional<LoopConstraint> attempt_loop_closure_pair(const Keyframe& current,
                                                        const Keyframe& reference,
                                                        const std::vector<FeatureMatch>& matches,
                                                        const CameraIntrinsics& intrinsics,
                                                        const LoopClosureConfig& config) {
  const std::vector<MatchedPair> pairs = build_matched_pairs(reference, current, matches);
  if (static_cast<int>(pairs.size()) < std::max(config.min_matches, 4)) return std::nullopt;

  const auto pnp = ransac_pnp(pairs, intrinsics, config.ransac);
  if (!pnp) return std::nullopt;
  std::vector<MatchedPair> inlier_pairs;
  inlier_pairs.reserve(pnp->inliers.size());
  for (int idx : pnp->inliers) inlier_pairs.push_back(pairs[static_cast<size_t>(idx)]);

  const double median_depth = median_scene_depth(inlier_pairs);
  if (median_depth <= 0.0) return std::nullopt;  // scale unverifiable without depth

  Sim3SolverConfig solver;
  const double sigma_3d = config.sigma_3d_depth_factor * median_depth;
  solver.w1 = 1.0 / (sigma_3d * sigma_3d);
  solver.w2 = 1.0 / (config.sigma_2d_px * config.sigma_2d_px);
  solver.huber_3d = config.huber_3d_depth_factor * median_depth;
  solver.huber_2d = config.huber_2d_px;
  solver.max_iterations = config.solver_max_iterations;
  solver.convergence_eps = config.solver_convergence_eps;

  Sim3Estimate estimate;
  try {
    estimate = estimate_sim3(inlier_pairs, pnp->pose, intrinsics, solver);
  } catch (const Error&) {
    return std::nullopt;  // rank-deficient or diverged refinement: not a loop
  }

  int inliers_2d = 0;
  int inliers_3d = 0;
  int depth_terms = 0;
  double sum_2d = 0.0;
  double sum_3d = 0.0;
  for (const ResidualTerm& term : estimate.residuals) {
    if (term.depth_bearing) {
      ++depth_terms;
      if (term.norm <= solver.huber_3d) {
        ++inliers_3d;
        sum_3d += term.norm;
      }
    } else if (term.norm < config.ransac.inlier_threshold_px) {
      ++inliers_2d;
      sum_2d += term.norm;
    }
  }
  if (depth_terms > 0 && inliers_3d == 0) return std::nullopt;  // depth evidence all rejected
  const int inliers = inliers_2d + inliers_3d;
  const double mean_2d = inliers_2d > 0 ? sum_2d / inliers_2d : 0.0;
  const double mean_3d = inliers_3d > 0 ? sum_3d / inliers_3d : 0.0;

  if (!verify(inliers, mean_2d, mean_3d, median_depth, config.verify)) return std::nullopt;

  LoopConstraint constraint;
  constraint.id_ref = reference.id;
  constraint.id_cur = current.id;
  constraint.s_cr = estimate.s_cr;
  constraint.inliers = inliers;
  constraint.mean_residual_2d = mean_2d;
  constraint.mean_residual_3d = mean_3d;
  constraint.accepted = true;
  return constraint;
}

std::optional<LoopConstraint> attempt_loop_closure_pair(const Keyframe& current,
                                                        const Keyframe& reference,
                                                        const CameraIntrinsics& intrinsics,
                                                        const LoopClosureConfig& config) {
  return attempt_loop_closure_pair(
      current, reference, match(reference.descriptors, current.descriptors, config.match),
      intrinsics, config);
}

std::optional<LoopConstraint> attempt_loop_closure(const Keyframe& current,
                                                   const KeyframeDatabase& db,
                                                   const KeyframeStore& store,
                                                   const std::vector<uint64_t>& exclude,
                                                   const CameraIntrinsics& intrinsics,
                                                   const LoopClosureConfig& config) {
  for (const LoopCandidate& candidate : propose_and_match(current, db, store, exclude, config)) {
    const auto constraint = attempt_loop_closure_pair(current, *candidate.keyframe,
                                                      candidate.matches, intrinsics, config);
    if (constraint) {
      return constraint;
    }
  }
  return std::nullopt;
}

}  // namespace revisit
