#include <revisit/evaluation.hpp>

#include <algorithm>
#include <cmath>
#include <cstddef>

#include <Eigen/Dense>

#include <revisit/error.hpp>

namespace revisit {

Sim3 umeyama_alignment(const std::vector<Vec3>& src, const std::vector<Vec3>& dst,
                       bool with_scale) {
  if (src.size() != dst.size()) {
    throw Error(ErrorCode::kInsufficientData, "alignment point sets differ in size");
  }
  const size_t n = src.size();
  if (n < 3) {
    throw Error(ErrorCode::kInsufficientData, "alignment needs at least 3 point pairs");
  }
  const double inv_n = 1.0 / static_cast<double>(n);

  Vec3 mu_x = Vec3::Zero();
  Vec3 mu_y = Vec3::Zero();
  for (size_t i = 0; i < n; ++i) {
    mu_x += src[i];
    mu_y += dst[i];
  }
  mu_x *= inv_n;
  mu_y *= inv_n;

  double sigma_x = 0.0;  // mean squared deviation of the source set
  Mat3 cov = Mat3::Zero();
  for (size_t i = 0; i < n; ++i) {
    const Vec3 dx = src[i] - mu_x;
    const Vec3 dy = dst[i] - mu_y;
    sigma_x += dx.squaredNorm();
    cov += dy * dx.transpose();
  }
  sigma_x *= inv_n;
  cov *= inv_n;

  if (sigma_x <= 0.0) {
    throw Error(ErrorCode::kDegenerateConfiguration, "source points are coincident");
  }

  Eigen::JacobiSVD<Mat3> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 d = svd.singularValues();
  // Rank < 2 leaves the rotation about the point axis unobservable. Planar
  // sets (rank 2) remain well posed thanks to the determinant guard below.
  if (d(1) <= 1e-9 * std::max(d(0), 1e-300)) {
    throw Error(ErrorCode::kDegenerateConfiguration, "alignment points are collinear");
  }

  Vec3 sign_fix = Vec3::Ones();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) {
    sign_fix(2) = -1.0;
  }
  const Mat3 rot = svd.matrixU() * sign_fix.asDiagonal() * svd.matrixV().transpose();

  double scale = 1.0;
  if (with_scale) {
    scale = d.dot(sign_fix) / sigma_x;
    if (!(scale > 0.0)) {
      throw Error(ErrorCode::kDegenerateConfiguration, "alignment scale is not positive");
    }
  }
  const Vec3 t = mu_y - scale * (rot * mu_x);
  return Sim3(Quat(rot), t, scale);
}

std::vector<std::pair<size_t, size_t>> associate(const Trajectory& a, const Trajectory& b,
                                                 double max_dt) {
  std::vector<std::pair<size_t, size_t>> pairs;
  if (a.empty() || b.empty()) {
    return pairs;
  }
  // Both trajectories are expected sorted by timestamp; for each sample of a,
  // a single forward pointer finds the nearest sample of b.
  size_t j = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    const double ts = a[i].timestamp;
    while (j + 1 < b.size() &&
           std::abs(b[j + 1].timestamp - ts) <= std::abs(b[j].timestamp - ts)) {
      ++j;
    }
    size_t best = j;
    // The pointer never rewinds, so check the neighbour behind it too when a
    // is not itself sorted.
    if (j > 0 && std::abs(b[j - 1].timestamp - ts) < std::abs(b[best].timestamp - ts)) {
      best = j - 1;
    }
    if (std::abs(b[best].timestamp - ts) <= max_dt) {
      pairs.emplace_back(i, best);
    }
  }
  return pairs;
}

namespace {

// Positions of the associated pose pairs: estimate first, ground truth second.
void gather_positions(const Trajectory& est, const Trajectory& gt,
                      const std::vector<std::pair<size_t, size_t>>& pairs,
                      std::vector<Vec3>* est_pts, std::vector<Vec3>* gt_pts) {
  est_pts->reserve(pairs.size());
  gt_pts->reserve(pairs.size());
  for (const auto& [i, j] : pairs) {
    est_pts->push_back(est[i].pose.t);
    gt_pts->push_back(gt[j].pose.t);
  }
}

}  // namespace

double ate_rmse(const Trajectory& estimate, const Trajectory& ground_truth, Alignment alignment,
                double max_dt) {
  const auto pairs = associate(estimate, ground_truth, max_dt);
  if (pairs.size() < 3) {
    throw Error(ErrorCode::kNoAssociations, "fewer than 3 timestamp associations");
  }
  std::vector<Vec3> est_pts;
  std::vector<Vec3> gt_pts;
  gather_positions(estimate, ground_truth, pairs, &est_pts, &gt_pts);

  const Sim3 align =
      umeyama_alignment(est_pts, gt_pts, /*with_scale=*/alignment == Alignment::kSim3);
  double sum_sq = 0.0;
  for (size_t k = 0; k < est_pts.size(); ++k) {
    sum_sq += (align * est_pts[k] - gt_pts[k]).squaredNorm();
  }
  return std::sqrt(sum_sq / static_cast<double>(est_pts.size()));
}

DriftReport tum_mono_drift(const Trajectory& trajectory, const Trajectory& gt_start,
                           const Trajectory& gt_end, double max_dt) {
  const auto pairs_start = associate(trajectory, gt_start, max_dt);
  const auto pairs_end = associate(trajectory, gt_end, max_dt);
  if (pairs_start.size() < 3 || pairs_end.size() < 3) {
    throw Error(ErrorCode::kNoAssociations, "drift segments need 3 associations each");
  }

  std::vector<Vec3> seg_est;
  std::vector<Vec3> seg_gt;
  gather_positions(trajectory, gt_start, pairs_start, &seg_est, &seg_gt);
  const Sim3 s_start = umeyama_alignment(seg_est, seg_gt, /*with_scale=*/true);

  seg_est.clear();
  seg_gt.clear();
  gather_positions(trajectory, gt_end, pairs_end, &seg_est, &seg_gt);
  const Sim3 s_end = umeyama_alignment(seg_est, seg_gt, /*with_scale=*/true);

  const Sim3 drift = s_start.inverse() * s_end;

  DriftReport report;
  report.e_t = drift.t.norm();
  report.e_r = rotation_angle(drift.q) * 180.0 / M_PI;
  report.e_s = std::max(drift.s, 1.0 / drift.s);
  double sum_sq = 0.0;
  for (const TrajectoryPoint& p : trajectory) {
    sum_sq += (s_start * p.pose.t - s_end * p.pose.t).squaredNorm();
  }
  report.e_align = std::sqrt(sum_sq / static_cast<double>(trajectory.size()));
  return report;
}

}  // namespace revisit
