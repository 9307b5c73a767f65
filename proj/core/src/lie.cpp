#include <revisit/lie.hpp>

#include <cmath>

#include <revisit/error.hpp>

namespace revisit {

namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;

// Coefficient series of the W matrix in powers of theta^2:
//   A(theta, sigma) = sum_m (-theta^2)^m * a_m(sigma)
//   B(theta, sigma) = sum_m (-theta^2)^m * b_m(sigma)
// with a_m(sigma) = sum_{j>=0} C(j+2m+1, 2m+1) sigma^j / (j+2m+2)! and
// b_m(sigma) = sum_{j>=0} C(j+2m+2, 2m+2) sigma^j / (j+2m+3)!. Both are
// entire in sigma; terms are summed until they stop contributing.
double w_series_a(int m, double sigma) {
  double term = 1.0;
  for (int i = 2; i <= 2 * m + 2; ++i) term /= i;  // 1/(2m+2)!
  double sum = term;
  for (int j = 1; j <= 60; ++j) {
    term *= sigma * (j + 2 * m + 1) / (static_cast<double>(j) * (j + 2 * m + 2));
    sum += term;
    if (std::abs(term) < 1e-18 * std::abs(sum)) break;
  }
  return sum;
}

double w_series_b(int m, double sigma) {
  double term = 1.0;
  for (int i = 2; i <= 2 * m + 3; ++i) term /= i;  // 1/(2m+3)!
  double sum = term;
  for (int j = 1; j <= 60; ++j) {
    term *= sigma * (j + 2 * m + 2) / (static_cast<double>(j) * (j + 2 * m + 3));
    sum += term;
    if (std::abs(term) < 1e-18 * std::abs(sum)) break;
  }
  return sum;
}

}  // namespace

Mat3 hat(const Vec3& w) {
  Mat3 m;
  m << 0.0, -w.z(), w.y(), w.z(), 0.0, -w.x(), -w.y(), w.x(), 0.0;
  return m;
}

Vec3 vee(const Mat3& m) { return Vec3(m(2, 1), m(0, 2), m(1, 0)); }

Quat so3_exp(const Vec3& omega) {
  const double theta2 = omega.squaredNorm();
  const double theta = std::sqrt(theta2);
  const double half = 0.5 * theta;
  // k = sin(theta/2) / theta
  const double k = theta < 1e-8 ? 0.5 - theta2 / 48.0 : std::sin(half) / theta;
  Quat q(std::cos(half), k * omega.x(), k * omega.y(), k * omega.z());
  q.normalize();
  return q;
}

Vec3 so3_log(const Quat& q_in) {
  Quat q = q_in.normalized();
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  const double n2 = q.vec().squaredNorm();
  const double n = std::sqrt(n2);
  const double theta = 2.0 * std::atan2(n, q.w());
  if (theta >= kPi - 1e-6) {
    throw Error(ErrorCode::kAngleNearPi, "rotation angle within 1e-6 of pi");
  }
  // k = theta / n; stable for n -> 0 via 2*atan(n/w)/n expansion.
  const double k =
      n < 1e-9 ? 2.0 / q.w() * (1.0 - n2 / (3.0 * q.w() * q.w())) : theta / n;
  return k * q.vec();
}

double rotation_angle(const Quat& q_in) {
  Quat q = q_in.normalized();
  return 2.0 * std::atan2(q.vec().norm(), std::abs(q.w()));
}

Mat3 sim3_w_matrix(double theta, double sigma, const Mat3& omega_hat) {
  const double c =
      std::abs(sigma) < 1e-15 ? 1.0 + 0.5 * sigma : std::expm1(sigma) / sigma;
  double a, b;
  if (theta < 1e-3) {
    const double t2 = theta * theta;
    a = w_series_a(0, sigma) - t2 * (w_series_a(1, sigma) - t2 * w_series_a(2, sigma));
    b = w_series_b(0, sigma) - t2 * (w_series_b(1, sigma) - t2 * w_series_b(2, sigma));
  } else {
    const double scale = std::exp(sigma);
    const double sin_half = std::sin(0.5 * theta);
    // 1 - scale*cos(theta), assembled from exact pieces to avoid cancellation
    const double one_minus_sc = -std::expm1(sigma) + scale * 2.0 * sin_half * sin_half;
    const double a_term = scale * std::sin(theta);
    const double denom = theta * theta + sigma * sigma;
    a = (a_term * sigma + one_minus_sc * theta) / (theta * denom);
    b = (c - (-one_minus_sc * sigma + a_term * theta) / denom) / (theta * theta);
  }
  return a * omega_hat + b * (omega_hat * omega_hat) + c * Mat3::Identity();
}

SE3 SE3::exp(const Vec6& xi) {
  const Vec3 ups = xi.head<3>();
  const Vec3 omega = xi.tail<3>();
  SE3 out;
  out.q = so3_exp(omega);
  out.t = sim3_w_matrix(omega.norm(), 0.0, hat(omega)) * ups;
  return out;
}

Vec6 SE3::log() const {
  const Vec3 omega = so3_log(q);
  const Mat3 w = sim3_w_matrix(omega.norm(), 0.0, hat(omega));
  Vec6 xi;
  xi.head<3>() = w.partialPivLu().solve(t);
  xi.tail<3>() = omega;
  return xi;
}

SE3 SE3::operator*(const SE3& rhs) const {
  SE3 out;
  out.q = (q * rhs.q).normalized();
  out.t = q * rhs.t + t;
  return out;
}

SE3 SE3::inverse() const {
  SE3 out;
  out.q = q.conjugate();
  out.t = -(out.q * t);
  return out;
}

Mat4 SE3::matrix() const {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = q.toRotationMatrix();
  m.topRightCorner<3, 1>() = t;
  return m;
}

Sim3 SE3::to_sim3() const { return Sim3(q, t, 1.0); }

Sim3 Sim3::exp(const Vec7& xi) {
  const Vec3 ups = xi.head<3>();
  const Vec3 omega = xi.segment<3>(3);
  const double sigma = xi(6);
  Sim3 out;
  out.q = so3_exp(omega);
  out.s = std::exp(sigma);
  out.t = sim3_w_matrix(omega.norm(), sigma, hat(omega)) * ups;
  return out;
}

Vec7 Sim3::log() const {
  const Vec3 omega = so3_log(q);
  const double sigma = std::log(s);
  const Mat3 w = sim3_w_matrix(omega.norm(), sigma, hat(omega));
  Vec7 xi;
  xi.head<3>() = w.partialPivLu().solve(t);
  xi.segment<3>(3) = omega;
  xi(6) = sigma;
  return xi;
}

Sim3 Sim3::operator*(const Sim3& rhs) const {
  Sim3 out;
  out.q = (q * rhs.q).normalized();
  out.t = s * (q * rhs.t) + t;
  out.s = s * rhs.s;
  return out;
}

Sim3 Sim3::inverse() const {
  Sim3 out;
  out.q = q.conjugate();
  out.s = 1.0 / s;
  out.t = -(out.q * t) / s;
  return out;
}

Mat4 Sim3::matrix() const {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = s * q.toRotationMatrix();
  m.topRightCorner<3, 1>() = t;
  return m;
}

Mat7 Sim3::adjoint() const {
  const Mat3 r = q.toRotationMatrix();
  Mat7 adj = Mat7::Zero();
  adj.block<3, 3>(0, 0) = s * r;
  adj.block<3, 3>(0, 3) = hat(t) * r;
  adj.block<3, 1>(0, 6) = -t;
  adj.block<3, 3>(3, 3) = r;
  adj(6, 6) = 1.0;
  return adj;
}

Mat7 sim3_ad(const Vec7& xi) {
  const Vec3 ups = xi.head<3>();
  const Vec3 omega = xi.segment<3>(3);
  const double sigma = xi(6);
  Mat7 ad = Mat7::Zero();
  ad.block<3, 3>(0, 0) = hat(omega) + sigma * Mat3::Identity();
  ad.block<3, 3>(0, 3) = hat(ups);
  ad.block<3, 1>(0, 6) = -ups;
  ad.block<3, 3>(3, 3) = hat(omega);
  return ad;
}

Mat7 sim3_left_jacobian(const Vec7& xi) {
  const Mat7 ad = sim3_ad(xi);
  Mat7 term = Mat7::Identity();
  Mat7 sum = term;
  for (int n = 1; n <= 80; ++n) {
    term = term * ad / static_cast<double>(n + 1);
    sum += term;
    if (term.norm() < 1e-17 * sum.norm()) break;
  }
  return sum;
}

}  // namespace revisit
