#include <revisit/p3p.hpp>

#include <cmath>
#include <complex>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

namespace revisit {

namespace {

// Real roots of c[0] + c[1] x + ... + c[degree] x^degree via the companion
// matrix of the monic polynomial, polished by two Newton steps.
std::vector<double> real_roots(const std::vector<double>& c) {
  int degree = static_cast<int>(c.size()) - 1;
  double max_coeff = 0.0;
  for (double v : c) max_coeff = std::max(max_coeff, std::abs(v));
  if (max_coeff == 0.0) return {};
  while (degree > 0 && std::abs(c[static_cast<size_t>(degree)]) < 1e-12 * max_coeff) {
    --degree;
  }
  if (degree < 1) return {};

  Eigen::MatrixXd companion = Eigen::MatrixXd::Zero(degree, degree);
  for (int i = 1; i < degree; ++i) {
    companion(i, i - 1) = 1.0;
  }
  const double lead = c[static_cast<size_t>(degree)];
  for (int i = 0; i < degree; ++i) {
    companion(i, degree - 1) = -c[static_cast<size_t>(i)] / lead;
  }
  Eigen::EigenSolver<Eigen::MatrixXd> solver(companion);
  if (solver.info() != Eigen::Success) return {};

  auto eval = [&](double x, double& value, double& derivative) {
    value = 0.0;
    derivative = 0.0;
    for (int i = degree; i >= 0; --i) {
      derivative = derivative * x + value;
      value = value * x + c[static_cast<size_t>(i)];
    }
  };

  std::vector<double> roots;
  for (int i = 0; i < degree; ++i) {
    const std::complex<double> lambda = solver.eigenvalues()[i];
    if (std::abs(lambda.imag()) > 1e-8 * (1.0 + std::abs(lambda.real()))) continue;
    double x = lambda.real();
    for (int step = 0; step < 2; ++step) {
      double value = 0.0, derivative = 0.0;
      eval(x, value, derivative);
      if (std::abs(derivative) < 1e-300) break;
      x -= value / derivative;
    }
    roots.push_back(x);
  }
  return roots;
}

// c = a * b (polynomial coefficients, ascending powers).
std::vector<double> poly_mul(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> c(a.size() + b.size() - 1, 0.0);
  for (size_t i = 0; i < a.size(); ++i) {
    for (size_t j = 0; j < b.size(); ++j) {
      c[i + j] += a[i] * b[j];
    }
  }
  return c;
}

}  // namespace

SE3 rigid_align(const std::vector<Vec3>& src, const std::vector<Vec3>& dst) {
  const size_t n = src.size();
  Vec3 mu_src = Vec3::Zero();
  Vec3 mu_dst = Vec3::Zero();
  for (size_t i = 0; i < n; ++i) {
    mu_src += src[i];
    mu_dst += dst[i];
  }
  mu_src /= static_cast<double>(n);
  mu_dst /= static_cast<double>(n);

  Mat3 cross = Mat3::Zero();
  for (size_t i = 0; i < n; ++i) {
    cross += (src[i] - mu_src) * (dst[i] - mu_dst).transpose();
  }
  Eigen::JacobiSVD<Mat3> svd(cross, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  if ((svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0) {
    d(2, 2) = -1.0;
  }
  const Mat3 rotation = svd.matrixV() * d * svd.matrixU().transpose();
  SE3 result(Quat(rotation), mu_dst - rotation * mu_src);
  return result;
}

std::vector<SE3> solve_p3p(const std::array<Vec3, 3>& points,
                           const std::array<Vec3, 3>& bearings) {
  // Side lengths: a opposite point 1, b opposite point 2, c opposite point 3.
  const double a = (points[1] - points[2]).norm();
  const double b = (points[0] - points[2]).norm();
  const double c = (points[0] - points[1]).norm();
  if (a <= 0.0 || b <= 0.0 || c <= 0.0) return {};

  const double cos_alpha = bearings[1].dot(bearings[2]);
  const double cos_beta = bearings[0].dot(bearings[2]);
  const double cos_gamma = bearings[0].dot(bearings[1]);

  const double A = (a * a) / (b * b);
  const double B = (c * c) / (b * b);

  // With camera-to-point distances s1, s2 = u*s1, s3 = v*s1, the law of
  // cosines in the three view triangles reduces to:
  //   (i)  u^2 + v^2 - 2 u v cos(alpha) = A * (1 + v^2 - 2 v cos(beta))
  //   (ii) u^2 - 2 u cos(gamma) + 1    = B * (1 + v^2 - 2 v cos(beta))
  // Subtracting eliminates u^2 and yields u = N(v) / D(v); substituting into
  // (ii) gives a quartic in v. The coefficients are assembled numerically.
  const std::vector<double> num = {1.0 + A - B, -2.0 * cos_beta * (A - B), -(1.0 - A + B)};
  const std::vector<double> den = {2.0 * cos_gamma, -2.0 * cos_alpha};
  const std::vector<double> rest = {1.0 - B, 2.0 * B * cos_beta, -B};

  // (ii) * D(v)^2 = N^2 - 2 cos(gamma) N D + D^2 * rest = 0.
  std::vector<double> quartic = poly_mul(num, num);
  const std::vector<double> nd = poly_mul(num, den);
  const std::vector<double> dd_rest = poly_mul(poly_mul(den, den), rest);
  quartic.resize(5, 0.0);
  for (size_t i = 0; i < nd.size(); ++i) quartic[i] -= 2.0 * cos_gamma * nd[i];
  for (size_t i = 0; i < dd_rest.size(); ++i) quartic[i] += dd_rest[i];

  std::vector<SE3> solutions;
  for (double v : real_roots(quartic)) {
    if (!(v > 0.0) || !std::isfinite(v)) continue;
    const double denom = den[0] + den[1] * v;
    if (std::abs(denom) < 1e-12) continue;
    const double u = (num[0] + num[1] * v + num[2] * v * v) / denom;
    if (!(u > 0.0) || !std::isfinite(u)) continue;
    const double s1_sq = (b * b) / (1.0 + v * v - 2.0 * v * cos_beta);
    if (!(s1_sq > 0.0) || !std::isfinite(s1_sq)) continue;
    const double s1 = std::sqrt(s1_sq);
    const double s2 = u * s1;
    const double s3 = v * s1;

    const std::vector<Vec3> camera_points = {s1 * bearings[0], s2 * bearings[1],
                                             s3 * bearings[2]};
    const std::vector<Vec3> world_points = {points[0], points[1], points[2]};
    solutions.push_back(rigid_align(world_points, camera_points));
  }
  return solutions;
}

}  // namespace revisit
