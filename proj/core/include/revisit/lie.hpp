#pragma once

#include <revisit/types.hpp>

namespace revisit {

// Tangent layout for all 6/7-dim vectors: [translational upsilon (3),
// rotational omega (3), log-scale sigma (1, Sim(3) only)].

Mat3 hat(const Vec3& omega);
Vec3 vee(const Mat3& m);

// Rotation-vector exponential; unit quaternion out.
Quat so3_exp(const Vec3& omega);
// Rotation vector with angle in [0, pi). Throws AngleNearPi for angles
// >= pi - 1e-6 (axis ill-conditioned there).
Vec3 so3_log(const Quat& q);
// Rotation angle in [0, pi]; well-defined for every unit quaternion.
double rotation_angle(const Quat& q);

// W matrix of the similarity exponential: translation = W * upsilon.
// W = sum_{n>=0} (sigma*I + Omega)^n / (n+1)!, evaluated in closed form with
// series fallbacks below theta = 1e-3.
Mat3 sim3_w_matrix(double theta, double sigma, const Mat3& omega_hat);

struct Sim3;

// Rigid pose. Operations mirror Sim3 at scale 1 exactly (shared W-matrix
// code path, so exp/log agree bit-for-bit with Sim3 at sigma = 0).
struct SE3 {
  Quat q = Quat::Identity();
  Vec3 t = Vec3::Zero();

  SE3() = default;
  SE3(const Quat& q_in, const Vec3& t_in) : q(q_in.normalized()), t(t_in) {}

  static SE3 exp(const Vec6& xi);
  Vec6 log() const;

  SE3 operator*(const SE3& rhs) const;
  SE3 inverse() const;
  Vec3 operator*(const Vec3& x) const { return q * x + t; }

  Mat3 rotation_matrix() const { return q.toRotationMatrix(); }
  Mat4 matrix() const;
  Sim3 to_sim3() const;
};

// Similarity transform x -> s * R * x + t. Poses in this codebase map world
// coordinates into camera coordinates unless stated otherwise.
struct Sim3 {
  Quat q = Quat::Identity();
  Vec3 t = Vec3::Zero();
  double s = 1.0;

  Sim3() = default;
  Sim3(const Quat& q_in, const Vec3& t_in, double s_in)
      : q(q_in.normalized()), t(t_in), s(s_in) {}

  static Sim3 exp(const Vec7& xi);
  Vec7 log() const;  // throws AngleNearPi near the rotation singularity

  Sim3 operator*(const Sim3& rhs) const;
  Sim3 inverse() const;
  Vec3 operator*(const Vec3& x) const { return s * (q * x) + t; }

  Mat3 rotation_matrix() const { return q.toRotationMatrix(); }
  Mat4 matrix() const;
  SE3 to_se3() const { return SE3(q, t); }  // drops scale

  // Adj satisfying exp(Adj * xi) = S * exp(xi) * S^-1.
  Mat7 adjoint() const;
};

// Algebra adjoint ad(xi): ad(a) * b = [a, b].
Mat7 sim3_ad(const Vec7& xi);
// Left Jacobian J_l(xi) = sum_{n>=0} ad(xi)^n / (n+1)! (convergent power
// series, summed to machine precision).
Mat7 sim3_left_jacobian(const Vec7& xi);

}  // namespace revisit
