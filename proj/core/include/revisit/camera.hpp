#pragma once

#include <optional>

#include <revisit/types.hpp>

namespace revisit {

struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;
};

// Pinhole projection of a camera-frame point. Empty when the point is behind
// the camera (z <= 1e-8) or projects outside [0, w-1] x [0, h-1].
std::optional<Vec2> project(const CameraIntrinsics& k, const Vec3& x_cam);

// Inverse-depth back-projection: pixel + inverse depth d > 0 to the
// camera-frame point (1/d) * ((u-cx)/fx, (v-cy)/fy, 1).
Vec3 backproject(const CameraIntrinsics& k, const Vec2& pixel, double inv_depth);

// d(pixel)/d(point) of the projection at a camera-frame point (no bounds
// check; z must be positive).
Eigen::Matrix<double, 2, 3> project_jacobian(const CameraIntrinsics& k,
                                             const Vec3& x_cam);

}  // namespace revisit
