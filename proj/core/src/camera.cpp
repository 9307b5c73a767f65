#include <revisit/camera.hpp>

#include <stdexcept>

namespace revisit {

std::optional<Vec2> project(const CameraIntrinsics& k, const Vec3& x_cam) {
  if (x_cam.z() <= 1e-8) return std::nullopt;
  const double inv_z = 1.0 / x_cam.z();
  const Vec2 pixel(k.fx * x_cam.x() * inv_z + k.cx,
                   k.fy * x_cam.y() * inv_z + k.cy);
  if (pixel.x() < 0.0 || pixel.x() > k.width - 1 || pixel.y() < 0.0 ||
      pixel.y() > k.height - 1) {
    return std::nullopt;
  }
  return pixel;
}

Vec3 backproject(const CameraIntrinsics& k, const Vec2& pixel, double inv_depth) {
  if (!(inv_depth > 0.0)) {
    throw std::invalid_argument("backproject: inverse depth must be positive");
  }
  const double depth = 1.0 / inv_depth;
  return Vec3(depth * (pixel.x() - k.cx) / k.fx,
              depth * (pixel.y() - k.cy) / k.fy, depth);
}

Eigen::Matrix<double, 2, 3> project_jacobian(const CameraIntrinsics& k,
                                             const Vec3& x_cam) {
  const double inv_z = 1.0 / x_cam.z();
  Eigen::Matrix<double, 2, 3> j;
  j << k.fx * inv_z, 0.0, -k.fx * x_cam.x() * inv_z * inv_z,
       0.0, k.fy * inv_z, -k.fy * x_cam.y() * inv_z * inv_z;
  return j;
}

}  // namespace revisit
