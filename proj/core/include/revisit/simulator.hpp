#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <revisit/camera.hpp>
#include <revisit/evaluation.hpp>
#include <revisit/image.hpp>
#include <revisit/keyframe.hpp>
#include <revisit/lie.hpp>
#include <revisit/types.hpp>

namespace revisit {

struct Landmark {
  uint32_t id = 0;
  Vec3 position = Vec3::Zero();
  double intensity = 0.0;  // splat amplitude, 0-255
};

// Static dot-splat scene: landmarks uniformly placed in an axis-aligned box.
struct World {
  std::vector<Landmark> landmarks;
  Vec3 box_min = Vec3::Zero();
  Vec3 box_max = Vec3::Zero();
};

// Zero-mean per-step odometry corruption; sigma_s acts on the log of the
// translation scale factor (a random walk, mimicking monocular scale drift).
struct DriftModel {
  double sigma_t = 0.01;   // meters/step
  double sigma_r = 0.001;  // radians/step
  double sigma_s = 0.001;  // log-scale/step
  uint64_t seed = 1;
};

struct SimConfig {
  uint32_t n_keyframes = 200;
  double radius = 10.0;       // circle radius, meters
  bool look_inward = false;   // default: camera looks outward from the circle
  uint32_t n_landmarks = 13000;
  Vec3 box_half = Vec3(40.0, 40.0, 12.0);
  CameraIntrinsics intrinsics{320.0, 320.0, 319.5, 239.5, 640, 480};
  // Far-field band: splat constellations must survive the revisit baseline
  // (neighbor parallax ~ f * baseline * depth spread / depth^2), so only
  // landmarks well beyond the camera circle are observed.
  double depth_min = 15.0;
  double depth_max = 25.0;
  double noise_sigma = 0.25;   // additive image noise
  double depth_noise = 0.01;   // multiplicative inverse-depth noise (1 sigma)
  double intensity_min = 80.0;
  double intensity_max = 176.0;
  double timestamp_step = 0.1;  // seconds between keyframes
  uint64_t seed = 1;
};

// Ground truth, drift-corrupted odometry (both scale-1 camera-to-world
// poses), and the per-keyframe landmark observations.
struct SimSequence {
  Trajectory ground_truth;
  Trajectory odometry;
  std::vector<std::vector<Observation>> observations;
};

// Landmarks drawn uniformly inside the box, intensities uniform in
// [intensity_min, intensity_max); ids are indices. Deterministic under seed.
World generate_world(const SimConfig& config);

// Ground-truth camera-to-world pose of keyframe i on the closed circle
// (z = 0 plane, equally spaced, y-axis pointing down in world -z).
SE3 circle_pose(const SimConfig& config, uint32_t i);

// Closed-circle sequence: ground truth on the circle, odometry integrated
// from per-step noisy relative poses (left-multiplied exp of Gaussian
// translation/rotation noise, translation magnitude scaled by a log-scale
// random walk), observations = landmarks in the frustum within
// [depth_min, depth_max] with noisy inverse depth. Throws Config when
// n_keyframes < 10. Deterministic under the config and drift seeds.
SimSequence generate_loop_sequence(const World& world, const SimConfig& config,
                                   const DriftModel& drift);

// Horizontal intensity ramp 40..80 plus an isotropic Gaussian splat
// (sigma 1.5 px, amplitude = landmark intensity) for every landmark whose
// projection falls inside the image within the depth range, plus additive
// N(0, noise_sigma^2) pixel noise, rounded and clamped to [0,255].
GrayImage render_keyframe(const World& world, const SE3& pose_wc, const CameraIntrinsics& k,
                          double depth_min, double depth_max, double noise_sigma,
                          uint64_t seed);

// Writes gt.tum, odom.tum, calib.txt, kf_%05d.pgm and kf_%05d.obs into dir
// (created if missing), rendering every keyframe.
void write_bundle(const std::string& dir, const World& world, const SimConfig& config,
                  const SimSequence& sequence);

// calib.txt: single line `fx fy cx cy width height`.
void write_calib(const std::string& path, const CameraIntrinsics& k);
CameraIntrinsics read_calib(const std::string& path);

// Observation CSV: header `landmark_id,u,v,inv_depth`, one row per landmark.
void write_observations(const std::string& path, const std::vector<Observation>& observations);
std::vector<Observation> read_observations(const std::string& path);

std::string keyframe_image_path(const std::string& dir, uint32_t i);
std::string keyframe_obs_path(const std::string& dir, uint32_t i);

}  // namespace revisit
