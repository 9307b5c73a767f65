#include <revisit/simulator.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include <revisit/error.hpp>
#include <revisit/rng.hpp>
#include <revisit/trajectory.hpp>

namespace revisit {

namespace {

constexpr uint64_t kWorldStream = 1;
constexpr uint64_t kDriftStream = 2;
constexpr uint64_t kRenderStreamBase = 1000;
constexpr uint64_t kObsStreamBase = 100000;

constexpr double kSplatSigma = 1.5;  // px
constexpr int kSplatRadius = 6;      // px; tail beyond this rounds to zero

}  // namespace

World generate_world(const SimConfig& config) {
  Rng rng(mix_seed(config.seed, kWorldStream));
  World world;
  world.box_min = -config.box_half;
  world.box_max = config.box_half;
  world.landmarks.reserve(config.n_landmarks);
  for (uint32_t i = 0; i < config.n_landmarks; ++i) {
    Landmark lm;
    lm.id = i;
    lm.position = Vec3(rng.uniform(world.box_min.x(), world.box_max.x()),
                       rng.uniform(world.box_min.y(), world.box_max.y()),
                       rng.uniform(world.box_min.z(), world.box_max.z()));
    lm.intensity = rng.uniform(config.intensity_min, config.intensity_max);
    world.landmarks.push_back(lm);
  }
  return world;
}

SE3 circle_pose(const SimConfig& config, uint32_t i) {
  const double phi =
      2.0 * M_PI * static_cast<double>(i) / static_cast<double>(config.n_keyframes);
  const double c = std::cos(phi);
  const double s = std::sin(phi);
  const Vec3 position(config.radius * c, config.radius * s, 0.0);

  // Camera axes in world coordinates; y points down (world -z) so the image
  // v-axis increases toward the ground, matching the usual convention.
  Mat3 rot;
  if (config.look_inward) {
    rot.col(0) = Vec3(-s, c, 0.0);   // x (right)
    rot.col(1) = Vec3(0.0, 0.0, -1.0);  // y (down)
    rot.col(2) = Vec3(-c, -s, 0.0);  // z (optical axis)
  } else {
    rot.col(0) = Vec3(s, -c, 0.0);
    rot.col(1) = Vec3(0.0, 0.0, -1.0);
    rot.col(2) = Vec3(c, s, 0.0);
  }
  return SE3(Quat(rot), position);
}

SimSequence generate_loop_sequence(const World& world, const SimConfig& config,
                                   const DriftModel& drift) {
  if (config.n_keyframes < 10) {
    throw Error(ErrorCode::kConfig, "sequence needs at least 10 keyframes");
  }

  SimSequence seq;
  seq.ground_truth.reserve(config.n_keyframes);
  seq.odometry.reserve(config.n_keyframes);
  seq.observations.resize(config.n_keyframes);

  std::vector<SE3> gt_poses;
  gt_poses.reserve(config.n_keyframes);
  for (uint32_t i = 0; i < config.n_keyframes; ++i) {
    gt_poses.push_back(circle_pose(config, i));
    TrajectoryPoint p;
    p.timestamp = config.timestamp_step * static_cast<double>(i);
    p.id = i;
    p.pose = Sim3(gt_poses[i].q, gt_poses[i].t, 1.0);
    seq.ground_truth.push_back(p);
  }

  // Odometry: integrate corrupted relative poses. Each sequence draws one
  // systematic per-step error (a pose increment exp(eps) that left-multiplies
  // every true relative pose, plus a per-step log-scale factor delta). The
  // constant per-step corruption compounds through the chain into smoothly
  // accumulating translation/rotation drift and a multiplicative scale ramp
  // of exp(n * delta) -- the monocular drift pattern loop closure corrects.
  Rng drift_rng(mix_seed(drift.seed, kDriftStream));
  Vec6 eps;
  for (int k = 0; k < 3; ++k) {
    eps(k) = drift_rng.normal(0.0, drift.sigma_t);
  }
  for (int k = 0; k < 3; ++k) {
    eps(3 + k) = drift_rng.normal(0.0, drift.sigma_r);
  }
  const double delta_s = drift_rng.normal(0.0, drift.sigma_s);
  const SE3 step_noise = SE3::exp(eps);

  std::vector<SE3> odom_poses;
  odom_poses.reserve(config.n_keyframes);
  odom_poses.push_back(gt_poses[0]);
  double log_scale = 0.0;
  for (uint32_t i = 0; i + 1 < config.n_keyframes; ++i) {
    log_scale += delta_s;
    const SE3 rel = gt_poses[i].inverse() * gt_poses[i + 1];
    const SE3 scaled_rel(rel.q, std::exp(log_scale) * rel.t);
    odom_poses.push_back(odom_poses.back() * (step_noise * scaled_rel));
  }
  for (uint32_t i = 0; i < config.n_keyframes; ++i) {
    TrajectoryPoint p = seq.ground_truth[i];
    p.pose = Sim3(odom_poses[i].q, odom_poses[i].t, 1.0);
    seq.odometry.push_back(p);
  }

  // Observations. Pixels come from the true geometry (what the camera sees),
  // but stored inverse depths live in each keyframe's local metric scale:
  // the same accumulated factor exp(S_i) that stretches the odometry steps
  // also stretches the depths the frontend would have triangulated. This
  // keeps every local map self-consistent while the global scale drifts,
  // so a loop-closing Sim(3) fit observes the accumulated scale error.
  for (uint32_t i = 0; i < config.n_keyframes; ++i) {
    Rng obs_rng(mix_seed(config.seed, kObsStreamBase + i));
    const SE3 pose_cw = gt_poses[i].inverse();
    const double local_scale = std::exp(static_cast<double>(i) * delta_s);
    auto& obs_list = seq.observations[i];
    for (const Landmark& lm : world.landmarks) {
      const Vec3 x_cam = pose_cw * lm.position;
      if (x_cam.z() < config.depth_min || x_cam.z() > config.depth_max) {
        continue;
      }
      const auto pixel = project(config.intrinsics, x_cam);
      if (!pixel) {
        continue;
      }
      double eta = obs_rng.normal(0.0, config.depth_noise);
      eta = std::max(eta, -0.5);  // keeps the noisy depth positive
      Observation ob;
      ob.landmark_id = lm.id;
      ob.u = pixel->x();
      ob.v = pixel->y();
      ob.inv_depth = 1.0 / (local_scale * x_cam.z() * (1.0 + eta));
      obs_list.push_back(ob);
    }
  }
  return seq;
}

GrayImage render_keyframe(const World& world, const SE3& pose_wc, const CameraIntrinsics& k,
                          double depth_min, double depth_max, double noise_sigma,
                          uint64_t seed) {
  const int width = static_cast<int>(k.width);
  const int height = static_cast<int>(k.height);
  std::vector<double> canvas(static_cast<size_t>(width) * height);

  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      canvas[static_cast<size_t>(y) * width + x] =
          40.0 + 40.0 * static_cast<double>(x) / static_cast<double>(width - 1);
    }
  }

  const SE3 pose_cw = pose_wc.inverse();
  const double inv_two_sigma_sq = 1.0 / (2.0 * kSplatSigma * kSplatSigma);
  for (const Landmark& lm : world.landmarks) {
    const Vec3 x_cam = pose_cw * lm.position;
    if (x_cam.z() < depth_min || x_cam.z() > depth_max) {
      continue;
    }
    const auto pixel = project(k, x_cam);
    if (!pixel) {
      continue;
    }
    const double u = pixel->x();
    const double v = pixel->y();
    const int x0 = std::max(0, static_cast<int>(std::ceil(u)) - kSplatRadius);
    const int x1 = std::min(width - 1, static_cast<int>(std::floor(u)) + kSplatRadius);
    const int y0 = std::max(0, static_cast<int>(std::ceil(v)) - kSplatRadius);
    const int y1 = std::min(height - 1, static_cast<int>(std::floor(v)) + kSplatRadius);
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) {
        const double dx = static_cast<double>(x) - u;
        const double dy = static_cast<double>(y) - v;
        canvas[static_cast<size_t>(y) * width + x] +=
            lm.intensity * std::exp(-(dx * dx + dy * dy) * inv_two_sigma_sq);
      }
    }
  }

  Rng rng(seed);
  GrayImage image(width, height);
  for (size_t i = 0; i < canvas.size(); ++i) {
    double value = canvas[i];
    if (noise_sigma > 0.0) {
      value += rng.normal(0.0, noise_sigma);
    }
    const long rounded = std::lround(value);
    image.data[i] = static_cast<uint8_t>(std::clamp(rounded, 0l, 255l));
  }
  return image;
}

void write_calib(const std::string& path, const CameraIntrinsics& k) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw Error(ErrorCode::kIo, "cannot open calibration file for writing: " + path);
  }
  char buf[256];
  const int n = std::snprintf(buf, sizeof(buf), "%.9f %.9f %.9f %.9f %d %d\n", k.fx, k.fy,
                              k.cx, k.cy, k.width, k.height);
  out.write(buf, n);
  if (!out) {
    throw Error(ErrorCode::kIo, "failed writing calibration file: " + path);
  }
}

CameraIntrinsics read_calib(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::kIo, "cannot open calibration file: " + path);
  }
  CameraIntrinsics k;
  if (!(in >> k.fx >> k.fy >> k.cx >> k.cy >> k.width >> k.height)) {
    throw Error(ErrorCode::kFormat, path + ": expected `fx fy cx cy width height`");
  }
  if (k.fx <= 0.0 || k.fy <= 0.0 || k.width <= 0 || k.height <= 0) {
    throw Error(ErrorCode::kFormat, path + ": non-positive camera parameters");
  }
  return k;
}

void write_observations(const std::string& path, const std::vector<Observation>& observations) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw Error(ErrorCode::kIo, "cannot open observation file for writing: " + path);
  }
  out << "landmark_id,u,v,inv_depth\n";
  char buf[256];
  for (const Observation& ob : observations) {
    const int n = std::snprintf(buf, sizeof(buf), "%lld,%.9f,%.9f,%.9f\n",
                                static_cast<long long>(ob.landmark_id), ob.u, ob.v,
                                ob.inv_depth);
    out.write(buf, n);
  }
  if (!out) {
    throw Error(ErrorCode::kIo, "failed writing observation file: " + path);
  }
}

std::vector<Observation> read_observations(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::kIo, "cannot open observation file: " + path);
  }
  std::string line;
  if (!std::getline(in, line) || line != "landmark_id,u,v,inv_depth") {
    throw Error(ErrorCode::kFormat, path + ":1: missing observation CSV header");
  }
  std::vector<Observation> observations;
  size_t line_number = 1;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty()) {
      continue;
    }
    Observation ob;
    long long id = 0;
    int consumed = 0;
    if (std::sscanf(line.c_str(), "%lld,%lf,%lf,%lf%n", &id, &ob.u, &ob.v, &ob.inv_depth,
                    &consumed) != 4 ||
        static_cast<size_t>(consumed) != line.size()) {
      throw Error(ErrorCode::kFormat,
                  path + ":" + std::to_string(line_number) + ": malformed observation row");
    }
    ob.landmark_id = id;
    observations.push_back(ob);
  }
  return observations;
}

std::string keyframe_image_path(const std::string& dir, uint32_t i) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "kf_%05u.pgm", i);
  return (std::filesystem::path(dir) / buf).string();
}

std::string keyframe_obs_path(const std::string& dir, uint32_t i) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "kf_%05u.obs", i);
  return (std::filesystem::path(dir) / buf).string();
}

void write_bundle(const std::string& dir, const World& world, const SimConfig& config,
                  const SimSequence& sequence) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) {
    throw Error(ErrorCode::kIo, "cannot create bundle directory: " + dir);
  }
  const std::filesystem::path root(dir);
  write_tum((root / "gt.tum").string(), from_trajectory(sequence.ground_truth, false));
  write_tum((root / "odom.tum").string(), from_trajectory(sequence.odometry, false));
  write_calib((root / "calib.txt").string(), config.intrinsics);
  for (uint32_t i = 0; i < sequence.ground_truth.size(); ++i) {
    const Sim3& pose = sequence.ground_truth[i].pose;
    const GrayImage image =
        render_keyframe(world, SE3(pose.q, pose.t), config.intrinsics, config.depth_min,
                        config.depth_max, config.noise_sigma,
                        mix_seed(config.seed, kRenderStreamBase + i));
    write_pgm(keyframe_image_path(dir, i), image);
    write_observations(keyframe_obs_path(dir, i), sequence.observations[i]);
  }
}

}  // namespace revisit
