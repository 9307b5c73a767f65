#pragma once

#include <cstdint>
#include <vector>

#include <revisit/bow.hpp>
#include <revisit/descriptor.hpp>
#include <revisit/lie.hpp>
#include <revisit/pixel_select.hpp>

namespace revisit {

// One landmark sighting: pixel position plus noisy inverse depth.
struct Observation {
  int64_t landmark_id = -1;
  double u = 0.0;
  double v = 0.0;
  double inv_depth = 0.0;
};

// Immutable snapshot of a processed keyframe. The source image is dropped
// after feature extraction; everything downstream (recognition, relative pose
// estimation, graph construction) works from this record. `descriptors`,
// `inv_depths` and `landmark_ids` are aligned with the corner subset of
// `points` (corners come first); inv_depth <= 0 and landmark_id < 0 mean the
// corner has no depth association.
struct Keyframe {
  uint64_t id = 0;
  double timestamp = 0.0;
  SE3 pose_cw;  // frontend odometry estimate, world-to-camera
  std::vector<SelectedPoint> points;
  size_t corner_count = 0;
  std::vector<BinaryDescriptor> descriptors;
  std::vector<double> inv_depths;
  std::vector<int64_t> landmark_ids;
  BowVector bow;
};

}  // namespace revisit
