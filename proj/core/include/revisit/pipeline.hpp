#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <revisit/config.hpp>
#include <revisit/evaluation.hpp>
#include <revisit/keyframe.hpp>
#include <revisit/loop_closure.hpp>

namespace revisit {

struct PipelineOptions {
  std::string bundle_dir;
  std::string out_dir;
  std::string vocab_path;  // empty: train a vocabulary from the sequence itself
  uint64_t seed = 1;       // vocabulary-training stream seed
  bool single_thread = false;
};

// Wall-clock stage costs; everything here lands in the report's
// non-deterministic section only.
struct StageTimings {
  double total_s = 0.0;
  double select_avg_ms = 0.0;
  double describe_avg_ms = 0.0;
  double bow_avg_ms = 0.0;
  double loop_attempt_avg_ms = 0.0;
  double optimize_total_s = 0.0;
};

struct PipelineResult {
  Trajectory before;  // odometry, camera-to-world
  Trajectory after;   // optimized graph estimates, camera-to-world
  std::vector<LoopConstraint> loops;  // accepted, in acceptance order
  double before_ate = -1.0;  // Sim3-aligned ATE vs gt.tum; -1 when unavailable
  double after_ate = -1.0;
  size_t keyframes = 0;
  size_t covis_edges = 0;
  size_t loop_attempts = 0;
  size_t pgo_runs = 0;
  StageTimings timings;
};

// Report section separator; lines after it are timing data and are expected
// to differ between runs.
extern const char* const kReportTimingsMarker;

// Wall-clock split of one keyframe's extraction stages.
struct FrameTimings {
  double select_ms = 0.0;
  double describe_ms = 0.0;
};

// Full per-keyframe feature extraction: point selection, depth association
// (nearest observation within 2 px of a selected corner), corner descriptors.
// The BoW vector is left empty (the caller owns the vocabulary).
Keyframe process_keyframe(uint64_t id, double timestamp, const GrayImage& image,
                          const std::vector<Observation>& observations, const SE3& pose_cw,
                          const PipelineConfig& config, FrameTimings* timings = nullptr);

// Ingests the bundle (calib.txt, odom.tum, per-keyframe images and
// observations; gt.tum consumed for ATE reporting when present), runs the
// window/marginalization/loop-closure/pose-graph loop, and writes before.tum,
// after.tum, loops.csv, graph.txt, report.txt and trajectory.svg into
// out_dir. Two workers by default (feature ingestion and loop closing,
// connected by a bounded queue); options.single_thread runs the same steps
// sequentially with identical artifacts. Module errors abort the run tagged
// with the failing keyframe id.
PipelineResult run_pipeline(const PipelineOptions& options, const PipelineConfig& config);

// Top-down XY polyline plot (ground truth, before, after); any trajectory
// may be empty.
void write_trajectory_svg(const std::string& path, const Trajectory& gt,
                          const Trajectory& before, const Trajectory& after);

}  // namespace revisit
