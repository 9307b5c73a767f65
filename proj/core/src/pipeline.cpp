#include <revisit/pipeline.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <thread>

#include <revisit/bow.hpp>
#include <revisit/error.hpp>
#include <revisit/pose_graph.hpp>
#include <revisit/rng.hpp>
#include <revisit/simulator.hpp>
#include <revisit/trajectory.hpp>

namespace revisit {

const char* const kReportTimingsMarker = "== timings (non-deterministic) ==";

namespace {

constexpr double kDepthAssocRadius = 2.0;  // px, corner-to-observation gate
constexpr uint64_t kVocabStream = 777;
constexpr size_t kQueueCapacity = 8;

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

// Order-preserving bounded handoff between the ingestion worker and the
// loop-closing worker; an exception on either side drains through here.
class FrameQueue {
 public:
  // False once the consumer has failed; the producer should stop.
  bool push(std::shared_ptr<const Keyframe> kf) {
    std::unique_lock lock(mutex_);
    cv_space_.wait(lock, [&] { return frames_.size() < kQueueCapacity || failed_; });
    if (failed_) {
      return false;
    }
    frames_.push_back(std::move(kf));
    cv_data_.notify_one();
    return true;
  }

  std::shared_ptr<const Keyframe> pop() {
    std::unique_lock lock(mutex_);
    cv_data_.wait(lock, [&] { return !frames_.empty() || done_ || failed_; });
    if (failed_) {
      std::rethrow_exception(error_);
    }
    if (frames_.empty()) {
      return nullptr;  // producer finished
    }
    auto kf = std::move(frames_.front());
    frames_.pop_front();
    cv_space_.notify_one();
    return kf;
  }

  void finish() {
    std::lock_guard lock(mutex_);
    done_ = true;
    cv_data_.notify_all();
  }

  void fail(std::exception_ptr error) {
    std::lock_guard lock(mutex_);
    if (!failed_) {
      failed_ = true;
      error_ = std::move(error);
    }
    cv_data_.notify_all();
    cv_space_.notify_all();
  }

 private:
  std::mutex mutex_;
  std::condition_variable cv_data_;
  std::condition_variable cv_space_;
  std::deque<std::shared_ptr<const Keyframe>> frames_;
  bool done_ = false;
  bool failed_ = false;
  std::exception_ptr error_;
};

Error with_keyframe_context(uint64_t id, const Error& e) {
  return Error(e.code(), "keyframe " + std::to_string(id) + ": " + e.what());
}

}  // namespace

Keyframe process_keyframe(uint64_t id, double timestamp, const GrayImage& image,
                          const std::vector<Observation>& observations, const SE3& pose_cw,
                          const PipelineConfig& config, FrameTimings* timings) {
  Keyframe kf;
  kf.id = id;
  kf.timestamp = timestamp;
  kf.pose_cw = pose_cw;
  const auto t_select = Clock::now();
  kf.points = select_points(image, config.select);
  if (timings) {
    timings->select_ms = elapsed_ms(t_select);
  }
  kf.corner_count = 0;
  while (kf.corner_count < kf.points.size() &&
         kf.points[kf.corner_count].kind == PointKind::kCorner) {
    ++kf.corner_count;
  }

  const auto t_describe = Clock::now();
  // Descriptors sample a smoothed copy (selection keeps the raw gradients):
  // averaging suppresses per-frame sensor noise so revisit descriptors of one
  // landmark agree bit-for-bit closely enough to share vocabulary words.
  const GrayImage smoothed = box_blur(image, 2);
  kf.descriptors.reserve(kf.corner_count);
  kf.inv_depths.assign(kf.corner_count, 0.0);
  kf.landmark_ids.assign(kf.corner_count, -1);
  for (size_t i = 0; i < kf.corner_count; ++i) {
    const SelectedPoint& p = kf.points[i];
    kf.descriptors.push_back(describe(smoothed, p.u, p.v));
    double best_sq = kDepthAssocRadius * kDepthAssocRadius;
    for (const Observation& ob : observations) {
      const double du = ob.u - static_cast<double>(p.u);
      const double dv = ob.v - static_cast<double>(p.v);
      const double sq = du * du + dv * dv;
      if (sq <= best_sq) {
        best_sq = sq;
        kf.inv_depths[i] = ob.inv_depth;
        kf.landmark_ids[i] = ob.landmark_id;
      }
    }
  }
  if (timings) {
    timings->describe_ms = elapsed_ms(t_describe);
  }
  return kf;
}

namespace {

// Everything owned by the loop-closing side: recognition database, keyframe
// store, pose graph, window bookkeeping.
class LoopWorker {
 public:
  LoopWorker(const PipelineConfig& config, const CameraIntrinsics& intrinsics,
             std::vector<SE3> odom_wc)
      : config_(config),
        intrinsics_(intrinsics),
        odom_wc_(std::move(odom_wc)),
        db_(config.bow.min_score) {}

  void consume(const std::shared_ptr<const Keyframe>& kf) {
    const uint64_t id = kf->id;
    try {
      // Chain the node estimate from the corrected predecessor so new nodes
      // ride the optimized trajectory instead of raw odometry.
      Sim3 estimate;
      if (id == 0) {
        estimate = Sim3(odom_wc_[0].q, odom_wc_[0].t, 1.0);
      } else {
        const SE3 rel = odom_wc_[id - 1].inverse() * odom_wc_[id];
        estimate = graph_.node(id - 1).estimate * Sim3(rel.q, rel.t, 1.0);
      }
      graph_.add_node(id, estimate, /*in_window=*/true);
      window_.push_back(id);
      store_[id] = kf;
      db_.insert(id, kf->bow);

      if (window_.size() > config_.window_size) {
        const std::vector<uint64_t> window_ids(window_.begin(), window_.end());
        if (config_.graph.covis_all_pairs) {
          covis_edges_ += graph_.add_covisibility_edges(window_ids, config_.graph.w_t,
                                                        config_.graph.w_r, config_.graph.w_s);
        } else {
          for (size_t k = 0; k + 1 < window_ids.size(); ++k) {
            covis_edges_ += graph_.add_covisibility_edges(
                {window_ids[k], window_ids[k + 1]}, config_.graph.w_t, config_.graph.w_r,
                config_.graph.w_s);
          }
        }
        const uint64_t leaving = window_.front();
        window_.pop_front();
        graph_.set_in_window(leaving, false);
        db_.mark_marginalized(leaving);
        ++marginalized_;
      }

      if (marginalized_ > 0) {
        attempt_loop(kf);
      }
    } catch (const Error& e) {
      throw with_keyframe_context(id, e);
    }
  }

  PoseGraph& graph() { return graph_; }
  const std::vector<LoopConstraint>& loops() const { return loops_; }
  size_t covis_edges() const { return covis_edges_; }
  size_t loop_attempts() const { return loop_attempts_; }
  size_t pgo_runs() const { return pgo_runs_; }
  double loop_ms_total() const { return loop_ms_total_; }
  double optimize_s_total() const { return optimize_s_total_; }

 private:
  void attempt_loop(const std::shared_ptr<const Keyframe>& kf) {
    const uint64_t id = kf->id;
    std::vector<uint64_t> exclude;
    const uint64_t gap = std::max<uint64_t>(config_.loop_min_gap, config_.window_size);
    const uint64_t first = id >= gap ? id - gap + 1 : 0;
    for (uint64_t j = first; j <= id; ++j) {
      exclude.push_back(j);
    }

    const auto t0 = Clock::now();
    ++loop_attempts_;
    const auto constraint =
        attempt_loop_closure(*kf, db_, store_, exclude, intrinsics_, config_.loop);
    std::vector<LoopConstraint> accepted;
    if (constraint && constraint->accepted) {
      accepted.push_back(*constraint);
      // The verified hit confirms the revisited place; references adjacent to
      // it usually see the same scene but may rank too low in the word
      // histogram to be proposed. Each extra constraint verified here
      // triangulates the junction far better than the single edge alone.
      for (int64_t dr = -2; dr <= 2; ++dr) {
        const int64_t ref_id = static_cast<int64_t>(constraint->id_ref) + dr;
        if (dr == 0 || ref_id < 0) continue;
        const uint64_t ref = static_cast<uint64_t>(ref_id);
        if (std::find(exclude.begin(), exclude.end(), ref) != exclude.end()) continue;
        const auto it = store_.find(ref);
        if (it == store_.end() || !db_.contains(ref)) continue;
        const auto extra =
            attempt_loop_closure_pair(*kf, *it->second, intrinsics_, config_.loop);
        if (extra && extra->accepted) {
          accepted.push_back(*extra);
        }
      }
    }
    loop_ms_total_ += elapsed_ms(t0);
    if (accepted.empty()) {
      return;
    }

    for (const LoopConstraint& c : accepted) {
      const double f = std::min(1.0, static_cast<double>(c.inliers) / 20.0);
      graph_.add_edge(c.id_cur, c.id_ref, c.s_cr, f * config_.graph.w_t, f * config_.graph.w_r,
                      f * config_.graph.w_s, EdgeKind::kLoop);
      loops_.push_back(c);
    }

    const auto t1 = Clock::now();
    OptimizeOptions opts;
    opts.max_iterations = config_.graph.max_iterations;
    opts.relative_decrease = config_.graph.rel_decrease;
    graph_.optimize(id, opts);
    ++pgo_runs_;
    optimize_s_total_ += elapsed_ms(t1) / 1000.0;
  }

  const PipelineConfig& config_;
  CameraIntrinsics intrinsics_;
  std::vector<SE3> odom_wc_;
  KeyframeDatabase db_;
  KeyframeStore store_;
  PoseGraph graph_;
  std::deque<uint64_t> window_;
  std::vector<LoopConstraint> loops_;
  size_t covis_edges_ = 0;
  size_t marginalized_ = 0;
  size_t loop_attempts_ = 0;
  size_t pgo_runs_ = 0;
  double loop_ms_total_ = 0.0;
  double optimize_s_total_ = 0.0;
};

void write_loops_csv(const std::string& path, const std::vector<LoopConstraint>& loops) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw Error(ErrorCode::kIo, "cannot open loop file for writing: " + path);
  }
  out << "id_ref,id_cur,tx,ty,tz,qx,qy,qz,qw,s,inliers\n";
  char buf[512];
  for (const LoopConstraint& loop : loops) {
    const Sim3& s = loop.s_cr;
    const int n = std::snprintf(
        buf, sizeof(buf),
        "%llu,%llu,%.9f,%.9f,%.9f,%.9f,%.9f,%.9f,%.9f,%.9f,%d\n",
        static_cast<unsigned long long>(loop.id_ref),
        static_cast<unsigned long long>(loop.id_cur), s.t.x(), s.t.y(), s.t.z(), s.q.x(),
        s.q.y(), s.q.z(), s.q.w(), s.s, loop.inliers);
    out.write(buf, n);
  }
  if (!out) {
    throw Error(ErrorCode::kIo, "failed writing loop file: " + path);
  }
}

std::string format_ate(double value) {
  if (value < 0.0) {
    return "n/a";
  }
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", value);
  return buf;
}

void write_report(const std::string& path, const PipelineResult& result) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw Error(ErrorCode::kIo, "cannot open report for writing: " + path);
  }
  char buf[512];
  auto line = [&](const char* fmt, auto... args) {
    const int n = std::snprintf(buf, sizeof(buf), fmt, args...);
    out.write(buf, n);
  };
  line("keyframes: %zu\n", result.keyframes);
  line("covisibility_edges: %zu\n", result.covis_edges);
  line("loop_attempts: %zu\n", result.loop_attempts);
  line("accepted_loops: %zu\n", result.loops.size());
  for (const LoopConstraint& loop : result.loops) {
    line("loop %llu -> %llu: inliers=%d mean2d=%.6fpx mean3d=%.6fm scale=%.6f\n",
         static_cast<unsigned long long>(loop.id_cur),
         static_cast<unsigned long long>(loop.id_ref), loop.inliers, loop.mean_residual_2d,
         loop.mean_residual_3d, loop.s_cr.s);
  }
  line("pgo_runs: %zu\n", result.pgo_runs);
  line("before_ate: %s\n", format_ate(result.before_ate).c_str());
  line("after_ate: %s\n", format_ate(result.after_ate).c_str());
  line("%s\n", kReportTimingsMarker);
  line("total: %.3f s\n", result.timings.total_s);
  line("select_avg: %.3f ms\n", result.timings.select_avg_ms);
  line("describe_avg: %.3f ms\n", result.timings.describe_avg_ms);
  line("bow_avg: %.3f ms\n", result.timings.bow_avg_ms);
  line("loop_attempt_avg: %.3f ms\n", result.timings.loop_attempt_avg_ms);
  line("optimize_total: %.3f s\n", result.timings.optimize_total_s);
  if (!out) {
    throw Error(ErrorCode::kIo, "failed writing report: " + path);
  }
}

}  // namespace

void write_trajectory_svg(const std::string& path, const Trajectory& gt,
                          const Trajectory& before, const Trajectory& after) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw Error(ErrorCode::kIo, "cannot open plot for writing: " + path);
  }

  double min_x = 0.0, max_x = 1.0, min_y = 0.0, max_y = 1.0;
  bool first = true;
  auto expand = [&](const Trajectory& traj) {
    for (const TrajectoryPoint& p : traj) {
      const double x = p.pose.t.x();
      const double y = p.pose.t.y();
      if (first) {
        min_x = max_x = x;
        min_y = max_y = y;
        first = false;
      } else {
        min_x = std::min(min_x, x);
        max_x = std::max(max_x, x);
        min_y = std::min(min_y, y);
        max_y = std::max(max_y, y);
      }
    }
  };
  expand(gt);
  expand(before);
  expand(after);

  const double size = 800.0;
  const double margin = 40.0;
  const double span = std::max({max_x - min_x, max_y - min_y, 1e-9});
  const double scale = (size - 2.0 * margin) / span;

  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" height=\"800\" "
         "viewBox=\"0 0 800 800\">\n";
  out << "<rect width=\"800\" height=\"800\" fill=\"white\"/>\n";

  char buf[64];
  auto polyline = [&](const Trajectory& traj, const char* color, const char* label, int slot) {
    if (!traj.empty()) {
      out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
      for (const TrajectoryPoint& p : traj) {
        const double x = margin + (p.pose.t.x() - min_x) * scale;
        const double y = size - margin - (p.pose.t.y() - min_y) * scale;
        std::snprintf(buf, sizeof(buf), "%.2f,%.2f ", x, y);
        out << buf;
      }
      out << "\"/>\n";
    }
    out << "<text x=\"16\" y=\"" << 24 + 20 * slot << "\" fill=\"" << color
        << "\" font-family=\"monospace\" font-size=\"14\">" << label << "</text>\n";
  };
  polyline(gt, "#888888", "ground truth", 0);
  polyline(before, "#cc3333", "before", 1);
  polyline(after, "#22aa22", "after", 2);
  out << "</svg>\n";
  if (!out) {
    throw Error(ErrorCode::kIo, "failed writing plot: " + path);
  }
}

PipelineResult run_pipeline(const PipelineOptions& options, const PipelineConfig& config) {
  validate_config(config);
  const auto t_start = Clock::now();
  const std::filesystem::path bundle(options.bundle_dir);
  const std::filesystem::path out_dir(options.out_dir);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) {
    throw Error(ErrorCode::kIo, "cannot create output directory: " + options.out_dir);
  }

  const CameraIntrinsics intrinsics = read_calib((bundle / "calib.txt").string());
  const std::vector<TumRecord> odom_records = read_tum((bundle / "odom.tum").string());
  if (odom_records.empty()) {
    throw Error(ErrorCode::kInsufficientData, "bundle has no odometry poses");
  }
  const Trajectory odometry = to_trajectory(odom_records);
  const size_t n = odometry.size();
  std::vector<SE3> odom_wc(n);
  for (size_t i = 0; i < n; ++i) {
    odom_wc[i] = SE3(odometry[i].pose.q, odometry[i].pose.t);
  }

  Trajectory gt;
  const std::string gt_path = (bundle / "gt.tum").string();
  if (std::filesystem::exists(gt_path)) {
    gt = to_trajectory(read_tum(gt_path));
  }

  // Per-frame extraction, timed; cached when the vocabulary pre-pass already
  // processed the frame.
  StageTimings timings;
  std::vector<std::shared_ptr<Keyframe>> cache(n);
  auto extract = [&](uint64_t id) {
    const GrayImage image = read_pgm(keyframe_image_path(options.bundle_dir, id));
    const auto observations = read_observations(keyframe_obs_path(options.bundle_dir, id));
    FrameTimings ft;
    Keyframe kf = process_keyframe(id, odometry[id].timestamp, image, observations,
                                   odom_wc[id].inverse(), config, &ft);
    timings.select_avg_ms += ft.select_ms;
    timings.describe_avg_ms += ft.describe_ms;
    return kf;
  };

  BowVocabulary vocabulary;
  if (!options.vocab_path.empty()) {
    vocabulary = BowVocabulary::load(options.vocab_path);
  } else {
    std::vector<std::vector<BinaryDescriptor>> training;
    training.reserve(n);
    for (uint64_t id = 0; id < n; ++id) {
      try {
        cache[id] = std::make_shared<Keyframe>(extract(id));
      } catch (const Error& e) {
        throw with_keyframe_context(id, e);
      }
      training.push_back(cache[id]->descriptors);
    }
    vocabulary = BowVocabulary::build(training, config.bow.branching, config.bow.depth,
                                      mix_seed(options.seed, kVocabStream));
  }

  LoopWorker worker(config, intrinsics, odom_wc);

  auto produce = [&](uint64_t id) {
    std::shared_ptr<Keyframe> kf;
    try {
      kf = cache[id] ? std::move(cache[id]) : std::make_shared<Keyframe>(extract(id));
      const auto t0 = Clock::now();
      if (!kf->descriptors.empty()) {
        kf->bow = vocabulary.transform(kf->descriptors);
      }
      timings.bow_avg_ms += elapsed_ms(t0);
    } catch (const Error& e) {
      throw with_keyframe_context(id, e);
    }
    return std::shared_ptr<const Keyframe>(std::move(kf));
  };

  if (options.single_thread) {
    for (uint64_t id = 0; id < n; ++id) {
      worker.consume(produce(id));
    }
  } else {
    FrameQueue queue;
    std::thread ingestion([&] {
      try {
        for (uint64_t id = 0; id < n; ++id) {
          if (!queue.push(produce(id))) {
            return;
          }
        }
        queue.finish();
      } catch (...) {
        queue.fail(std::current_exception());
      }
    });
    try {
      while (auto kf = queue.pop()) {
        worker.consume(kf);
      }
    } catch (...) {
      queue.fail(std::current_exception());
      ingestion.join();
      throw;
    }
    ingestion.join();
  }

  PipelineResult result;
  result.keyframes = n;
  result.before = odometry;
  result.after.reserve(n);
  for (uint64_t id = 0; id < n; ++id) {
    TrajectoryPoint p;
    p.timestamp = odometry[id].timestamp;
    p.id = id;
    p.pose = worker.graph().node(id).estimate;
    result.after.push_back(p);
  }
  result.loops = worker.loops();
  result.covis_edges = worker.covis_edges();
  result.loop_attempts = worker.loop_attempts();
  result.pgo_runs = worker.pgo_runs();

  if (gt.size() >= 3) {
    try {
      result.before_ate = ate_rmse(result.before, gt, Alignment::kSim3);
      result.after_ate = ate_rmse(result.after, gt, Alignment::kSim3);
    } catch (const Error&) {
      // too few associations or degenerate geometry: leave as n/a
    }
  }

  write_tum((out_dir / "before.tum").string(), from_trajectory(result.before, true));
  write_tum((out_dir / "after.tum").string(), from_trajectory(result.after, true));
  write_loops_csv((out_dir / "loops.csv").string(), result.loops);
  if (n > 0) {
    worker.graph().set_fixed(n - 1, true);  // lets optimize-graph rerun this file as-is
  }
  worker.graph().save((out_dir / "graph.txt").string());
  write_trajectory_svg((out_dir / "trajectory.svg").string(), gt, result.before, result.after);

  timings.total_s =
      std::chrono::duration<double>(Clock::now() - t_start).count();
  timings.select_avg_ms /= static_cast<double>(n);
  timings.describe_avg_ms /= static_cast<double>(n);
  timings.bow_avg_ms /= static_cast<double>(n);
  timings.loop_attempt_avg_ms = result.loop_attempts > 0
                                    ? worker.loop_ms_total() / result.loop_attempts
                                    : 0.0;
  timings.optimize_total_s = worker.optimize_s_total();
  result.timings = timings;
  write_report((out_dir / "report.txt").string(), result);
  return result;
}

}  // namespace revisit
