// revisit: Sim(3) loop-closure backend for monocular odometry.
//
// Subcommands map one-to-one onto the library modules:
//   simulate        write a synthetic keyframe bundle
//   select-points   run point selection on one image
//   build-vocab     train a visual vocabulary from a bundle
//   detect-loops    run recognition + geometric verification over a bundle
//   optimize-graph  optimize a pose-graph file
//   evaluate        trajectory error metrics
//   run             full pipeline (ingest, loops, pose graph, artifacts)
//
// Exit codes: 0 success, 2 configuration/usage, 3 I/O, 4 file format,
// 5 numeric/domain failure, 10 unexpected error.

#include <cstdio>
#include <deque>
#include <exception>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <revisit/bow.hpp>
#include <revisit/config.hpp>
#include <revisit/error.hpp>
#include <revisit/evaluation.hpp>
#include <revisit/image.hpp>
#include <revisit/loop_closure.hpp>
#include <revisit/pipeline.hpp>
#include <revisit/pixel_select.hpp>
#include <revisit/pose_graph.hpp>
#include <revisit/rng.hpp>
#include <revisit/simulator.hpp>
#include <revisit/trajectory.hpp>

namespace {

using namespace revisit;

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kConfig:
      return 2;
    case ErrorCode::kIo:
      return 3;
    case ErrorCode::kFormat:
      return 4;
    default:
      return 5;
  }
}

struct CommonArgs {
  std::string config_path;
  uint64_t seed = 1;
  bool seed_given = false;
  bool single_thread = false;
};

PipelineConfig make_config(const CommonArgs& args) {
  PipelineConfig config;
  if (!args.config_path.empty()) {
    config = load_config(args.config_path);
  }
  if (args.seed_given) {
    config.sim.seed = args.seed;
    config.drift.seed = args.seed;
  }
  validate_config(config);
  return config;
}

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "flat key = value configuration file");
  cmd->add_option("--seed", args.seed, "master seed (overrides sim.seed and drift.seed)")
      ->each([&](const std::string&) { args.seed_given = true; });
  cmd->add_flag("--single-thread", args.single_thread,
                "run pipeline stages sequentially (deterministic debugging)");
}

// Processes every keyframe of a bundle through selection + description,
// invoking `sink(id, keyframe)` in id order.
template <typename Sink>
void for_each_keyframe(const std::string& bundle, const PipelineConfig& config, Sink&& sink) {
  const std::filesystem::path root(bundle);
  const auto odom = to_trajectory(read_tum((root / "odom.tum").string()));
  if (odom.empty()) {
    throw Error(ErrorCode::kInsufficientData, "bundle has no odometry poses");
  }
  for (uint64_t id = 0; id < odom.size(); ++id) {
    try {
      const GrayImage image = read_pgm(keyframe_image_path(bundle, id));
      const auto observations = read_observations(keyframe_obs_path(bundle, id));
      const SE3 pose_wc(odom[id].pose.q, odom[id].pose.t);
      Keyframe kf = process_keyframe(id, odom[id].timestamp, image, observations,
                                     pose_wc.inverse(), config);
      sink(id, std::move(kf));
    } catch (const Error& e) {
      throw Error(e.code(), "keyframe " + std::to_string(id) + ": " + e.what());
    }
  }
}

int cmd_simulate(const CommonArgs& common, const std::string& out_dir) {
  const PipelineConfig config = make_config(common);
  const World world = generate_world(config.sim);
  const SimSequence sequence = generate_loop_sequence(world, config.sim, config.drift);
  write_bundle(out_dir, world, config.sim, sequence);
  std::printf("bundle: %s (%u keyframes, %zu landmarks)\n", out_dir.c_str(),
              config.sim.n_keyframes, world.landmarks.size());
  return 0;
}

int cmd_select_points(const CommonArgs& common, const std::string& image_path,
                      const std::string& out_path) {
  const PipelineConfig config = make_config(common);
  const GrayImage image = read_pgm(image_path);
  const auto points = select_points(image, config.select);
  std::ofstream out(out_path, std::ios::binary);
  if (!out) {
    throw Error(ErrorCode::kIo, "cannot open output file: " + out_path);
  }
  out << "u,v,kind,score\n";
  char buf[128];
  for (const SelectedPoint& p : points) {
    const int n = std::snprintf(buf, sizeof(buf), "%d,%d,%d,%.9f\n", p.u, p.v,
                                static_cast<int>(p.kind), p.score);
    out.write(buf, n);
  }
  std::printf("%zu points (%s)\n", points.size(), out_path.c_str());
  return 0;
}

int cmd_build_vocab(const CommonArgs& common, const std::string& bundle,
                    const std::string& out_path) {
  const PipelineConfig config = make_config(common);
  std::vector<std::vector<BinaryDescriptor>> training;
  for_each_keyframe(bundle, config, [&](uint64_t, Keyframe&& kf) {
    training.push_back(std::move(kf.descriptors));
  });
  const uint64_t seed = common.seed_given ? common.seed : 1;
  const BowVocabulary vocabulary =
      BowVocabulary::build(training, config.bow.branching, config.bow.depth, seed);
  vocabulary.save(out_path);
  std::printf("vocabulary: %zu words from %zu images (%s)\n", vocabulary.word_count(),
              training.size(), out_path.c_str());
  return 0;
}

int cmd_detect_loops(const CommonArgs& common, const std::string& bundle,
                     const std::string& vocab_path, const std::string& out_path) {
  const PipelineConfig config = make_config(common);
  const std::filesystem::path root(bundle);
  const CameraIntrinsics intrinsics = read_calib((root / "calib.txt").string());
  const BowVocabulary vocabulary = BowVocabulary::load(vocab_path);

  KeyframeDatabase db(config.bow.min_score);
  KeyframeStore store;
  std::deque<uint64_t> window;
  size_t marginalized = 0;
  std::vector<LoopConstraint> loops;

  for_each_keyframe(bundle, config, [&](uint64_t id, Keyframe&& kf) {
    if (!kf.descriptors.empty()) {
      kf.bow = vocabulary.transform(kf.descriptors);
    }
    auto shared = std::make_shared<const Keyframe>(std::move(kf));
    store[id] = shared;
    db.insert(id, shared->bow);
    window.push_back(id);
    if (window.size() > config.window_size) {
      db.mark_marginalized(window.front());
      window.pop_front();
      ++marginalized;
    }
    if (marginalized == 0) {
      return;
    }
    std::vector<uint64_t> exclude;
    const uint64_t gap = std::max<uint64_t>(config.loop_min_gap, config.window_size);
    for (uint64_t j = id >= gap ? id - gap + 1 : 0; j <= id; ++j) {
      exclude.push_back(j);
    }
    const auto constraint =
        attempt_loop_closure(*shared, db, store, exclude, intrinsics, config.loop);
    if (constraint && constraint->accepted) {
      loops.push_back(*constraint);
    }
  });

  std::ofstream out(out_path, std::ios::binary);
  if (!out) {
    throw Error(ErrorCode::kIo, "cannot open output file: " + out_path);
  }
  out << "id_ref,id_cur,tx,ty,tz,qx,qy,qz,qw,s,inliers\n";
  char buf[512];
  for (const LoopConstraint& loop : loops) {
    const Sim3& s = loop.s_cr;
    const int n = std::snprintf(
        buf, sizeof(buf), "%llu,%llu,%.9f,%.9f,%.9f,%.9f,%.9f,%.9f,%.9f,%.9f,%d\n",
        static_cast<unsigned long long>(loop.id_ref),
        static_cast<unsigned long long>(loop.id_cur), s.t.x(), s.t.y(), s.t.z(), s.q.x(),
        s.q.y(), s.q.z(), s.q.w(), s.s, loop.inliers);
    out.write(buf, n);
  }
  std::printf("%zu accepted loops (%s)\n", loops.size(), out_path.c_str());
  return 0;
}

int cmd_optimize_graph(const CommonArgs& common, const std::string& graph_path,
                       const std::string& out_path, std::string tum_path) {
  const PipelineConfig config = make_config(common);
  PoseGraph graph = PoseGraph::load(graph_path);

  uint64_t fixed_id = 0;
  size_t fixed_count = 0;
  for (const PoseGraphNode& node : graph.nodes()) {
    if (node.fixed) {
      fixed_id = node.id;
      ++fixed_count;
    }
  }
  if (fixed_count != 1) {
    throw Error(ErrorCode::kConfig, "graph must mark exactly one FIXED vertex (found " +
                                        std::to_string(fixed_count) + ")");
  }

  OptimizeOptions options;
  options.max_iterations = config.graph.max_iterations;
  options.relative_decrease = config.graph.rel_decrease;
  const OptimizeReport report = graph.optimize(fixed_id, options);
  graph.save(out_path);

  if (tum_path.empty()) {
    tum_path = out_path + ".tum";
  }
  // Pose-graph nodes carry no timestamps; the keyframe id doubles as one.
  Trajectory trajectory;
  for (const PoseGraphNode& node : graph.nodes()) {
    TrajectoryPoint p;
    p.timestamp = static_cast<double>(node.id);
    p.id = node.id;
    p.pose = node.estimate;
    trajectory.push_back(p);
  }
  write_tum(tum_path, from_trajectory(trajectory, true));

  std::printf("chi2: %.9e -> %.9e in %d iterations\n", report.initial_chi2, report.final_chi2,
              report.iterations);
  std::printf("graph: %s\ntrajectory: %s\n", out_path.c_str(), tum_path.c_str());
  return 0;
}

int cmd_evaluate(const std::string& est_path, const std::string& gt_path,
                 const std::string& csv_path, double max_dt) {
  const Trajectory est = to_trajectory(read_tum(est_path));
  const Trajectory gt = to_trajectory(read_tum(gt_path));
  const double ate_sim3 = ate_rmse(est, gt, Alignment::kSim3, max_dt);
  const double ate_se3 = ate_rmse(est, gt, Alignment::kSE3, max_dt);
  const size_t pairs = associate(est, gt, max_dt).size();

  std::printf("associated poses: %zu\n", pairs);
  std::printf("ate_sim3: %.9f m\n", ate_sim3);
  std::printf("ate_se3:  %.9f m\n", ate_se3);

  if (!csv_path.empty()) {
    std::ofstream out(csv_path, std::ios::binary);
    if (!out) {
      throw Error(ErrorCode::kIo, "cannot open output file: " + csv_path);
    }
    char buf[128];
    out << "metric,value\n";
    int n = std::snprintf(buf, sizeof(buf), "associations,%zu\n", pairs);
    out.write(buf, n);
    n = std::snprintf(buf, sizeof(buf), "ate_sim3,%.9f\n", ate_sim3);
    out.write(buf, n);
    n = std::snprintf(buf, sizeof(buf), "ate_se3,%.9f\n", ate_se3);
    out.write(buf, n);
  }
  return 0;
}

int cmd_run(const CommonArgs& common, const std::string& bundle, const std::string& out_dir,
            const std::string& vocab_path) {
  const PipelineConfig config = make_config(common);
  PipelineOptions options;
  options.bundle_dir = bundle;
  options.out_dir = out_dir;
  options.vocab_path = vocab_path;
  options.seed = common.seed_given ? common.seed : 1;
  options.single_thread = common.single_thread;
  const PipelineResult result = run_pipeline(options, config);

  std::printf("keyframes: %zu\n", result.keyframes);
  std::printf("accepted loops: %zu\n", result.loops.size());
  if (result.before_ate >= 0.0) {
    std::printf("ate before: %.6f m\nate after:  %.6f m\n", result.before_ate,
                result.after_ate);
  }
  std::printf("artifacts: %s\n", out_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sim(3) loop-closure backend for monocular visual odometry"};
  app.require_subcommand(1);

  CommonArgs common;

  auto* simulate = app.add_subcommand("simulate", "write a synthetic keyframe bundle");
  std::string sim_out;
  simulate->add_option("--out", sim_out, "bundle directory")->required();
  add_common(simulate, common);

  auto* select = app.add_subcommand("select-points", "point selection on one PGM image");
  std::string sel_image, sel_out;
  select->add_option("--image", sel_image, "input PGM image")->required();
  select->add_option("--out", sel_out, "output CSV (u,v,kind,score)")->required();
  add_common(select, common);

  auto* vocab = app.add_subcommand("build-vocab", "train a visual vocabulary from a bundle");
  std::string voc_bundle, voc_out;
  vocab->add_option("--bundle", voc_bundle, "keyframe bundle directory")->required();
  vocab->add_option("--out", voc_out, "output vocabulary file")->required();
  add_common(vocab, common);

  auto* detect = app.add_subcommand("detect-loops", "loop detection over a bundle");
  std::string det_bundle, det_vocab, det_out;
  detect->add_option("--bundle", det_bundle, "keyframe bundle directory")->required();
  detect->add_option("--vocab", det_vocab, "vocabulary file")->required();
  detect->add_option("--out", det_out, "output CSV of accepted constraints")->required();
  add_common(detect, common);

  auto* optimize = app.add_subcommand("optimize-graph", "optimize a pose-graph file");
  std::string opt_graph, opt_out, opt_tum;
  optimize->add_option("--graph", opt_graph, "input graph file")->required();
  optimize->add_option("--out", opt_out, "output graph file")->required();
  optimize->add_option("--out-tum", opt_tum, "output trajectory (default: <out>.tum)");
  add_common(optimize, common);

  auto* evaluate = app.add_subcommand("evaluate", "trajectory error metrics");
  std::string eva_est, eva_gt, eva_csv;
  double eva_max_dt = 0.02;
  evaluate->add_option("--est", eva_est, "estimated trajectory (TUM)")->required();
  evaluate->add_option("--gt", eva_gt, "ground-truth trajectory (TUM)")->required();
  evaluate->add_option("--csv", eva_csv, "also write metrics as CSV");
  evaluate->add_option("--max-dt", eva_max_dt, "association window, seconds");
  add_common(evaluate, common);

  auto* run = app.add_subcommand("run", "full pipeline over a bundle");
  std::string run_bundle, run_out, run_vocab;
  run->add_option("--bundle", run_bundle, "keyframe bundle directory")->required();
  run->add_option("--out", run_out, "output directory")->required();
  run->add_option("--vocab", run_vocab, "vocabulary file (default: train from the bundle)");
  add_common(run, common);

  CLI11_PARSE(app, argc, argv);

  try {
    if (simulate->parsed()) return cmd_simulate(common, sim_out);
    if (select->parsed()) return cmd_select_points(common, sel_image, sel_out);
    if (vocab->parsed()) return cmd_build_vocab(common, voc_bundle, voc_out);
    if (detect->parsed()) return cmd_detect_loops(common, det_bundle, det_vocab, det_out);
    if (optimize->parsed()) return cmd_optimize_graph(common, opt_graph, opt_out, opt_tum);
    if (evaluate->parsed()) return cmd_evaluate(eva_est, eva_gt, eva_csv, eva_max_dt);
    if (run->parsed()) return cmd_run(common, run_bundle, run_out, run_vocab);
  } catch (const revisit::Error& e) {
    std::fprintf(stderr, "error (%s): %s\n", revisit::error_code_name(e.code()), e.what());
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 10;
  }
  return 2;  // unreachable with require_subcommand(1)
}
