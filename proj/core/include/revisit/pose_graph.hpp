#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include <revisit/lie.hpp>

namespace revisit {

enum class EdgeKind { kCovisibility, kLoop };

struct PoseGraphNode {
  uint64_t id = 0;
  Sim3 estimate;  // camera-to-world
  bool fixed = false;
  bool in_window = false;
};

// Relative-pose edge between nodes i and j. The measurement is consistent
// with estimates exactly when S_ij = est_i^-1 * est_j; the residual is
// log(S_ij * est_j^-1 * est_i). Information is diagonal:
// diag(w_t I3, w_r I3, w_s) in the (translation, rotation, scale) tangent
// layout.
struct PoseGraphEdge {
  uint64_t id_i = 0;
  uint64_t id_j = 0;
  Sim3 measurement;
  double w_t = 1.0;
  double w_r = 1.0;
  double w_s = 1.0;
  EdgeKind kind = EdgeKind::kCovisibility;
};

struct OptimizeOptions {
  int max_iterations = 50;
  double relative_decrease = 1e-9;  // chi2 convergence threshold
};

struct OptimizeReport {
  double initial_chi2 = 0.0;
  double final_chi2 = 0.0;
  int iterations = 0;  // accepted steps
};

// Global similarity pose graph. Nodes hold camera-to-world estimates; edges
// are relative constraints (covisibility chains from odometry, loop closures
// from geometric verification). Optimization is Levenberg-Marquardt over
// 7-DoF left-multiplicative increments with a hand-rolled 7x7 block-sparse
// Cholesky (elimination order: reverse keyframe id). The node passed as
// `fixed_id` and all in_window nodes are held constant.
class PoseGraph {
 public:
  void add_node(uint64_t id, const Sim3& estimate, bool in_window = false);
  bool has_node(uint64_t id) const;
  const PoseGraphNode& node(uint64_t id) const;  // throws UnknownKeyframe
  void set_estimate(uint64_t id, const Sim3& estimate);
  void set_in_window(uint64_t id, bool in_window);
  void set_fixed(uint64_t id, bool fixed);
  size_t node_count() const { return nodes_.size(); }
  const std::vector<PoseGraphNode>& nodes() const { return nodes_; }  // insertion order
  const std::vector<PoseGraphEdge>& edges() const { return edges_; }

  // Throws UnknownKeyframe for missing endpoints; rejects self-edges and
  // duplicate (unordered pair, kind) edges.
  void add_edge(uint64_t id_i, uint64_t id_j, const Sim3& measurement, double w_t, double w_r,
                double w_s, EdgeKind kind);

  // Connects every not-yet-connected pair in `window` with a covisibility
  // edge measured from the current estimates: S_ij = est_i^-1 * est_j with
  // i < j. Returns the number of edges added.
  int add_covisibility_edges(const std::vector<uint64_t>& window, double w_t, double w_r,
                             double w_s);

  static Vec7 edge_residual(const Sim3& measurement, const Sim3& est_i, const Sim3& est_j);

  double chi2() const;

  // Levenberg-Marquardt with the given node fixed. Free = not fixed and not
  // in_window. Every free node must reach an anchored (fixed or in-window)
  // node through edges, else NotConnected. Final chi2 never exceeds the
  // initial value.
  OptimizeReport optimize(uint64_t fixed_id, const OptimizeOptions& options = {});

  // Line-oriented text format:
  //   VERTEX_SIM3 id tx ty tz qx qy qz qw s [FIXED]
  //   EDGE_SIM3 id_i id_j tx ty tz qx qy qz qw s w_t w_r w_s COVIS|LOOP
  // Estimates are stored as parsed (no renormalization), so
  // write -> read -> write is byte-identical. in_window flags are runtime
  // state and not serialized.
  void save(const std::string& path) const;
  static PoseGraph load(const std::string& path);

 private:
  size_t index_of(uint64_t id) const;  // throws UnknownKeyframe

  std::vector<PoseGraphNode> nodes_;
  std::vector<PoseGraphEdge> edges_;
  std::unordered_map<uint64_t, size_t> node_index_;
  std::set<std::tuple<uint64_t, uint64_t, EdgeKind>> edge_keys_;  // (min, max, kind)
};

}  // namespace revisit
