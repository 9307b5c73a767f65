#include <revisit/pose_graph.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>

#include <Eigen/Dense>

#include <revisit/error.hpp>

namespace revisit {

namespace {

Vec7 information_diagonal(const PoseGraphEdge& edge) {
  Vec7 info;
  info << edge.w_t, edge.w_t, edge.w_t, edge.w_r, edge.w_r, edge.w_r, edge.w_s;
  return info;
}

// Fetches (creating as zero if absent) the 7x7 block at `row` of a sparse
// block column. Eigen matrices are uninitialized on default construction, so
// plain map::operator[] must never be used for accumulation.
Mat7& block_at(std::map<int, Mat7>& column, int row) {
  return column.try_emplace(row, Mat7::Zero()).first->second;
}

// Lower-triangular block-sparse Cholesky over 7x7 blocks. Columns hold their
// sub-diagonal blocks in row-sorted maps. Small graphs keep the simple
// left-looking column scan affordable.
class BlockCholesky {
 public:
  // `hessian` is the lower triangle: hessian[col][row] with row >= col.
  bool factor(const std::vector<std::map<int, Mat7>>& hessian) {
    const int m = static_cast<int>(hessian.size());
    cols_.assign(static_cast<size_t>(m), {});
    diag_.assign(static_cast<size_t>(m), Mat7::Zero());
    for (int c = 0; c < m; ++c) {
      std::map<int, Mat7> acc = hessian[static_cast<size_t>(c)];
      // Subtract contributions of previous columns k holding a block in row c.
      for (int k = 0; k < c; ++k) {
        const auto& col_k = cols_[static_cast<size_t>(k)];
        auto it_ck = col_k.find(c);
        if (it_ck == col_k.end()) continue;
        const Mat7& l_ck = it_ck->second;
        for (auto it = it_ck; it != col_k.end(); ++it) {
          block_at(acc, it->first) -= it->second * l_ck.transpose();
        }
      }
      auto it_cc = acc.find(c);
      if (it_cc == acc.end()) return false;
      Eigen::LLT<Mat7> llt(it_cc->second);
      if (llt.info() != Eigen::Success) return false;
      diag_[static_cast<size_t>(c)] = llt.matrixL();
      auto& col_c = cols_[static_cast<size_t>(c)];
      for (const auto& [row, block] : acc) {
        if (row == c) continue;
        // Solve L(row,c) * L(c,c)^T = block.
        col_c[row] = diag_[static_cast<size_t>(c)]
                         .transpose()
                         .triangularView<Eigen::Upper>()
                         .solve<Eigen::OnTheRight>(block);
      }
      col_c[c] = diag_[static_cast<size_t>(c)];  // include diagonal for row scans
    }
    return true;
  }

  VecX solve(const VecX& rhs) const {
    const int m = static_cast<int>(diag_.size());
    VecX y = rhs;
    // Forward: L y = rhs (column-oriented scatter).
    for (int c = 0; c < m; ++c) {
      y.segment<7>(7 * c) = diag_[static_cast<size_t>(c)]
                                .triangularView<Eigen::Lower>()
                                .solve(y.segment<7>(7 * c));
      for (const auto& [row, block] : cols_[static_cast<size_t>(c)]) {
        if (row == c) continue;
        y.segment<7>(7 * row) -= block * y.segment<7>(7 * c);
      }
    }
    // Backward: L^T x = y.
    for (int c = m - 1; c >= 0; --c) {
      Vec7 acc = y.segment<7>(7 * c);
      for (const auto& [row, block] : cols_[static_cast<size_t>(c)]) {
        if (row == c) continue;
        acc -= block.transpose() * y.segment<7>(7 * row);
      }
      y.segment<7>(7 * c) =
          diag_[static_cast<size_t>(c)].transpose().triangularView<Eigen::Upper>().solve(acc);
    }
    return y;
  }

 private:
  std::vector<std::map<int, Mat7>> cols_;
  std::vector<Mat7> diag_;
};

struct UnionFind {
  explicit UnionFind(size_t n) : parent(n) { std::iota(parent.begin(), parent.end(), size_t{0}); }
  size_t find(size_t a) {
    while (parent[a] != a) {
      parent[a] = parent[parent[a]];
      a = parent[a];
    }
    return a;
  }
  void merge(size_t a, size_t b) { parent[find(a)] = find(b); }
  std::vector<size_t> parent;
};

void append_pose_fields(std::string& out, const Sim3& pose) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), " %.9f %.9f %.9f %.9f %.9f %.9f %.9f %.9f", pose.t.x(),
                pose.t.y(), pose.t.z(), pose.q.x(), pose.q.y(), pose.q.z(), pose.q.w(), pose.s);
  out += buf;
}

// Parsed without normalization, so a rewrite reproduces the exact bytes.
Sim3 pose_from_fields(const double* f) {
  Sim3 pose;
  pose.t = Vec3(f[0], f[1], f[2]);
  pose.q.x() = f[3];
  pose.q.y() = f[4];
  pose.q.z() = f[5];
  pose.q.w() = f[6];
  pose.s = f[7];
  return pose;
}

}  // namespace

void PoseGraph::add_node(uint64_t id, const Sim3& estimate, bool in_window) {
  if (node_index_.count(id) != 0) {
    throw std::invalid_argument("pose graph node id added twice");
  }
  node_index_[id] = nodes_.size();
  nodes_.push_back({id, estimate, false, in_window});
}

bool PoseGraph::has_node(uint64_t id) const { return node_index_.count(id) != 0; }

size_t PoseGraph::index_of(uint64_t id) const {
  auto it = node_index_.find(id);
  if (it == node_index_.end()) {
    throw Error(ErrorCode::kUnknownKeyframe, "no pose graph node with id " + std::to_string(id));
  }
  return it->second;
}

const PoseGraphNode& PoseGraph::node(uint64_t id) const { return nodes_[index_of(id)]; }

void PoseGraph::set_estimate(uint64_t id, const Sim3& estimate) {
  nodes_[index_of(id)].estimate = estimate;
}

void PoseGraph::set_in_window(uint64_t id, bool in_window) {
  nodes_[index_of(id)].in_window = in_window;
}

void PoseGraph::set_fixed(uint64_t id, bool fixed) { nodes_[index_of(id)].fixed = fixed; }

void PoseGraph::add_edge(uint64_t id_i, uint64_t id_j, const Sim3& measurement, double w_t,
                         double w_r, double w_s, EdgeKind kind) {
  if (id_i == id_j) {
    throw std::invalid_argument("pose graph self-edges are not allowed");
  }
  index_of(id_i);
  index_of(id_j);
  const auto key = std::make_tuple(std::min(id_i, id_j), std::max(id_i, id_j), kind);
  if (!edge_keys_.insert(key).second) {
    throw std::invalid_argument("duplicate pose graph edge for this pair and kind");
  }
  edges_.push_back({id_i, id_j, measurement, w_t, w_r, w_s, kind});
}

int PoseGraph::add_covisibility_edges(const std::vector<uint64_t>& window, double w_t, double w_r,
                                      double w_s) {
  int added = 0;
  for (size_t a = 0; a < window.size(); ++a) {
    for (size_t b = a + 1; b < window.size(); ++b) {
      const uint64_t id_i = std::min(window[a], window[b]);
      const uint64_t id_j = std::max(window[a], window[b]);
      if (id_i == id_j) continue;
      if (edge_keys_.count({id_i, id_j, EdgeKind::kCovisibility}) != 0) continue;
      const Sim3 measurement =
          nodes_[index_of(id_i)].estimate.inverse() * nodes_[index_of(id_j)].estimate;
      add_edge(id_i, id_j, measurement, w_t, w_r, w_s, EdgeKind::kCovisibility);
      ++added;
    }
  }
  return added;
}

Vec7 PoseGraph::edge_residual(const Sim3& measurement, const Sim3& est_i, const Sim3& est_j) {
  return (measurement * est_j.inverse() * est_i).log();
}

double PoseGraph::chi2() const {
  double total = 0.0;
  for (const PoseGraphEdge& edge : edges_) {
    const Vec7 r = edge_residual(edge.measurement, nodes_[index_of(edge.id_i)].estimate,
                                 nodes_[index_of(edge.id_j)].estimate);
    total += r.dot(information_diagonal(edge).cwiseProduct(r));
  }
  return total;
}

OptimizeReport PoseGraph::optimize(uint64_t fixed_id, const OptimizeOptions& options) {
  const size_t fixed_index = index_of(fixed_id);

  // Parameter blocks: free nodes in reverse keyframe-id order.
  std::vector<size_t> free_nodes;
  for (size_t i = 0; i < nodes_.size(); ++i) {
    if (i == fixed_index || nodes_[i].in_window) continue;
    free_nodes.push_back(i);
  }
  std::sort(free_nodes.begin(), free_nodes.end(),
            [this](size_t a, size_t b) { return nodes_[a].id > nodes_[b].id; });
  std::vector<int> param_of(nodes_.size(), -1);
  for (size_t p = 0; p < free_nodes.size(); ++p) {
    param_of[free_nodes[p]] = static_cast<int>(p);
  }

  // Every free node must reach an anchored node through edges.
  UnionFind components(nodes_.size());
  for (const PoseGraphEdge& edge : edges_) {
    components.merge(index_of(edge.id_i), index_of(edge.id_j));
  }
  std::set<size_t> anchored_components;
  for (size_t i = 0; i < nodes_.size(); ++i) {
    if (i == fixed_index || nodes_[i].in_window) {
      anchored_components.insert(components.find(i));
    }
  }
  for (size_t i : free_nodes) {
    if (anchored_components.count(components.find(i)) == 0) {
      throw Error(ErrorCode::kNotConnected,
                  "node " + std::to_string(nodes_[i].id) +
                      " cannot reach the fixed node or any in-window node");
    }
  }

  OptimizeReport report;
  report.initial_chi2 = chi2();
  report.final_chi2 = report.initial_chi2;
  if (free_nodes.empty() || report.initial_chi2 < 1e-24) {
    return report;  // already consistent (or nothing to optimize)
  }

  const int m = static_cast<int>(free_nodes.size());
  auto chi2_of = [this](const std::vector<Sim3>& estimates) -> std::optional<double> {
    double total = 0.0;
    for (const PoseGraphEdge& edge : edges_) {
      try {
        const Vec7 r = edge_residual(edge.measurement, estimates[index_of(edge.id_i)],
                                     estimates[index_of(edge.id_j)]);
        total += r.dot(information_diagonal(edge).cwiseProduct(r));
      } catch (const Error& e) {
        if (e.code() == ErrorCode::kAngleNearPi) return std::nullopt;  // reject the step
        throw;
      }
    }
    return total;
  };

  std::vector<Sim3> estimates;
  estimates.reserve(nodes_.size());
  for (const PoseGraphNode& n : nodes_) estimates.push_back(n.estimate);

  double current_chi2 = report.initial_chi2;
  double lambda = 0.0;
  int consecutive_rejections = 0;
  for (int iter = 0; iter < options.max_iterations; ++iter) {
    // Assemble the block-sparse normal equations (lower triangle).
    std::vector<std::map<int, Mat7>> hessian(static_cast<size_t>(m));
    VecX gradient = VecX::Zero(7 * m);
    for (const PoseGraphEdge& edge : edges_) {
      const size_t ni = index_of(edge.id_i);
      const size_t nj = index_of(edge.id_j);
      const int bi = param_of[ni];
      const int bj = param_of[nj];
      if (bi < 0 && bj < 0) continue;
      const Sim3 k = edge.measurement * estimates[nj].inverse();
      const Vec7 r = (k * estimates[ni]).log();
      const Vec7 info = information_diagonal(edge);
      const Mat7 j_left = sim3_left_jacobian(r);
      const Mat7 j_i = j_left.partialPivLu().solve(k.adjoint());
      // J_j = -J_i: the measurement enters through K on both sides.
      if (bi >= 0) {
        block_at(hessian[static_cast<size_t>(bi)], bi) +=
            j_i.transpose() * info.asDiagonal() * j_i;
        gradient.segment<7>(7 * bi) += j_i.transpose() * info.cwiseProduct(r);
      }
      if (bj >= 0) {
        block_at(hessian[static_cast<size_t>(bj)], bj) +=
            j_i.transpose() * info.asDiagonal() * j_i;
        gradient.segment<7>(7 * bj) -= j_i.transpose() * info.cwiseProduct(r);
      }
      if (bi >= 0 && bj >= 0) {
        const int row = std::max(bi, bj);
        const int col = std::min(bi, bj);
        // H(row, col) = J_row^T * info * J_col with J_j = -J_i.
        const Mat7 cross = -(j_i.transpose() * info.asDiagonal() * j_i);
        block_at(hessian[static_cast<size_t>(col)], row) += cross;
      }
    }

    bool accepted = false;
    for (int attempt = 0; attempt < 10; ++attempt) {
      std::vector<std::map<int, Mat7>> damped = hessian;
      for (int p = 0; p < m; ++p) {
        Mat7& diag = block_at(damped[static_cast<size_t>(p)], p);
        for (int d = 0; d < 7; ++d) {
          diag(d, d) += lambda * std::max(diag(d, d), 1e-12);
        }
      }
      BlockCholesky cholesky;
      if (!cholesky.factor(damped)) {
        lambda = lambda == 0.0 ? 1e-6 : lambda * 10.0;
        if (attempt == 9) {
          throw Error(ErrorCode::kSolverFailure,
                      "block Cholesky failed even under maximum damping");
        }
        continue;
      }
      const VecX delta = cholesky.solve(-gradient);
      if (!delta.allFinite()) {
        lambda = lambda == 0.0 ? 1e-6 : lambda * 10.0;
        continue;
      }
      std::vector<Sim3> proposal = estimates;
      for (int p = 0; p < m; ++p) {
        proposal[free_nodes[static_cast<size_t>(p)]] =
            Sim3::exp(delta.segment<7>(7 * p)) * estimates[free_nodes[static_cast<size_t>(p)]];
      }
      const std::optional<double> proposal_chi2 = chi2_of(proposal);
      if (proposal_chi2 && *proposal_chi2 <= current_chi2) {
        const double decrease = current_chi2 - *proposal_chi2;
        estimates = std::move(proposal);
        current_chi2 = *proposal_chi2;
        lambda /= 3.0;
        accepted = true;
        ++report.iterations;
        if (decrease < options.relative_decrease * std::max(current_chi2, 1e-300) ||
            current_chi2 < 1e-24) {
          iter = options.max_iterations;  // converged
        }
        break;
      }
      lambda = lambda == 0.0 ? 1e-6 : lambda * 10.0;
    }
    if (!accepted) {
      ++consecutive_rejections;
      if (consecutive_rejections >= 2) {
        break;  // keep the best estimates found so far
      }
    } else {
      consecutive_rejections = 0;
    }
  }

  for (size_t p = 0; p < free_nodes.size(); ++p) {
    nodes_[free_nodes[p]].estimate = estimates[free_nodes[p]];
  }
  report.final_chi2 = current_chi2;
  return report;
}

void PoseGraph::save(const std::string& path) const {
  std::string out;
  char buf[64];
  for (const PoseGraphNode& node : nodes_) {
    out += "VERTEX_SIM3";
    std::snprintf(buf, sizeof(buf), " %llu", static_cast<unsigned long long>(node.id));
    out += buf;
    append_pose_fields(out, node.estimate);
    if (node.fixed) out += " FIXED";
    out += "\n";
  }
  for (const PoseGraphEdge& edge : edges_) {
    out += "EDGE_SIM3";
    std::snprintf(buf, sizeof(buf), " %llu %llu", static_cast<unsigned long long>(edge.id_i),
                  static_cast<unsigned long long>(edge.id_j));
    out += buf;
    append_pose_fields(out, edge.measurement);
    std::snprintf(buf, sizeof(buf), " %.9f %.9f %.9f", edge.w_t, edge.w_r, edge.w_s);
    out += buf;
    out += edge.kind == EdgeKind::kCovisibility ? " COVIS" : " LOOP";
    out += "\n";
  }
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) {
    throw Error(ErrorCode::kIo, "cannot open for writing: " + path);
  }
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) {
    throw Error(ErrorCode::kIo, "write failed: " + path);
  }
}

PoseGraph PoseGraph::load(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) {
    throw Error(ErrorCode::kIo, "cannot open: " + path);
  }
  PoseGraph graph;
  std::string line;
  int line_number = 0;
  while (std::getline(file, line)) {
    ++line_number;
    if (line.empty()) continue;
    std::istringstream stream(line);
    std::string tag;
    stream >> tag;
    const std::string where = path + ":" + std::to_string(line_number);
    if (tag == "VERTEX_SIM3") {
      uint64_t id = 0;
      double f[8];
      if (!(stream >> id >> f[0] >> f[1] >> f[2] >> f[3] >> f[4] >> f[5] >> f[6] >> f[7])) {
        throw Error(ErrorCode::kFormat, "malformed vertex at " + where);
      }
      std::string flag;
      bool fixed = false;
      if (stream >> flag) {
        if (flag != "FIXED") {
          throw Error(ErrorCode::kFormat, "unexpected vertex token '" + flag + "' at " + where);
        }
        fixed = true;
      }
      if (graph.has_node(id)) {
        throw Error(ErrorCode::kFormat, "duplicate vertex id at " + where);
      }
      graph.add_node(id, pose_from_fields(f));
      graph.set_fixed(id, fixed);
    } else if (tag == "EDGE_SIM3") {
      uint64_t id_i = 0;
      uint64_t id_j = 0;
      double f[8];
      double w[3];
      std::string kind_token;
      if (!(stream >> id_i >> id_j >> f[0] >> f[1] >> f[2] >> f[3] >> f[4] >> f[5] >> f[6] >>
            f[7] >> w[0] >> w[1] >> w[2] >> kind_token)) {
        throw Error(ErrorCode::kFormat, "malformed edge at " + where);
      }
      EdgeKind kind;
      if (kind_token == "COVIS") {
        kind = EdgeKind::kCovisibility;
      } else if (kind_token == "LOOP") {
        kind = EdgeKind::kLoop;
      } else {
        throw Error(ErrorCode::kFormat, "unknown edge kind '" + kind_token + "' at " + where);
      }
      if (!graph.has_node(id_i) || !graph.has_node(id_j)) {
        throw Error(ErrorCode::kFormat, "edge references missing vertex at " + where);
      }
      try {
        graph.add_edge(id_i, id_j, pose_from_fields(f), w[0], w[1], w[2], kind);
      } catch (const std::invalid_argument& e) {
        throw Error(ErrorCode::kFormat, std::string(e.what()) + " at " + where);
      }
    } else {
      throw Error(ErrorCode::kFormat, "unknown record '" + tag + "' at " + where);
    }
  }
  return graph;
}

}  // namespace revisit
