#pragma once

#include <cstdint>
#include <shared_mutex>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <revisit/descriptor.hpp>

namespace revisit {

// Sparse visual-word vector: (word id, weight) sorted by word id, L1-normalized
// (empty if every quantized word has zero weight).
using BowVector = std::vector<std::pair<uint32_t, double>>;

// Similarity in [0, 1]: 1 - 0.5 * sum_i |a_i - b_i| over the word union.
// Identical normalized vectors score exactly 1.
double bow_score(const BowVector& a, const BowVector& b);

// Hierarchical vocabulary of binary descriptors: a k-ary tree built by
// repeated k-medians clustering (bitwise-majority centers), leaves are the
// visual words, weighted by inverse document frequency over the training set.
class BowVocabulary {
 public:
  struct Node {
    int32_t parent = -1;              // -1 for the root
    BinaryDescriptor center;          // undefined for the root
    double weight = 0.0;              // idf, leaves only
    bool is_leaf = false;
    uint32_t word_id = 0;             // valid when is_leaf
    std::vector<int32_t> children;    // creation order
  };

  // Builds the tree from per-image descriptor sets. Requires branching >= 2,
  // depth >= 1 and at least `branching` descriptors in total (throws
  // InsufficientData otherwise). Deterministic for a fixed seed.
  static BowVocabulary build(const std::vector<std::vector<BinaryDescriptor>>& training_images,
                             int branching, int depth, uint64_t seed);

  // Word id of the leaf reached by greedy nearest-center descent (ties toward
  // the earlier child).
  uint32_t quantize(const BinaryDescriptor& descriptor) const;

  // TF-IDF vector of an image given its descriptors (throws EmptyInput on an
  // empty list). Words with zero weight are dropped, so the result can be
  // empty even for non-empty input.
  BowVector transform(const std::vector<BinaryDescriptor>& descriptors) const;

  size_t word_count() const { return leaf_nodes_.size(); }
  double word_weight(uint32_t word_id) const;
  int branching() const { return branching_; }
  int depth() const { return depth_; }
  const std::vector<Node>& nodes() const { return nodes_; }

  // Binary serialization; load(save(x)) reproduces x exactly and a second
  // save is byte-identical.
  void save(const std::string& path) const;
  static BowVocabulary load(const std::string& path);

 private:
  int branching_ = 0;
  int depth_ = 0;
  std::vector<Node> nodes_;
  std::vector<uint32_t> leaf_nodes_;  // word id -> node index
};

struct QueryResult {
  uint64_t keyframe_id = 0;
  double score = 0.0;
};

// Keyframe recognition database. Keyframes are inserted as they are created
// but become query candidates only once marked marginalized. An inverted
// index (word -> keyframe ids) collects candidates sharing at least one word;
// every candidate is then scored with bow_score, so results match an
// exhaustive scan exactly. Thread-safe: one writer, many readers.
class KeyframeDatabase {
 public:
  explicit KeyframeDatabase(double min_score = 0.05) : min_score_(min_score) {}

  void insert(uint64_t keyframe_id, const BowVector& vector);
  void mark_marginalized(uint64_t keyframe_id);  // throws UnknownKeyframe
  bool contains(uint64_t keyframe_id) const;
  size_t size() const;

  // Top scoring marginalized keyframes (score >= min_score) not in `exclude`,
  // best first; equal scores ordered by ascending id. An empty query vector
  // (and any keyframe stored with an empty vector) never matches: the score
  // is defined on normalized, hence non-empty, vectors.
  std::vector<QueryResult> query(const BowVector& vector, size_t max_results,
                                 const std::vector<uint64_t>& exclude = {}) const;

 private:
  struct Entry {
    BowVector vector;
    bool marginalized = false;
  };

  double min_score_;
  mutable std::shared_mutex mutex_;
  std::unordered_map<uint64_t, Entry> entries_;
  std::unordered_map<uint32_t, std::vector<uint64_t>> inverted_;  // insertion order
};

}  // namespace revisit
