#include <revisit/bow.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <mutex>
#include <set>

#include <revisit/error.hpp>
#include <revisit/rng.hpp>

namespace revisit {

namespace {

constexpr char kVocabMagic[8] = {'L', 'D', 'S', 'O', 'V', 'O', 'C', '1'};
constexpr int kMaxClusterIterations = 10;

struct ClusterResult {
  std::vector<BinaryDescriptor> centers;
  std::vector<std::vector<uint32_t>> members;  // indices into the flat set
};

BinaryDescriptor majority_center(const std::vector<BinaryDescriptor>& all,
                                 const std::vector<uint32_t>& members) {
  BinaryDescriptor center;
  const size_t count = members.size();
  for (int bit = 0; bit < 256; ++bit) {
    size_t ones = 0;
    const size_t word = static_cast<size_t>(bit) / 64;
    const uint64_t mask = uint64_t{1} << (bit % 64);
    for (uint32_t m : members) {
      if (all[m].bits[word] & mask) {
        ++ones;
      }
    }
    if (2 * ones > count) {  // exact tie -> 0
      center.bits[word] |= mask;
    }
  }
  return center;
}

// k-medians under Hamming distance with bitwise-majority centers. Empty
// clusters are reseeded from the member farthest from its assigned center
// (ties toward the earlier member). Deterministic for a fixed rng state.
ClusterResult k_medians(const std::vector<BinaryDescriptor>& all,
                        const std::vector<uint32_t>& indices, int branching, Rng& rng) {
  const size_t n = indices.size();
  const size_t k = std::min<size_t>(static_cast<size_t>(branching), n);

  // Distinct random members seed the centers (partial Fisher-Yates).
  std::vector<uint32_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = static_cast<uint32_t>(i);
  ClusterResult result;
  result.centers.reserve(k);
  for (size_t i = 0; i < k; ++i) {
    const size_t j = i + static_cast<size_t>(rng.next_below(static_cast<uint64_t>(n - i)));
    std::swap(order[i], order[j]);
    result.centers.push_back(all[indices[order[i]]]);
  }

  std::vector<size_t> assignment(n, 0);
  std::vector<size_t> previous;
  for (int iter = 0; iter < kMaxClusterIterations; ++iter) {
    // Assign to the nearest center; strict < keeps the smallest index on ties.
    for (size_t i = 0; i < n; ++i) {
      uint32_t best = UINT32_MAX;
      size_t best_c = 0;
      for (size_t c = 0; c < k; ++c) {
        const uint32_t d = hamming_distance(all[indices[i]], result.centers[c]);
        if (d < best) {
          best = d;
          best_c = c;
        }
      }
      assignment[i] = best_c;
    }

    // Reseed empty clusters from the globally farthest member of any cluster
    // that can spare one.
    std::vector<size_t> cluster_size(k, 0);
    for (size_t i = 0; i < n; ++i) ++cluster_size[assignment[i]];
    for (size_t c = 0; c < k; ++c) {
      if (cluster_size[c] != 0) continue;
      size_t victim = SIZE_MAX;
      uint32_t worst = 0;
      for (size_t i = 0; i < n; ++i) {
        if (cluster_size[assignment[i]] < 2) continue;
        const uint32_t d = hamming_distance(all[indices[i]], result.centers[assignment[i]]);
        if (victim == SIZE_MAX || d > worst) {
          worst = d;
          victim = i;
        }
      }
      if (victim == SIZE_MAX) break;  // cannot happen while n >= k
      --cluster_size[assignment[victim]];
      assignment[victim] = c;
      cluster_size[c] = 1;
      result.centers[c] = all[indices[victim]];
    }

    if (assignment == previous) {
      break;
    }
    previous = assignment;

    for (size_t c = 0; c < k; ++c) {
      std::vector<uint32_t> members;
      for (size_t i = 0; i < n; ++i) {
        if (assignment[i] == c) members.push_back(static_cast<uint32_t>(i));
      }
      if (!members.empty()) {
        std::vector<uint32_t> flat;
        flat.reserve(members.size());
        for (uint32_t m : members) flat.push_back(indices[m]);
        result.centers[c] = majority_center(all, flat);
      }
    }
  }

  // Final assignment against the final centers, so that greedy descent at
  // query time reproduces the build-time partition.
  result.members.assign(k, {});
  for (size_t i = 0; i < n; ++i) {
    uint32_t best = UINT32_MAX;
    size_t best_c = 0;
    for (size_t c = 0; c < k; ++c) {
      const uint32_t d = hamming_distance(all[indices[i]], result.centers[c]);
      if (d < best) {
        best = d;
        best_c = c;
      }
    }
    result.members[best_c].push_back(indices[i]);
  }
  return result;
}

void put_bytes(std::string& out, const void* data, size_t len) {
  out.append(static_cast<const char*>(data), len);
}

void put_u32(std::string& out, uint32_t v) {
  uint8_t b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<uint8_t>(v >> (8 * i));
  put_bytes(out, b, 4);
}

void put_u64(std::string& out, uint64_t v) {
  uint8_t b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<uint8_t>(v >> (8 * i));
  put_bytes(out, b, 8);
}

class ByteReader {
 public:
  ByteReader(const std::string& data, const std::string& path) : data_(data), path_(path) {}

  void read(void* out, size_t len) {
    if (pos_ + len > data_.size()) {
      throw Error(ErrorCode::kFormat, "truncated vocabulary file: " + path_);
    }
    std::memcpy(out, data_.data() + pos_, len);
    pos_ += len;
  }

  uint32_t u32() {
    uint8_t b[4];
    read(b, 4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
    return v;
  }

  uint64_t u64() {
    uint8_t b[8];
    read(b, 8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
    return v;
  }

  bool at_end() const { return pos_ == data_.size(); }

 private:
  const std::string& data_;
  std::string path_;
  size_t pos_ = 0;
};

}  // namespace

double bow_score(const BowVector& a, const BowVector& b) {
  double diff = 0.0;
  size_t i = 0;
  size_t j = 0;
  while (i < a.size() || j < b.size()) {
    if (j == b.size() || (i < a.size() && a[i].first < b[j].first)) {
      diff += std::abs(a[i].second);
      ++i;
    } else if (i == a.size() || b[j].first < a[i].first) {
      diff += std::abs(b[j].second);
      ++j;
    } else {
      diff += std::abs(a[i].second - b[j].second);
      ++i;
      ++j;
    }
  }
  return 1.0 - 0.5 * diff;
}

BowVocabulary BowVocabulary::build(
    const std::vector<std::vector<BinaryDescriptor>>& training_images, int branching, int depth,
    uint64_t seed) {
  if (branching < 2 || depth < 1) {
    throw Error(ErrorCode::kInsufficientData, "vocabulary needs branching >= 2 and depth >= 1");
  }
  std::vector<BinaryDescriptor> all;
  for (const auto& image : training_images) {
    all.insert(all.end(), image.begin(), image.end());
  }
  if (all.size() < static_cast<size_t>(branching)) {
    throw Error(ErrorCode::kInsufficientData,
                "vocabulary training needs at least `branching` descriptors");
  }

  BowVocabulary vocab;
  vocab.branching_ = branching;
  vocab.depth_ = depth;
  vocab.nodes_.emplace_back();  // root

  Rng rng(seed);
  // Iterative depth-first expansion; children are created in cluster order so
  // ids (and therefore word ids) are deterministic.
  struct Pending {
    int32_t node;
    std::vector<uint32_t> indices;
    int level;
  };
  std::vector<Pending> stack;
  {
    std::vector<uint32_t> root_indices(all.size());
    for (size_t i = 0; i < all.size(); ++i) root_indices[i] = static_cast<uint32_t>(i);
    stack.push_back({0, std::move(root_indices), 0});
  }
  while (!stack.empty()) {
    Pending item = std::move(stack.back());
    stack.pop_back();
    Node& node = vocab.nodes_[static_cast<size_t>(item.node)];
    if (item.level == depth || item.indices.size() == 1) {
      node.is_leaf = true;
      node.word_id = static_cast<uint32_t>(vocab.leaf_nodes_.size());
      vocab.leaf_nodes_.push_back(static_cast<uint32_t>(item.node));
      continue;
    }
    ClusterResult clusters = k_medians(all, item.indices, branching, rng);
    std::vector<Pending> children;
    for (size_t c = 0; c < clusters.centers.size(); ++c) {
      if (clusters.members[c].empty()) continue;
      const int32_t child_id = static_cast<int32_t>(vocab.nodes_.size());
      Node child;
      child.parent = item.node;
      child.center = clusters.centers[c];
      vocab.nodes_.push_back(child);
      vocab.nodes_[static_cast<size_t>(item.node)].children.push_back(child_id);
      children.push_back({child_id, std::move(clusters.members[c]), item.level + 1});
    }
    // Push in reverse so children are expanded (and leaves numbered) in
    // cluster order.
    for (auto it = children.rbegin(); it != children.rend(); ++it) {
      stack.push_back(std::move(*it));
    }
  }

  // IDF over training images: weight = ln(N / n_i) with N the number of
  // training images and n_i the number of images containing word i.
  const size_t n_images = training_images.size();
  std::vector<size_t> doc_count(vocab.leaf_nodes_.size(), 0);
  for (const auto& image : training_images) {
    std::set<uint32_t> words;
    for (const auto& d : image) {
      words.insert(vocab.quantize(d));
    }
    for (uint32_t w : words) ++doc_count[w];
  }
  for (size_t w = 0; w < vocab.leaf_nodes_.size(); ++w) {
    const double weight =
        doc_count[w] == 0 ? 0.0
                          : std::log(static_cast<double>(n_images) / static_cast<double>(doc_count[w]));
    vocab.nodes_[vocab.leaf_nodes_[w]].weight = weight;
  }
  return vocab;
}

uint32_t BowVocabulary::quantize(const BinaryDescriptor& descriptor) const {
  if (nodes_.empty()) {
    throw Error(ErrorCode::kEmptyInput, "vocabulary has no nodes");
  }
  size_t node = 0;
  while (!nodes_[node].is_leaf) {
    const auto& children = nodes_[node].children;
    uint32_t best = UINT32_MAX;
    size_t best_child = 0;
    for (int32_t child : children) {
      const uint32_t d = hamming_distance(descriptor, nodes_[static_cast<size_t>(child)].center);
      if (d < best) {
        best = d;
        best_child = static_cast<size_t>(child);
      }
    }
    node = best_child;
  }
  return nodes_[node].word_id;
}

BowVector BowVocabulary::transform(const std::vector<BinaryDescriptor>& descriptors) const {
  if (descriptors.empty()) {
    throw Error(ErrorCode::kEmptyInput, "cannot transform an empty descriptor list");
  }
  std::map<uint32_t, double> accum;
  for (const auto& d : descriptors) {
    const uint32_t word = quantize(d);
    const double idf = nodes_[leaf_nodes_[word]].weight;
    if (idf > 0.0) {
      accum[word] += idf;
    }
  }
  double total = 0.0;
  for (const auto& [word, value] : accum) total += value;
  BowVector out;
  if (total <= 0.0) {
    return out;
  }
  out.reserve(accum.size());
  for (const auto& [word, value] : accum) {
    out.emplace_back(word, value / total);
  }
  return out;
}

double BowVocabulary::word_weight(uint32_t word_id) const {
  return nodes_.at(leaf_nodes_.at(word_id)).weight;
}

void BowVocabulary::save(const std::string& path) const {
  std::string blob;
  put_bytes(blob, kVocabMagic, 8);
  put_u32(blob, static_cast<uint32_t>(branching_));
  put_u32(blob, static_cast<uint32_t>(depth_));
  put_u64(blob, nodes_.size());
  for (const auto& node : nodes_) {
    put_u64(blob, static_cast<uint64_t>(static_cast<int64_t>(node.parent)));
    for (uint64_t w : node.center.bits) put_u64(blob, w);
    uint64_t weight_bits = 0;
    static_assert(sizeof(double) == 8);
    std::memcpy(&weight_bits, &node.weight, 8);
    put_u64(blob, weight_bits);
    blob.push_back(node.is_leaf ? '\1' : '\0');
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw Error(ErrorCode::kIo, "cannot open for writing: " + path);
  }
  out.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  if (!out) {
    throw Error(ErrorCode::kIo, "write failed: " + path);
  }
}

BowVocabulary BowVocabulary::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorCode::kIo, "cannot open: " + path);
  }
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  ByteReader reader(data, path);

  char magic[8];
  reader.read(magic, 8);
  if (std::memcmp(magic, kVocabMagic, 8) != 0) {
    throw Error(ErrorCode::kFormat, "bad vocabulary magic in " + path);
  }
  BowVocabulary vocab;
  vocab.branching_ = static_cast<int>(reader.u32());
  vocab.depth_ = static_cast<int>(reader.u32());
  const uint64_t count = reader.u64();
  vocab.nodes_.resize(count);
  for (uint64_t i = 0; i < count; ++i) {
    Node& node = vocab.nodes_[i];
    node.parent = static_cast<int32_t>(static_cast<int64_t>(reader.u64()));
    for (auto& w : node.center.bits) w = reader.u64();
    uint64_t weight_bits = reader.u64();
    std::memcpy(&node.weight, &weight_bits, 8);
    char leaf_flag = 0;
    reader.read(&leaf_flag, 1);
    node.is_leaf = leaf_flag != 0;
    if (i == 0) {
      if (node.parent != -1) {
        throw Error(ErrorCode::kFormat, "root node must have parent -1 in " + path);
      }
    } else {
      if (node.parent < 0 || static_cast<uint64_t>(node.parent) >= i) {
        throw Error(ErrorCode::kFormat, "node parent out of order in " + path);
      }
      vocab.nodes_[static_cast<size_t>(node.parent)].children.push_back(static_cast<int32_t>(i));
    }
  }
  if (!reader.at_end()) {
    throw Error(ErrorCode::kFormat, "trailing bytes in vocabulary file " + path);
  }
  for (uint64_t i = 0; i < count; ++i) {
    Node& node = vocab.nodes_[i];
    if (node.is_leaf) {
      node.word_id = static_cast<uint32_t>(vocab.leaf_nodes_.size());
      vocab.leaf_nodes_.push_back(static_cast<uint32_t>(i));
    } else if (node.children.empty()) {
      throw Error(ErrorCode::kFormat, "interior node without children in " + path);
    }
  }
  return vocab;
}

void KeyframeDatabase::insert(uint64_t keyframe_id, const BowVector& vector) {
  std::unique_lock lock(mutex_);
  auto [it, inserted] = entries_.emplace(keyframe_id, Entry{vector, false});
  if (!inserted) {
    throw std::invalid_argument("keyframe id inserted twice into the database");
  }
  for (const auto& [word, weight] : vector) {
    (void)weight;
    inverted_[word].push_back(keyframe_id);
  }
}

void KeyframeDatabase::mark_marginalized(uint64_t keyframe_id) {
  std::unique_lock lock(mutex_);
  auto it = entries_.find(keyframe_id);
  if (it == entries_.end()) {
    throw Error(ErrorCode::kUnknownKeyframe,
                "cannot marginalize keyframe " + std::to_string(keyframe_id));
  }
  it->second.marginalized = true;
}

bool KeyframeDatabase::contains(uint64_t keyframe_id) const {
  std::shared_lock lock(mutex_);
  return entries_.count(keyframe_id) != 0;
}

size_t KeyframeDatabase::size() const {
  std::shared_lock lock(mutex_);
  return entries_.size();
}

std::vector<QueryResult> KeyframeDatabase::query(const BowVector& vector, size_t max_results,
                                                 const std::vector<uint64_t>& exclude) const {
  std::shared_lock lock(mutex_);
  // Candidates: marginalized keyframes sharing at least one word. Keyframes
  // sharing none would score exactly 0 < min_score, so the index loses no
  // valid result.
  std::vector<uint64_t> candidates;
  for (const auto& [word, weight] : vector) {
    (void)weight;
    auto it = inverted_.find(word);
    if (it == inverted_.end()) continue;
    candidates.insert(candidates.end(), it->second.begin(), it->second.end());
  }
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

  std::vector<QueryResult> results;
  for (uint64_t id : candidates) {
    if (std::find(exclude.begin(), exclude.end(), id) != exclude.end()) continue;
    const Entry& entry = entries_.at(id);
    if (!entry.marginalized) continue;
    const double score = bow_score(vector, entry.vector);
    if (score >= min_score_) {
      results.push_back({id, score});
    }
  }
  std::sort(results.begin(), results.end(), [](const QueryResult& a, const QueryResult& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.keyframe_id < b.keyframe_id;
  });
  if (results.size() > max_results) {
    results.resize(max_results);
  }
  return results;
}

}  // namespace revisit
