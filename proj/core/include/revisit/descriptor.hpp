#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include <revisit/image.hpp>

namespace revisit {

// 256-bit binary patch descriptor.
struct BinaryDescriptor {
  std::array<uint64_t, 4> bits{};

  bool operator==(const BinaryDescriptor&) const = default;
};

uint32_t hamming_distance(const BinaryDescriptor& a, const BinaryDescriptor& b);

// Dominant patch orientation from the intensity centroid over a radius-15
// circular patch; 0 for patches with a vanishing centroid (flat images).
double patch_orientation(const GrayImage& image, int u, int v);

// Oriented binary descriptor: 256 intensity comparisons on a fixed random
// pattern (offsets within radius 13, generated once from a fixed seed),
// rotated by the patch orientation. Requires u, v at least 16 px from every
// border (throws BorderViolation otherwise).
BinaryDescriptor describe(const GrayImage& image, int u, int v);

// The comparison pattern as (x1, y1, x2, y2) per bit; exposed for tests.
const std::array<std::array<int8_t, 4>, 256>& descriptor_pattern();

struct FeatureMatch {
  int ref_index = 0;
  int cur_index = 0;
  uint32_t distance = 0;
};

struct MatchConfig {
  uint32_t max_distance = 64;  // reject weaker matches outright
  double ratio = 0.9;          // best must be <= ratio * second-best
};

// Mutual nearest-neighbour matching with distance and ratio gates. Injective
// on both sides; ties resolved toward smaller indices; output sorted by
// ref_index.
std::vector<FeatureMatch> match(const std::vector<BinaryDescriptor>& ref,
                                const std::vector<BinaryDescriptor>& cur,
                                const MatchConfig& config);

}  // namespace revisit
