#include <revisit/descriptor.hpp>

#include <bit>
#include <cmath>
#include <random>

#include <revisit/error.hpp>

namespace revisit {

namespace {

constexpr int kPatternRadius = 13;   // comparison offsets stay within this
constexpr int kOrientRadius = 15;    // centroid patch radius
constexpr int kBorder = 16;          // required distance from image borders
// Intensity pairs closer than this carry noise, not structure; treating them
// as equal keeps their bits from flipping between two renders of one scene.
constexpr int kCompareMargin = 2;

// One column of the circular orientation patch: largest |dx| at a given dy.
int circle_half_width(int dy) {
  return static_cast<int>(
      std::floor(std::sqrt(static_cast<double>(kOrientRadius * kOrientRadius - dy * dy))));
}

std::array<std::array<int8_t, 4>, 256> generate_pattern() {
  // std::mt19937 output is fully specified, so the table is identical on
  // every platform/build. Offsets are drawn uniformly on the integer disc of
  // radius 13 by rejection; degenerate pairs (p == q) are re-drawn.
  std::mt19937 engine(0x5eedf00dU);
  auto draw_coord = [&engine]() {
    return static_cast<int>(engine() % (2 * kPatternRadius + 1)) - kPatternRadius;
  };
  auto draw_point = [&](int& x, int& y) {
    do {
      x = draw_coord();
      y = draw_coord();
    } while (x * x + y * y > kPatternRadius * kPatternRadius);
  };
  std::array<std::array<int8_t, 4>, 256> pattern{};
  for (auto& pair : pattern) {
    int x1 = 0, y1 = 0, x2 = 0, y2 = 0;
    do {
      draw_point(x1, y1);
      draw_point(x2, y2);
    } while (x1 == x2 && y1 == y2);
    pair = {static_cast<int8_t>(x1), static_cast<int8_t>(y1), static_cast<int8_t>(x2),
            static_cast<int8_t>(y2)};
  }
  return pattern;
}

void check_border(const GrayImage& image, int u, int v) {
  if (u < kBorder || v < kBorder || u > image.width - 1 - kBorder ||
      v > image.height - 1 - kBorder) {
    throw Error(ErrorCode::kBorderViolation,
                "descriptor requires the point at least 16 px from every image border");
  }
}

}  // namespace

const std::array<std::array<int8_t, 4>, 256>& descriptor_pattern() {
  static const std::array<std::array<int8_t, 4>, 256> pattern = generate_pattern();
  return pattern;
}

uint32_t hamming_distance(const BinaryDescriptor& a, const BinaryDescriptor& b) {
  uint32_t d = 0;
  for (int i = 0; i < 4; ++i) {
    d += static_cast<uint32_t>(std::popcount(a.bits[i] ^ b.bits[i]));
  }
  return d;
}

double patch_orientation(const GrayImage& image, int u, int v) {
  check_border(image, u, v);
  // Integer image moments are exact, so the orientation is bit-reproducible.
  int64_t m10 = 0;
  int64_t m01 = 0;
  for (int dy = -kOrientRadius; dy <= kOrientRadius; ++dy) {
    const int half = circle_half_width(dy);
    for (int dx = -half; dx <= half; ++dx) {
      const int64_t intensity = image.at(u + dx, v + dy);
      m10 += dx * intensity;
      m01 += dy * intensity;
    }
  }
  if (m10 == 0 && m01 == 0) {
    return 0.0;
  }
  return std::atan2(static_cast<double>(m01), static_cast<double>(m10));
}

BinaryDescriptor describe(const GrayImage& image, int u, int v) {
  check_border(image, u, v);
  const double angle = patch_orientation(image, u, v);
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  // Rotation preserves the offset norm (<= 13), so rounded samples stay
  // within the 16 px border margin.
  auto sample = [&](int x, int y) {
    const int rx = static_cast<int>(std::lround(c * x - s * y));
    const int ry = static_cast<int>(std::lround(s * x + c * y));
    return image.at(u + rx, v + ry);
  };
  const auto& pattern = descriptor_pattern();
  BinaryDescriptor out;
  for (int bit = 0; bit < 256; ++bit) {
    const auto& p = pattern[static_cast<size_t>(bit)];
    if (static_cast<int>(sample(p[0], p[1])) + kCompareMargin <
        static_cast<int>(sample(p[2], p[3]))) {
      out.bits[static_cast<size_t>(bit) / 64] |= uint64_t{1} << (bit % 64);
    }
  }
  return out;
}

std::vector<FeatureMatch> match(const std::vector<BinaryDescriptor>& ref,
                                const std::vector<BinaryDescriptor>& cur,
                                const MatchConfig& config) {
  std::vector<FeatureMatch> matches;
  if (ref.empty() || cur.empty()) {
    return matches;
  }
  const uint32_t kNone = UINT32_MAX;

  // Best cur index per ref descriptor, with the second-best distance for the
  // ratio test. Ties keep the smaller index (first hit wins on strict <).
  std::vector<int> best_cur(ref.size(), -1);
  std::vector<uint32_t> best_dist(ref.size(), kNone);
  std::vector<uint32_t> second_dist(ref.size(), kNone);
  // Best ref index per cur descriptor for the mutual check.
  std::vector<int> best_ref(cur.size(), -1);
  std::vector<uint32_t> best_ref_dist(cur.size(), kNone);

  for (size_t i = 0; i < ref.size(); ++i) {
    for (size_t j = 0; j < cur.size(); ++j) {
      const uint32_t d = hamming_distance(ref[i], cur[j]);
      if (d < best_dist[i]) {
        second_dist[i] = best_dist[i];
        best_dist[i] = d;
        best_cur[i] = static_cast<int>(j);
      } else if (d < second_dist[i]) {
        second_dist[i] = d;
      }
      if (d < best_ref_dist[j]) {
        best_ref_dist[j] = d;
        best_ref[j] = static_cast<int>(i);
      }
    }
  }

  for (size_t i = 0; i < ref.size(); ++i) {
    if (best_cur[i] < 0 || best_dist[i] > config.max_distance) {
      continue;
    }
    if (second_dist[i] != kNone &&
        static_cast<double>(best_dist[i]) > config.ratio * static_cast<double>(second_dist[i])) {
      continue;
    }
    const int j = best_cur[i];
    if (best_ref[static_cast<size_t>(j)] != static_cast<int>(i)) {
      continue;  // not mutual
    }
    matches.push_back({static_cast<int>(i), j, best_dist[i]});
  }
  return matches;
}

}  // namespace revisit
