#pragma once

#include <cstdint>
#include <vector>

#include <revisit/image.hpp>

namespace revisit {

enum class PointKind : uint8_t { kCorner = 0, kGradient = 1 };

struct SelectedPoint {
  int u = 0;
  int v = 0;
  PointKind kind = PointKind::kCorner;
  // Min-eigenvalue score for corners, gradient magnitude for gradient picks.
  double score = 0.0;
};

struct SelectConfig {
  int budget = 2000;        // total points per image
  int corner_quota = 500;   // corners selected first, rest gradient picks
  int shi_tomasi_window = 2;      // half window; patch is (2w+1)^2
  double corner_threshold = 20.0; // min acceptable min-eigenvalue
  int nms_radius = 10;            // no two corners closer than this
  double gradient_add = 7.0;      // regional median |grad| + this
  int border_margin = 16;         // keep points this far from every border
};

// Min eigenvalue of the 2x2 structure tensor summed over the
// (2*window+1)^2 patch, central-difference gradients on raw intensities.
// Throws BorderViolation unless u, v are at least window+1 from every border.
double shi_tomasi_score(const GrayImage& image, int u, int v, int window);

// Corner-first point selection: up to corner_quota NMS-surviving Shi-Tomasi
// corners, remainder filled with per-block max-gradient picks over an
// adaptive grid (regional 32x32 median + gradient_add threshold, block size
// re-adapted up to 3 times to approach the budget). Deterministic; ties
// resolved in raster order. Throws DegenerateImage when nothing is
// selectable.
std::vector<SelectedPoint> select_points(const GrayImage& image,
                                         const SelectConfig& config);

}  // namespace revisit
