#include <revisit/pixel_select.hpp>

#include <algorithm>
#include <cmath>

#include <revisit/error.hpp>

namespace revisit {

namespace {

constexpr int kTileSize = 32;  // region size for the adaptive gradient threshold

inline double min_eigenvalue(double a, double b, double c) {
  const double tr = a + c;
  const double det_term = std::sqrt((a - c) * (a - c) + 4.0 * b * b);
  return 0.5 * (tr - det_term);
}

struct GradientMaps {
  int width = 0;
  int height = 0;
  std::vector<double> gx, gy, mag;

  double at(const std::vector<double>& m, int x, int y) const {
    return m[static_cast<size_t>(y) * width + x];
  }
};

GradientMaps compute_gradients(const GrayImage& img) {
  GradientMaps g;
  g.width = img.width;
  g.height = img.height;
  const size_t n = static_cast<size_t>(img.width) * img.height;
  g.gx.assign(n, 0.0);
  g.gy.assign(n, 0.0);
  g.mag.assign(n, 0.0);
  for (int y = 1; y < img.height - 1; ++y) {
    for (int x = 1; x < img.width - 1; ++x) {
      const size_t i = static_cast<size_t>(y) * img.width + x;
      const double dx = 0.5 * (img.at(x + 1, y) - img.at(x - 1, y));
      const double dy = 0.5 * (img.at(x, y + 1) - img.at(x, y - 1));
      g.gx[i] = dx;
      g.gy[i] = dy;
      g.mag[i] = std::sqrt(dx * dx + dy * dy);
    }
  }
  return g;
}

// Summed-area table with a zero top/left border row.
struct Integral {
  int width = 0, height = 0;
  std::vector<double> sum;

  void build(const std::vector<double>& values, int w, int h) {
    width = w;
    height = h;
    sum.assign(static_cast<size_t>(w + 1) * (h + 1), 0.0);
    for (int y = 0; y < h; ++y) {
      double row = 0.0;
      for (int x = 0; x < w; ++x) {
        row += values[static_cast<size_t>(y) * w + x];
        sum[static_cast<size_t>(y + 1) * (w + 1) + (x + 1)] =
            sum[static_cast<size_t>(y) * (w + 1) + (x + 1)] + row;
      }
    }
  }

  // Inclusive rectangle [x0,x1] x [y0,y1].
  double rect(int x0, int y0, int x1, int y1) const {
    const int w1 = width + 1;
    return sum[static_cast<size_t>(y1 + 1) * w1 + (x1 + 1)] -
           sum[static_cast<size_t>(y0) * w1 + (x1 + 1)] -
           sum[static_cast<size_t>(y1 + 1) * w1 + x0] +
           sum[static_cast<size_t>(y0) * w1 + x0];
  }
};

struct Candidate {
  double score;
  int u, v;
};

// Two-stage NMS: keep each radius-sized cell's best candidate, then greedily
// (score-descending) drop any survivor within the euclidean radius of an
// already kept, stronger one. Raster order breaks ties throughout.
std::vector<Candidate> suppress(const std::vector<Candidate>& cands, int radius,
                                int width, int height) {
  const int cw = width / radius + 1;
  const int ch = height / radius + 1;
  std::vector<int> cell_best(static_cast<size_t>(cw) * ch, -1);
  for (size_t i = 0; i < cands.size(); ++i) {
    const size_t cell = static_cast<size_t>(cands[i].v / radius) * cw +
                        cands[i].u / radius;
    // Strict comparison keeps the earlier (raster-first) candidate on ties.
    if (cell_best[cell] < 0 || cands[i].score > cands[cell_best[cell]].score) {
      cell_best[cell] = static_cast<int>(i);
    }
  }
  std::vector<Candidate> maxima;
  for (int idx : cell_best) {
    if (idx >= 0) maxima.push_back(cands[idx]);
  }
  std::sort(maxima.begin(), maxima.end(), [](const Candidate& a, const Candidate& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.v != b.v) return a.v < b.v;
    return a.u < b.u;
  });

  std::vector<int> cell_kept(static_cast<size_t>(cw) * ch, -1);
  std::vector<Candidate> kept;
  const int r2 = radius * radius;
  for (const Candidate& c : maxima) {
    const int cu = c.u / radius, cv = c.v / radius;
    bool blocked = false;
    for (int gy = std::max(0, cv - 1); gy <= std::min(ch - 1, cv + 1) && !blocked; ++gy) {
      for (int gx = std::max(0, cu - 1); gx <= std::min(cw - 1, cu + 1); ++gx) {
        const int idx = cell_kept[static_cast<size_t>(gy) * cw + gx];
        if (idx < 0) continue;
        const int du = kept[idx].u - c.u;
        const int dv = kept[idx].v - c.v;
        if (du * du + dv * dv < r2) {
          blocked = true;
          break;
        }
      }
    }
    if (!blocked) {
      cell_kept[static_cast<size_t>(cv) * cw + cu] = static_cast<int>(kept.size());
      kept.push_back(c);
    }
  }
  return kept;
}

}  // namespace

double shi_tomasi_score(const GrayImage& image, int u, int v, int window) {
  if (window < 1) {
    throw Error(ErrorCode::kBorderViolation, "window must be >= 1");
  }
  const int need = window + 1;
  if (u < need || v < need || u >= image.width - need || v >= image.height - need) {
    throw Error(ErrorCode::kBorderViolation,
                "pixel too close to the border for the requested window");
  }
  double a = 0.0, b = 0.0, c = 0.0;
  for (int dy = -window; dy <= window; ++dy) {
    for (int dx = -window; dx <= window; ++dx) {
      const int x = u + dx, y = v + dy;
      const double gx = 0.5 * (image.at(x + 1, y) - image.at(x - 1, y));
      const double gy = 0.5 * (image.at(x, y + 1) - image.at(x, y - 1));
      a += gx * gx;
      b += gx * gy;
      c += gy * gy;
    }
  }
  return min_eigenvalue(a, b, c);
}

std::vector<SelectedPoint> select_points(const GrayImage& image,
                                         const SelectConfig& config) {
  const int w = image.width, h = image.height;
  const int margin = std::max(config.border_margin, config.shi_tomasi_window + 1);
  std::vector<SelectedPoint> out;
  if (w <= 2 * margin || h <= 2 * margin) {
    throw Error(ErrorCode::kDegenerateImage, "image smaller than the border margin");
  }

  const GradientMaps grad = compute_gradients(image);

  // Structure-tensor sums via integral images; min-eigenvalue per pixel.
  {
    const size_t n = static_cast<size_t>(w) * h;
    std::vector<double> gxx(n), gyy(n), gxy(n);
    for (size_t i = 0; i < n; ++i) {
      gxx[i] = grad.gx[i] * grad.gx[i];
      gyy[i] = grad.gy[i] * grad.gy[i];
      gxy[i] = grad.gx[i] * grad.gy[i];
    }
    Integral ixx, iyy, ixy;
    ixx.build(gxx, w, h);
    iyy.build(gyy, w, h);
    ixy.build(gxy, w, h);

    const int win = config.shi_tomasi_window;
    std::vector<Candidate> cands;
    for (int y = margin; y <= h - 1 - margin; ++y) {
      for (int x = margin; x <= w - 1 - margin; ++x) {
        const double a = ixx.rect(x - win, y - win, x + win, y + win);
        const double b = ixy.rect(x - win, y - win, x + win, y + win);
        const double c = iyy.rect(x - win, y - win, x + win, y + win);
        const double score = min_eigenvalue(a, b, c);
        if (score >= config.corner_threshold) cands.push_back({score, x, y});
      }
    }
    std::vector<Candidate> kept = suppress(cands, config.nms_radius, w, h);
    if (static_cast<int>(kept.size()) > config.corner_quota) {
      kept.resize(config.corner_quota);  // already sorted score-desc
    }
    for (const Candidate& c : kept) {
      out.push_back({c.u, c.v, PointKind::kCorner, c.score});
    }
  }

  // Gradient picks fill the remaining budget.
  const int remaining = config.budget - static_cast<int>(out.size());
  if (remaining > 0) {
    // Regional adaptive threshold: per-tile median gradient magnitude + add.
    const int tiles_x = (w + kTileSize - 1) / kTileSize;
    const int tiles_y = (h + kTileSize - 1) / kTileSize;
    std::vector<double> tile_thresh(static_cast<size_t>(tiles_x) * tiles_y, 0.0);
    std::vector<double> buf;
    for (int ty = 0; ty < tiles_y; ++ty) {
      for (int tx = 0; tx < tiles_x; ++tx) {
        buf.clear();
        const int x1 = std::min(w, (tx + 1) * kTileSize);
        const int y1 = std::min(h, (ty + 1) * kTileSize);
        for (int y = ty * kTileSize; y < y1; ++y) {
          for (int x = tx * kTileSize; x < x1; ++x) {
            buf.push_back(grad.mag[static_cast<size_t>(y) * w + x]);
          }
        }
        const size_t mid = buf.size() / 2;
        std::nth_element(buf.begin(), buf.begin() + mid, buf.end());
        tile_thresh[static_cast<size_t>(ty) * tiles_x + tx] =
            buf[mid] + config.gradient_add;
      }
    }

    std::vector<uint8_t> occupied(static_cast<size_t>(w) * h, 0);
    for (const SelectedPoint& p : out) {
      occupied[static_cast<size_t>(p.v) * w + p.u] = 1;
    }

    const double area =
        static_cast<double>(w - 2 * margin) * (h - 2 * margin);
    int block = static_cast<int>(std::lround(std::sqrt(area / remaining)));
    block = std::clamp(block, 4, 64);

    std::vector<Candidate> picks;
    for (int pass = 0; pass <= 3; ++pass) {
      picks.clear();
      for (int by = margin; by <= h - 1 - margin; by += block) {
        for (int bx = margin; bx <= w - 1 - margin; bx += block) {
          double best = 0.0;
          int bu = -1, bv = -1;
          const int ymax = std::min(by + block, h - margin);
          const int xmax = std::min(bx + block, w - margin);
          for (int y = by; y < ymax; ++y) {
            for (int x = bx; x < xmax; ++x) {
              const size_t i = static_cast<size_t>(y) * w + x;
              if (occupied[i]) continue;
              const double m = grad.mag[i];
              if (m > best &&
                  m > tile_thresh[static_cast<size_t>(y / kTileSize) * tiles_x +
                                  x / kTileSize]) {
                best = m;
                bu = x;
                bv = y;
              }
            }
          }
          if (bu >= 0) picks.push_back({best, bu, bv});
        }
      }
      if (static_cast<int>(picks.size()) >= (3 * remaining) / 4 || block <= 4) break;
      // Too few picks: shrink blocks to raise the block count.
      const double have = std::max<double>(1.0, picks.size());
      const double shrink = std::sqrt(have / remaining);
      block = std::clamp(static_cast<int>(std::lround(block * shrink)), 4, block - 1);
    }

    std::sort(picks.begin(), picks.end(), [](const Candidate& a, const Candidate& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.v != b.v) return a.v < b.v;
      return a.u < b.u;
    });
    if (static_cast<int>(picks.size()) > remaining) picks.resize(remaining);
    for (const Candidate& c : picks) {
      out.push_back({c.u, c.v, PointKind::kGradient, c.score});
    }
  }

  if (out.empty()) {
    throw Error(ErrorCode::kDegenerateImage, "no selectable structure in image");
  }
  return out;
}

}  // namespace revisit
