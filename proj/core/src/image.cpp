#include <revisit/image.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>

#include <revisit/error.hpp>

namespace revisit {

GrayImage box_blur(const GrayImage& image, int radius) {
  if (radius <= 0 || image.data.empty()) {
    return image;
  }
  const int w = image.width;
  const int h = image.height;
  const int window = 2 * radius + 1;
  // Horizontal pass; row sums of up to 255 * window stay exact in int32.
  std::vector<int32_t> rows(static_cast<size_t>(w) * h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      int32_t sum = 0;
      for (int d = -radius; d <= radius; ++d) {
        sum += image.at(std::clamp(x + d, 0, w - 1), y);
      }
      rows[static_cast<size_t>(y) * w + x] = sum;
    }
  }
  const int32_t area = window * window;
  GrayImage out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      int32_t sum = 0;
      for (int d = -radius; d <= radius; ++d) {
        sum += rows[static_cast<size_t>(std::clamp(y + d, 0, h - 1)) * w + x];
      }
      out.at(x, y) = static_cast<uint8_t>((sum + area / 2) / area);
    }
  }
  return out;
}

namespace {

// Reads one whitespace-delimited header token, skipping '#' comments.
std::string next_pgm_token(std::istream& in) {
  std::string token;
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (std::isspace(c)) {
      c = in.get();
    } else {
      break;
    }
  }
  while (c != EOF && !std::isspace(c)) {
    token.push_back(static_cast<char>(c));
    c = in.get();
  }
  return token;
}

}  // namespace

GrayImage read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path);
  if (next_pgm_token(in) != "P5") {
    throw Error(ErrorCode::kFormat, path + ": not a binary PGM (P5)");
  }
  GrayImage img;
  long maxval = 0;
  try {
    img.width = std::stoi(next_pgm_token(in));
    img.height = std::stoi(next_pgm_token(in));
    maxval = std::stol(next_pgm_token(in));
  } catch (const std::exception&) {
    throw Error(ErrorCode::kFormat, path + ": malformed PGM header");
  }
  if (img.width <= 0 || img.height <= 0) {
    throw Error(ErrorCode::kFormat, path + ": non-positive PGM dimensions");
  }
  if (maxval != 255) {
    throw Error(ErrorCode::kFormat, path + ": only maxval 255 is supported");
  }
  img.data.resize(static_cast<size_t>(img.width) * img.height);
  in.read(reinterpret_cast<char*>(img.data.data()),
          static_cast<std::streamsize>(img.data.size()));
  if (in.gcount() != static_cast<std::streamsize>(img.data.size())) {
    throw Error(ErrorCode::kFormat, path + ": truncated PGM pixel data");
  }
  return img;
}

void write_pgm(const std::string& path, const GrayImage& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path);
  char header[64];
  std::snprintf(header, sizeof(header), "P5\n%d %d\n255\n", image.width,
                image.height);
  out << header;
  out.write(reinterpret_cast<const char*>(image.data.data()),
            static_cast<std::streamsize>(image.data.size()));
  if (!out) throw Error(ErrorCode::kIo, "write failed for " + path);
}

}  // namespace revisit
