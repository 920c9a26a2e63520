#include "mvseg/image.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <deque>
#include <fstream>
#include <map>
#include <memory>

namespace mvseg {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void fail(const std::filesystem::path& path, const std::string& what) {
  throw std::runtime_error("image i/o: " + what + ": " + path.string());
}

struct PngReader {
  png_structp png = nullptr;
  png_infop info = nullptr;
  FilePtr file;

  explicit PngReader(const std::filesystem::path& path) {
    file.reset(std::fopen(path.string().c_str(), "rb"));
    if (!file) fail(path, "cannot open for reading");
    png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    info = png_create_info_struct(png);
    if (!png || !info) fail(path, "libpng init failed");
    if (setjmp(png_jmpbuf(png))) fail(path, "png decode error");
    png_init_io(png, file.get());
    png_read_info(png, info);
  }
  ~PngReader() { png_destroy_read_struct(&png, &info, nullptr); }
};

struct PngWriter {
  png_structp png = nullptr;
  png_infop info = nullptr;
  FilePtr file;

  explicit PngWriter(const std::filesystem::path& path) {
    file.reset(std::fopen(path.string().c_str(), "wb"));
    if (!file) fail(path, "cannot open for writing");
    png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    info = png_create_info_struct(png);
    if (!png || !info) fail(path, "libpng init failed");
    if (setjmp(png_jmpbuf(png))) fail(path, "png encode error");
    png_init_io(png, file.get());
  }
  ~PngWriter() { png_destroy_write_struct(&png, &info); }
};

// Reads any PNG into 8- or 16-bit samples with `channels` output channels.
template <typename Sample>
Image<Sample> read_png_impl(const std::filesystem::path& path, int want_channels, bool want_16bit) {
  static_assert(sizeof(Sample) == 1 || sizeof(Sample) == 2 || sizeof(Sample) == 3);
  PngReader r(path);
  if (setjmp(png_jmpbuf(r.png))) fail(path, "png decode error");

  png_set_palette_to_rgb(r.png);
  png_set_expand_gray_1_2_4_to_8(r.png);
  png_set_strip_alpha(r.png);
  if (want_16bit) {
    png_set_swap(r.png);  // PNG is big-endian on disk
  } else {
    png_set_strip_16(r.png);
  }
  const int color_type = png_get_color_type(r.png, r.info);
  if (want_channels == 3 && (color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_GRAY_ALPHA)) {
    png_set_gray_to_rgb(r.png);
  }
  if (want_channels == 1 && (color_type == PNG_COLOR_TYPE_RGB || color_type == PNG_COLOR_TYPE_RGB_ALPHA ||
                             color_type == PNG_COLOR_TYPE_PALETTE)) {
    png_set_rgb_to_gray_fixed(r.png, 1, -1, -1);
  }
  png_read_update_info(r.png, r.info);

  const int width = static_cast<int>(png_get_image_width(r.png, r.info));
  const int height = static_cast<int>(png_get_image_height(r.png, r.info));
  const size_t rowbytes = png_get_rowbytes(r.png, r.info);
  if (rowbytes != static_cast<size_t>(width) * sizeof(Sample)) fail(path, "unexpected channel layout");

  Image<Sample> img(width, height);
  std::vector<png_bytep> rows(height);
  for (int y = 0; y < height; ++y) rows[y] = reinterpret_cast<png_bytep>(&img.at(0, y));
  png_read_image(r.png, rows.data());
  png_read_end(r.png, nullptr);
  return img;
}

// Writes go to <path>.tmp and are renamed into place, so readers never see a
// partially written file.
template <typename Sample>
void write_png_impl(const std::filesystem::path& path, const Image<Sample>& img, int bit_depth, int color_type) {
  if (img.width <= 0 || img.height <= 0) fail(path, "refusing to write empty image");
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    PngWriter w(tmp);
    if (setjmp(png_jmpbuf(w.png))) fail(tmp, "png encode error");
    png_set_IHDR(w.png, w.info, img.width, img.height, bit_depth, color_type, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(w.png, w.info);
    if (bit_depth == 16) png_set_swap(w.png);
    std::vector<png_bytep> rows(img.height);
    for (int y = 0; y < img.height; ++y) {
      rows[y] = reinterpret_cast<png_bytep>(const_cast<Sample*>(&img.at(0, y)));
    }
    png_write_image(w.png, rows.data());
    png_write_end(w.png, nullptr);
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace

ColorImage read_png_rgb8(const std::filesystem::path& path) { return read_png_impl<Rgb8>(path, 3, false); }
Mask read_png_gray8(const std::filesystem::path& path) { return read_png_impl<std::uint8_t>(path, 1, false); }
Image<std::uint16_t> read_png_gray16(const std::filesystem::path& path) {
  return read_png_impl<std::uint16_t>(path, 1, true);
}

void write_png_rgb8(const std::filesystem::path& path, const ColorImage& img) {
  write_png_impl(path, img, 8, PNG_COLOR_TYPE_RGB);
}
void write_png_gray8(const std::filesystem::path& path, const Mask& img) {
  write_png_impl(path, img, 8, PNG_COLOR_TYPE_GRAY);
}
void write_png_gray16(const std::filesystem::path& path, const Image<std::uint16_t>& img) {
  write_png_impl(path, img, 16, PNG_COLOR_TYPE_GRAY);
}

DepthImage read_depth_f32(const std::filesystem::path& path, int width, int height) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(path, "cannot open for reading");
  DepthImage img(width, height);
  in.read(reinterpret_cast<char*>(img.data.data()), static_cast<std::streamsize>(img.size() * sizeof(float)));
  if (in.gcount() != static_cast<std::streamsize>(img.size() * sizeof(float))) {
    fail(path, "truncated f32 depth file");
  }
  return img;
}

void write_depth_f32(const std::filesystem::path& path, const DepthImage& img) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(tmp, "cannot open for writing");
    out.write(reinterpret_cast<const char*>(img.data.data()),
              static_cast<std::streamsize>(img.size() * sizeof(float)));
    if (!out) fail(tmp, "short write");
  }
  std::filesystem::rename(tmp, path);
}

// ---------------------------------------------------------------------------

Mask morphology(const Mask& mask, MorphOp op, int radius) {
  if (radius < 0) throw std::invalid_argument("morphology: radius must be >= 0");
  if (radius == 0) return mask;

  std::vector<std::pair<int, int>> disk;
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      if (dx * dx + dy * dy <= radius * radius) disk.emplace_back(dx, dy);
    }
  }

  Mask out(mask.width, mask.height, 0);
  const bool erode = op == MorphOp::Erode;
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      if (erode) {
        bool keep = mask.at(x, y) != 0;
        for (size_t k = 0; keep && k < disk.size(); ++k) {
          const int nx = x + disk[k].first, ny = y + disk[k].second;
          keep = mask.in_bounds(nx, ny) && mask.at(nx, ny) != 0;
        }
        out.at(x, y) = keep ? 255 : 0;
      } else {
        bool hit = false;
        for (size_t k = 0; !hit && k < disk.size(); ++k) {
          const int nx = x + disk[k].first, ny = y + disk[k].second;
          hit = mask.in_bounds(nx, ny) && mask.at(nx, ny) != 0;
        }
        out.at(x, y) = hit ? 255 : 0;
      }
    }
  }
  return out;
}

namespace {

// Label 4-connected components; returns label image (-1 background) and sizes.
std::pair<Image<int>, std::vector<int>> label_components(const Mask& mask) {
  Image<int> labels(mask.width, mask.height, -1);
  std::vector<int> sizes;
  std::deque<std::pair<int, int>> queue;
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      if (mask.at(x, y) == 0 || labels.at(x, y) >= 0) continue;
      const int id = static_cast<int>(sizes.size());
      sizes.push_back(0);
      labels.at(x, y) = id;
      queue.emplace_back(x, y);
      while (!queue.empty()) {
        auto [cx, cy] = queue.front();
        queue.pop_front();
        ++sizes[id];
        constexpr int dx[4] = {1, -1, 0, 0};
        constexpr int dy[4] = {0, 0, 1, -1};
        for (int k = 0; k < 4; ++k) {
          const int nx = cx + dx[k], ny = cy + dy[k];
          if (mask.in_bounds(nx, ny) && mask.at(nx, ny) != 0 && labels.at(nx, ny) < 0) {
            labels.at(nx, ny) = id;
            queue.emplace_back(nx, ny);
          }
        }
      }
    }
  }
  return {std::move(labels), std::move(sizes)};
}

}  // namespace

Mask largest_component(const Mask& mask) {
  auto [labels, sizes] = label_components(mask);
  if (sizes.empty()) return Mask(mask.width, mask.height, 0);
  const int best = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
  Mask out(mask.width, mask.height, 0);
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      if (labels.at(x, y) == best) out.at(x, y) = 255;
    }
  }
  return out;
}

Mask fill_holes(const Mask& mask) {
  // Flood background from the border; anything not reached is a hole.
  Mask reached(mask.width, mask.height, 0);
  std::deque<std::pair<int, int>> queue;
  auto push = [&](int x, int y) {
    if (mask.in_bounds(x, y) && mask.at(x, y) == 0 && reached.at(x, y) == 0) {
      reached.at(x, y) = 1;
      queue.emplace_back(x, y);
    }
  };
  for (int x = 0; x < mask.width; ++x) {
    push(x, 0);
    push(x, mask.height - 1);
  }
  for (int y = 0; y < mask.height; ++y) {
    push(0, y);
    push(mask.width - 1, y);
  }
  while (!queue.empty()) {
    auto [cx, cy] = queue.front();
    queue.pop_front();
    push(cx + 1, cy);
    push(cx - 1, cy);
    push(cx, cy + 1);
    push(cx, cy - 1);
  }
  Mask out = mask;
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      if (mask.at(x, y) == 0 && reached.at(x, y) == 0) out.at(x, y) = 255;
    }
  }
  return out;
}

PixelBox tight_bbox(const Mask& mask) {
  int x0 = mask.width, y0 = mask.height, x1 = -1, y1 = -1;
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      if (mask.at(x, y) != 0) {
        x0 = std::min(x0, x);
        y0 = std::min(y0, y);
        x1 = std::max(x1, x);
        y1 = std::max(y1, y);
      }
    }
  }
  if (x1 < 0) return {};
  return {x0, y0, x1 - x0 + 1, y1 - y0 + 1};
}

int count_nonzero(const Mask& mask) {
  int n = 0;
  for (auto v : mask.data) n += v != 0;
  return n;
}

std::vector<std::pair<double, double>> trace_boundary(const Mask& mask) {
  // Crack following on the corner lattice: walk along pixel edges keeping the
  // foreground on the left. Corners are integer (x, y); pixel (x, y) covers
  // [x, x+1) x [y, y+1).
  auto fg = [&](int x, int y) { return mask.in_bounds(x, y) && mask.at(x, y) != 0; };

  int sx = -1, sy = -1;
  for (int y = 0; y < mask.height && sx < 0; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      if (fg(x, y)) {
        sx = x;
        sy = y;
        break;
      }
    }
  }
  if (sx < 0) return {};

  // Directions: 0=+x, 1=+y, 2=-x, 3=-y. Start at the top-left corner of the
  // first foreground pixel, heading +x along its top edge.
  constexpr int step_x[4] = {1, 0, -1, 0};
  constexpr int step_y[4] = {0, 1, 0, -1};

  std::vector<std::pair<double, double>> poly;
  int cx = sx, cy = sy, dir = 0;
  do {
    poly.emplace_back(static_cast<double>(cx), static_cast<double>(cy));
    // Advance one corner; then turn based on the two pixels flanking the next
    // edge. left(dir) is the pixel on the left of travel, right(dir) on the right.
    int nx = cx + step_x[dir];
    int ny = cy + step_y[dir];
    // Pixels flanking the edge leaving corner (corner_x, corner_y) in direction
    // d; "left" is the foreground side under our traversal orientation.
    auto pixel_left_of = [&](int corner_x, int corner_y, int d) {
      switch (d) {
        case 0: return std::pair{corner_x, corner_y};
        case 1: return std::pair{corner_x - 1, corner_y};
        case 2: return std::pair{corner_x - 1, corner_y - 1};
        default: return std::pair{corner_x, corner_y - 1};
      }
    };
    auto pixel_right_of = [&](int corner_x, int corner_y, int d) {
      switch (d) {
        case 0: return std::pair{corner_x, corner_y - 1};
        case 1: return std::pair{corner_x, corner_y};
        case 2: return std::pair{corner_x - 1, corner_y};
        default: return std::pair{corner_x - 1, corner_y - 1};
      }
    };
    const int left_dir = (dir + 3) % 4;
    const int right_dir = (dir + 1) % 4;
    auto ok = [&](int d) {
      auto [lx, ly] = pixel_left_of(nx, ny, d);
      auto [rx, ry] = pixel_right_of(nx, ny, d);
      return fg(lx, ly) && !fg(rx, ry);
    };
    cx = nx;
    cy = ny;
    // At a diagonal pinch both left and right turns are legal; preferring the
    // right turn bounces off the shared corner, which keeps foreground
    // 4-connected semantics (matching largest_component) and the contour a
    // single cycle.
    if (ok(right_dir)) {
      dir = right_dir;
    } else if (ok(dir)) {
      // straight
    } else if (ok(left_dir)) {
      dir = left_dir;
    } else {
      throw std::logic_error("trace_boundary: dead end (mask not a filled 4-connected region?)");
    }
  } while (!(cx == sx && cy == sy && dir == 0));

  // Merge collinear runs of unit steps (identical geometry, fewer vertices).
  std::vector<std::pair<double, double>> simplified;
  const size_t n = poly.size();
  for (size_t i = 0; i < n; ++i) {
    const auto& prev = poly[(i + n - 1) % n];
    const auto& cur = poly[i];
    const auto& next = poly[(i + 1) % n];
    const double cross = (cur.first - prev.first) * (next.second - cur.second) -
                         (cur.second - prev.second) * (next.first - cur.first);
    if (cross != 0.0) simplified.push_back(cur);
  }
  return simplified;
}

Mask rasterize_polygon(const std::vector<std::pair<double, double>>& polygon, int width, int height) {
  Mask out(width, height, 0);
  if (polygon.size() < 3) return out;
  const size_t n = polygon.size();
  for (int y = 0; y < height; ++y) {
    const double py = y + 0.5;
    // Even-odd rule: collect x-crossings of the horizontal line at py.
    std::vector<double> xs;
    for (size_t i = 0; i < n; ++i) {
      const auto& a = polygon[i];
      const auto& b = polygon[(i + 1) % n];
      if ((a.second <= py) != (b.second <= py)) {
        const double t = (py - a.second) / (b.second - a.second);
        xs.push_back(a.first + t * (b.first - a.first));
      }
    }
    std::sort(xs.begin(), xs.end());
    for (size_t k = 0; k + 1 < xs.size(); k += 2) {
      const int x_begin = std::max(0, static_cast<int>(std::ceil(xs[k] - 0.5)));
      const int x_end = std::min(width - 1, static_cast<int>(std::floor(xs[k + 1] - 0.5)));
      for (int x = x_begin; x <= x_end; ++x) out.at(x, y) = 255;
    }
  }
  return out;
}

}  // namespace mvseg
