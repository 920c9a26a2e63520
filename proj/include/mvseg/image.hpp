#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace mvseg {

struct Rgb8 {
  std::uint8_t r = 0, g = 0, b = 0;
  bool operator==(const Rgb8&) const = default;
};

/// Dense row-major image. Pixel (x, y) with x in [0, width), y in [0, height).
template <typename T>
struct Image {
  int width = 0;
  int height = 0;
  std::vector<T> data;

  Image() = default;
  Image(int w, int h, T fill = T{}) : width(w), height(h), data(static_cast<size_t>(w) * h, fill) {}

  T& at(int x, int y) { return data[static_cast<size_t>(y) * width + x]; }
  const T& at(int x, int y) const { return data[static_cast<size_t>(y) * width + x]; }

  bool in_bounds(int x, int y) const { return x >= 0 && x < width && y >= 0 && y < height; }
  size_t size() const { return data.size(); }
  bool operator==(const Image&) const = default;
};

using Mask = Image<std::uint8_t>;       // nonzero = foreground
using DepthImage = Image<float>;        // meters; 0 or non-finite = invalid
using ColorImage = Image<Rgb8>;

// ---------------------------------------------------------------------------
// File I/O. PNG via libpng; raw depth as row-major little-endian float32.

ColorImage read_png_rgb8(const std::filesystem::path& path);
Mask read_png_gray8(const std::filesystem::path& path);
Image<std::uint16_t> read_png_gray16(const std::filesystem::path& path);

void write_png_rgb8(const std::filesystem::path& path, const ColorImage& img);
void write_png_gray8(const std::filesystem::path& path, const Mask& img);
void write_png_gray16(const std::filesystem::path& path, const Image<std::uint16_t>& img);

DepthImage read_depth_f32(const std::filesystem::path& path, int width, int height);
void write_depth_f32(const std::filesystem::path& path, const DepthImage& img);

// ---------------------------------------------------------------------------
// Binary mask operations.

enum class MorphOp { Erode, Dilate };

/// Disk-structuring-element morphology: the element is {(dx,dy) : dx^2+dy^2 <= r^2}.
/// Pixels outside the image count as background. Radius 0 is the identity.
Mask morphology(const Mask& mask, MorphOp op, int radius);

/// Keep only the largest 4-connected foreground component (ties: lowest seed
/// pixel in row-major order). Empty input stays empty.
Mask largest_component(const Mask& mask);

/// Fill background regions not reachable from the image border.
Mask fill_holes(const Mask& mask);

struct PixelBox {
  int x = 0, y = 0, w = 0, h = 0;  // tight bounds; w == h == 0 means empty
  bool empty() const { return w <= 0 || h <= 0; }
  bool operator==(const PixelBox&) const = default;
};

PixelBox tight_bbox(const Mask& mask);
int count_nonzero(const Mask& mask);

/// Trace the boundary of a foreground region as a closed polygon on the pixel
/// corner lattice. The region must be a single 4-connected component without
/// holes; the returned polygon reproduces the mask exactly under
/// rasterize_polygon (even-odd rule at pixel centers).
std::vector<std::pair<double, double>> trace_boundary(const Mask& mask);

Mask rasterize_polygon(const std::vector<std::pair<double, double>>& polygon, int width, int height);

}  // namespace mvseg
