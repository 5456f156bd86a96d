#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

namespace morelab {

/// Channel-major (C x H x W) image of doubles.
struct Raster {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  Raster() = default;
  Raster(std::size_t c, std::size_t h, std::size_t w, double fill = 0.0)
      : channels(c), height(h), width(w), pixels(c * h * w, fill) {}

  double& at(std::size_t c, std::size_t y, std::size_t x) { return pixels[(c * height + y) * width + x]; }
  double at(std::size_t c, std::size_t y, std::size_t x) const { return pixels[(c * height + y) * width + x]; }

  bool operator==(const Raster&) const = default;
};

/// Binary layout (little-endian): u32 height, u32 width, u32 channels, u32
/// encoding, then the values in C,H,W order. Encoding 1 (palette) is used when
/// the raster has at most 256 distinct values: u32 count, count f64 entries,
/// then one index byte per value. Encoding 0 stores every value as raw f64.
/// Both are bit-exact.
void write_raster(const Raster& raster, const std::filesystem::path& path);
Raster read_raster(const std::filesystem::path& path);

}  // namespace morelab
