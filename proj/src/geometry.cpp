#include "morelab/geometry.hpp"

#include <bit>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "morelab/errors.hpp"
#include "morelab/raster.hpp"

namespace morelab {

std::string to_string(const BBox& box) {
  return "(x=" + std::to_string(box.x) + ", y=" + std::to_string(box.y) + ", w=" + std::to_string(box.w) +
         ", h=" + std::to_string(box.h) + ")";
}

void validate_bbox(const BBox& box, int image_width, int image_height) {
  if (box.w <= 0 || box.h <= 0) throw GeometryError("degenerate bbox " + to_string(box));
  if (box.x < 0 || box.y < 0 || box.x + box.w > image_width || box.y + box.h > image_height) {
    throw GeometryError("bbox " + to_string(box) + " outside " + std::to_string(image_width) + "x" +
                        std::to_string(image_height) + " image");
  }
}

namespace {

constexpr std::uint32_t kEncodingF64 = 0;
constexpr std::uint32_t kEncodingPalette = 1;
constexpr std::size_t kHeader = 16;

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}

void put_f64(std::string& buf, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xFFu));
}

std::uint32_t get_u32(const std::string& buf, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[at + i])) << (8 * i);
  return v;
}

double get_f64(const std::string& buf, std::size_t at) {
  std::uint64_t bits = 0;
  for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[at + b])) << (8 * b);
  return std::bit_cast<double>(bits);
}

// Distinct bit patterns in first-seen order, or nullopt past 256.
std::optional<std::vector<std::uint64_t>> palette_of(const Raster& raster) {
  std::vector<std::uint64_t> palette;
  std::unordered_map<std::uint64_t, std::size_t> seen;
  for (double v : raster.pixels) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    if (seen.emplace(bits, palette.size()).second) {
      if (palette.size() == 256) return std::nullopt;
      palette.push_back(bits);
    }
  }
  return palette;
}

}  // namespace

void write_raster(const Raster& raster, const std::filesystem::path& path) {
  const auto palette = palette_of(raster);
  std::string buf;
  put_u32(buf, static_cast<std::uint32_t>(raster.height));
  put_u32(buf, static_cast<std::uint32_t>(raster.width));
  put_u32(buf, static_cast<std::uint32_t>(raster.channels));
  if (palette) {
    put_u32(buf, kEncodingPalette);
    put_u32(buf, static_cast<std::uint32_t>(palette->size()));
    std::unordered_map<std::uint64_t, unsigned char> index;
    for (std::size_t i = 0; i < palette->size(); ++i) {
      put_f64(buf, std::bit_cast<double>((*palette)[i]));
      index[(*palette)[i]] = static_cast<unsigned char>(i);
    }
    for (double v : raster.pixels) buf.push_back(static_cast<char>(index.at(std::bit_cast<std::uint64_t>(v))));
  } else {
    put_u32(buf, kEncodingF64);
    for (double v : raster.pixels) put_f64(buf, v);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write raster " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("write failed for raster " + path.string());
}

Raster read_raster(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open raster " + path.string());
  const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < kHeader) throw IoError("truncated raster header in " + path.string());
  const std::uint32_t h = get_u32(buf, 0);
  const std::uint32_t w = get_u32(buf, 4);
  const std::uint32_t c = get_u32(buf, 8);
  const std::uint32_t encoding = get_u32(buf, 12);
  Raster r(c, h, w);
  auto expect = [&](std::size_t bytes) {
    if (buf.size() != bytes) {
      throw IoError("raster " + path.string() + " has " + std::to_string(buf.size()) + " bytes, expected " +
                    std::to_string(bytes));
    }
  };
  if (encoding == kEncodingF64) {
    expect(kHeader + 8 * r.pixels.size());
    for (std::size_t i = 0; i < r.pixels.size(); ++i) r.pixels[i] = get_f64(buf, kHeader + 8 * i);
  } else if (encoding == kEncodingPalette) {
    if (buf.size() < kHeader + 4) throw IoError("truncated raster palette in " + path.string());
    const std::size_t k = get_u32(buf, kHeader);
    if (k == 0 || k > 256) throw IoError("bad raster palette size in " + path.string());
    const std::size_t data = kHeader + 4 + 8 * k;
    expect(data + r.pixels.size());
    std::vector<double> palette(k);
    for (std::size_t i = 0; i < k; ++i) palette[i] = get_f64(buf, kHeader + 4 + 8 * i);
    for (std::size_t i = 0; i < r.pixels.size(); ++i) {
      const auto idx = static_cast<unsigned char>(buf[data + i]);
      if (idx >= k) throw IoError("raster palette index out of range in " + path.string());
      r.pixels[i] = palette[idx];
    }
  } else {
    throw IoError("unknown raster encoding " + std::to_string(encoding) + " in " + path.string());
  }
  return r;
}

}  // namespace morelab
