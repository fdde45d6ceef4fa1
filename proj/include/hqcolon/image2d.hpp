#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "hqcolon/volume.hpp"

namespace hqcolon {

// 8-bit raster, row-major, `channels` interleaved samples per pixel.
struct Image8 {
  std::int64_t width = 0;
  std::int64_t height = 0;
  int channels = 1;
  std::vector<std::uint8_t> pixels;

  Image8() = default;
  Image8(std::int64_t w, std::int64_t h, int c)
      : width(w), height(h), channels(c), pixels(static_cast<std::size_t>(w * h * c), 0) {}

  std::uint8_t& at(std::int64_t x, std::int64_t y, int c = 0) {
    return pixels[static_cast<std::size_t>((y * width + x) * channels + c)];
  }
  std::uint8_t at(std::int64_t x, std::int64_t y, int c = 0) const {
    return pixels[static_cast<std::size_t>((y * width + x) * channels + c)];
  }
};

std::vector<std::uint8_t> encode_png(const Image8& img);
void write_png(const Image8& img, const std::filesystem::path& path);
// Decodes any PNG to 8-bit gray (RGB averaged, alpha dropped).
Image8 read_png_gray(const std::filesystem::path& path);
Image8 decode_png_gray(const std::vector<std::uint8_t>& bytes);
// Keeps color: 1 channel for gray input, 3 for RGB/palette (alpha dropped).
Image8 decode_png(const std::vector<std::uint8_t>& bytes);

// Linear HU -> [0, 255] mapping, rounded half away from zero and clamped.
std::uint8_t window_hu(double hu, std::pair<double, double> window);

// Bilinear resampling of an axial slice to width x height, pixel centers
// aligned ((u + 0.5) * nx / width - 0.5), edge-clamped, then windowed.
Image8 axial_slice_resized(const Volume& v, std::int64_t z, std::int64_t width, std::int64_t height,
                           std::pair<double, double> window);

}  // namespace hqcolon
