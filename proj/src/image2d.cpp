#include "hqcolon/image2d.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include <fmt/format.h>
#include <png.h>

namespace hqcolon {

namespace {

struct PngError {
  std::string message;
};

// libpng is C; errors unwind with longjmp back to the setjmp in each caller.
void on_png_error(png_structp png, png_const_charp msg) {
  static_cast<PngError*>(png_get_error_ptr(png))->message = msg;
  png_longjmp(png, 1);
}

void on_png_warning(png_structp, png_const_charp) {}

struct ReadCursor {
  const std::vector<std::uint8_t>* bytes;
  std::size_t pos = 0;
};

void read_bytes(png_structp png, png_bytep out, png_size_t n) {
  auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (cur->pos + n > cur->bytes->size()) png_error(png, "unexpected end of data");
  std::memcpy(out, cur->bytes->data() + cur->pos, n);
  cur->pos += n;
}

void write_bytes(png_structp png, png_bytep data, png_size_t n) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + n);
}

void flush_bytes(png_structp) {}

}  // namespace

std::vector<std::uint8_t> encode_png(const Image8& img) {
  if (img.channels != 1 && img.channels != 3)
    throw Error(ErrorCode::InvalidArgument, "png encoder supports 1 or 3 channels");
  std::vector<std::uint8_t> out;
  PngError err;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &err, on_png_error, on_png_warning);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(ErrorCode::UnwritablePath, fmt::format("png encode: {}", err.message));
  }
  {
    png_set_write_fn(png, &out, write_bytes, flush_bytes);
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                 img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (std::int64_t y = 0; y < img.height; ++y)
      png_write_row(png, const_cast<png_bytep>(img.pixels.data() +
                                               static_cast<std::size_t>(y * img.width * img.channels)));
    png_write_end(png, nullptr);
  }
  png_destroy_write_struct(&png, &info);
  return out;
}

void write_png(const Image8& img, const std::filesystem::path& path) {
  const auto bytes = encode_png(img);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::UnwritablePath, fmt::format("{}: cannot open for writing", path.string()));
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error(ErrorCode::UnwritablePath, fmt::format("{}: write failed", path.string()));
}

namespace {

Image8 decode(const std::vector<std::uint8_t>& bytes, bool to_gray) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0)
    throw Error(ErrorCode::UnreadableFile, "not a PNG stream");
  PngError err;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &err, on_png_error, on_png_warning);
  png_infop info = png_create_info_struct(png);
  ReadCursor cur{&bytes, 0};
  Image8 img;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error(ErrorCode::UnreadableFile, fmt::format("png decode: {}", err.message));
  }
  {
    png_set_read_fn(png, &cur, read_bytes);
    png_read_info(png, info);
    const auto color = png_get_color_type(png, info);
    if (png_get_bit_depth(png, info) == 16) png_set_strip_16(png);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    const bool colored =
        color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA || color == PNG_COLOR_TYPE_PALETTE;
    if (colored && to_gray) png_set_rgb_to_gray_fixed(png, 1, -1, -1);
    png_read_update_info(png, info);
    const int channels = colored && !to_gray ? 3 : 1;
    img = Image8(png_get_image_width(png, info), png_get_image_height(png, info), channels);
    rows.resize(static_cast<std::size_t>(img.height));
    for (std::int64_t y = 0; y < img.height; ++y)
      rows[static_cast<std::size_t>(y)] = img.pixels.data() + static_cast<std::size_t>(y * img.width * channels);
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

}  // namespace

Image8 decode_png_gray(const std::vector<std::uint8_t>& bytes) { return decode(bytes, true); }

Image8 decode_png(const std::vector<std::uint8_t>& bytes) { return decode(bytes, false); }

Image8 read_png_gray(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::UnreadableFile, fmt::format("{}: cannot open", path.string()));
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  try {
    return decode_png_gray(bytes);
  } catch (const Error& e) {
    throw Error(e.code(), fmt::format("{}: {}", path.string(), e.what()));
  }
}

std::uint8_t window_hu(double hu, std::pair<double, double> window) {
  const double t = (hu - window.first) / (window.second - window.first) * 255.0;
  return static_cast<std::uint8_t>(std::clamp(std::round(t), 0.0, 255.0));
}

Image8 axial_slice_resized(const Volume& v, std::int64_t z, std::int64_t width, std::int64_t height,
                           std::pair<double, double> window) {
  const Grid& g = v.grid;
  Image8 img(width, height, 1);
  auto src = [&](std::int64_t out, std::int64_t out_n, std::int64_t in_n) {
    const double s = (static_cast<double>(out) + 0.5) * static_cast<double>(in_n) / static_cast<double>(out_n) - 0.5;
    return std::clamp(s, 0.0, static_cast<double>(in_n - 1));
  };
  for (std::int64_t row = 0; row < height; ++row) {
    const double sy = src(row, height, g.ny());
    const auto y0 = static_cast<std::int64_t>(std::floor(sy));
    const auto y1 = std::min(y0 + 1, g.ny() - 1);
    const double fy = sy - static_cast<double>(y0);
    for (std::int64_t col = 0; col < width; ++col) {
      const double sx = src(col, width, g.nx());
      const auto x0 = static_cast<std::int64_t>(std::floor(sx));
      const auto x1 = std::min(x0 + 1, g.nx() - 1);
      const double fx = sx - static_cast<double>(x0);
      const double top = (1 - fx) * v.at(x0, y0, z) + fx * v.at(x1, y0, z);
      const double bottom = (1 - fx) * v.at(x0, y1, z) + fx * v.at(x1, y1, z);
      img.at(col, row) = window_hu((1 - fy) * top + fy * bottom, window);
    }
  }
  return img;
}

}  // namespace hqcolon
