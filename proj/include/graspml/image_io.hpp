#pragma once

#include <png.h>

#include <array>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "graspml/grid.hpp"

namespace graspml {

/// 8-bit RGB raster used for heatmap overlays.
struct RgbImage {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> pixels;  // rows * cols * 3

  RgbImage(std::size_t r, std::size_t c) : rows(r), cols(c), pixels(r * c * 3, 0) {}
  void set(long r, long c, std::array<std::uint8_t, 3> rgb) {
    if (r < 0 || c < 0 || r >= static_cast<long>(rows) || c >= static_cast<long>(cols)) return;
    auto* p = &pixels[(static_cast<std::size_t>(r) * cols + static_cast<std::size_t>(c)) * 3];
    p[0] = rgb[0];
    p[1] = rgb[1];
    p[2] = rgb[2];
  }
};

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline void png_warn(png_structp, png_const_charp) {}

inline void write_png(const std::filesystem::path& path, std::size_t rows, std::size_t cols, int bit_depth,
                      int color_type, const std::vector<std::uint8_t>& raw, std::size_t row_bytes) {
  FilePtr f(std::fopen(path.string().c_str(), "wb"));
  if (!f) throw std::runtime_error("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_warn);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("png: failed writing " + path.string());
  }
  png_init_io(png, f.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(cols), static_cast<png_uint_32>(rows), bit_depth, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t r = 0; r < rows; ++r) png_write_row(png, const_cast<std::uint8_t*>(raw.data() + r * row_bytes));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace detail

/// Writes a 16-bit grayscale PNG (big-endian samples as PNG requires).
inline void write_png16(const std::filesystem::path& path, const Grid<std::uint16_t>& img) {
  std::vector<std::uint8_t> raw(img.size() * 2);
  for (std::size_t i = 0; i < img.size(); ++i) {
    raw[2 * i] = static_cast<std::uint8_t>(img[i] >> 8);
    raw[2 * i + 1] = static_cast<std::uint8_t>(img[i] & 0xff);
  }
  detail::write_png(path, img.rows(), img.cols(), 16, PNG_COLOR_TYPE_GRAY, raw, img.cols() * 2);
}

inline void write_png8(const std::filesystem::path& path, const Grid<std::uint8_t>& img) {
  detail::write_png(path, img.rows(), img.cols(), 8, PNG_COLOR_TYPE_GRAY, img.values(), img.cols());
}

inline void write_png_rgb(const std::filesystem::path& path, const RgbImage& img) {
  detail::write_png(path, img.rows, img.cols, 8, PNG_COLOR_TYPE_RGB, img.pixels, img.cols * 3);
}

namespace detail {

// Decodes into `raw`; returns false on a libpng error. Kept free of objects with
// destructors because libpng reports errors with longjmp.
inline bool decode_gray(std::FILE* f, std::vector<std::uint8_t>& raw, png_uint_32& rows, png_uint_32& cols,
                        int& depth, int& color) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, png_warn);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    return false;
  }
  png_init_io(png, f);
  png_read_info(png, info);
  rows = png_get_image_height(png, info);
  cols = png_get_image_width(png, info);
  depth = png_get_bit_depth(png, info);
  color = png_get_color_type(png, info);
  if (color != PNG_COLOR_TYPE_GRAY) {
    png_destroy_read_struct(&png, &info, nullptr);
    return true;
  }
  if (depth < 8) {
    png_set_expand_gray_1_2_4_to_8(png);
    depth = 8;
  }
  png_read_update_info(png, info);
  const std::size_t row_bytes = png_get_rowbytes(png, info);
  raw.resize(row_bytes * rows);
  for (std::size_t r = 0; r < rows; ++r) png_read_row(png, raw.data() + r * row_bytes, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return true;
}

}  // namespace detail

/// Reads a grayscale PNG (8 or 16 bit) into 16-bit samples.
inline Grid<std::uint16_t> read_png_gray16(const std::filesystem::path& path) {
  detail::FilePtr f(std::fopen(path.string().c_str(), "rb"));
  if (!f) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::uint8_t> raw;
  png_uint_32 rows = 0, cols = 0;
  int depth = 0, color = 0;
  if (!detail::decode_gray(f.get(), raw, rows, cols, depth, color)) {
    throw std::runtime_error("png: failed reading " + path.string());
  }
  if (color != PNG_COLOR_TYPE_GRAY) throw std::runtime_error("expected grayscale PNG: " + path.string());
  Grid<std::uint16_t> out(rows, cols);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = depth == 16 ? static_cast<std::uint16_t>((raw[2 * i] << 8) | raw[2 * i + 1]) : raw[i];
  }
  return out;
}

}  // namespace graspml
