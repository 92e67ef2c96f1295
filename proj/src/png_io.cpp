#include "gslam/png_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <vector>

namespace gslam {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_error_handler(png_structp png, png_const_charp msg) {
  throw FormatError(std::string(static_cast<const char*>(png_get_error_ptr(png))) + ": " + msg);
}

void png_warning_handler(png_structp, png_const_charp) {}

struct PngWriter {
  png_structp png = nullptr;
  png_infop info = nullptr;
  std::string path;

  explicit PngWriter(const std::string& p) : path(p) {
    png = png_create_write_struct(PNG_LIBPNG_VER_STRING, const_cast<char*>(path.c_str()),
                                  png_error_handler, png_warning_handler);
    if (!png) throw IoError("png_create_write_struct failed");
    info = png_create_info_struct(png);
    if (!info) {
      png_destroy_write_struct(&png, nullptr);
      throw IoError("png_create_info_struct failed");
    }
  }
  ~PngWriter() { png_destroy_write_struct(&png, &info); }
};

struct PngReader {
  png_structp png = nullptr;
  png_infop info = nullptr;
  std::string path;

  explicit PngReader(const std::string& p) : path(p) {
    png = png_create_read_struct(PNG_LIBPNG_VER_STRING, const_cast<char*>(path.c_str()),
                                 png_error_handler, png_warning_handler);
    if (!png) throw IoError("png_create_read_struct failed");
    info = png_create_info_struct(png);
    if (!info) {
      png_destroy_read_struct(&png, nullptr, nullptr);
      throw IoError("png_create_info_struct failed");
    }
  }
  ~PngReader() { png_destroy_read_struct(&png, &info, nullptr); }
};

std::uint8_t to_u8(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

}  // namespace

void write_png_rgb8(const std::string& path, const ColorImage& img) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot open for writing: " + path);
  PngWriter w(path);
  png_init_io(w.png, fp.get());
  const int h = img.height(), width = img.width();
  png_set_IHDR(w.png, w.info, width, h, 8, PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(w.png, w.info);
  std::vector<std::uint8_t> row(static_cast<size_t>(width) * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < width; ++x) {
      row[3 * x + 0] = to_u8(img.r(y, x));
      row[3 * x + 1] = to_u8(img.g(y, x));
      row[3 * x + 2] = to_u8(img.b(y, x));
    }
    png_write_row(w.png, row.data());
  }
  png_write_end(w.png, nullptr);
}

ColorImage read_png_rgb8(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open: " + path);
  PngReader r(path);
  png_init_io(r.png, fp.get());
  png_read_info(r.png, r.info);
  const int width = png_get_image_width(r.png, r.info);
  const int h = png_get_image_height(r.png, r.info);
  png_set_expand(r.png);
  png_set_strip_16(r.png);
  png_set_strip_alpha(r.png);
  png_set_gray_to_rgb(r.png);
  png_read_update_info(r.png, r.info);
  if (png_get_rowbytes(r.png, r.info) != static_cast<size_t>(width) * 3) {
    throw FormatError("unexpected row layout in " + path);
  }
  ColorImage img(h, width);
  std::vector<std::uint8_t> row(static_cast<size_t>(width) * 3);
  for (int y = 0; y < h; ++y) {
    png_read_row(r.png, row.data(), nullptr);
    for (int x = 0; x < width; ++x) {
      img.r(y, x) = row[3 * x + 0] / 255.0;
      img.g(y, x) = row[3 * x + 1] / 255.0;
      img.b(y, x) = row[3 * x + 2] / 255.0;
    }
  }
  png_read_end(r.png, nullptr);
  return img;
}

void write_png_depth16(const std::string& path, const GrayImage& depth_m) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("cannot open for writing: " + path);
  PngWriter w(path);
  png_init_io(w.png, fp.get());
  const int h = static_cast<int>(depth_m.rows()), width = static_cast<int>(depth_m.cols());
  png_set_IHDR(w.png, w.info, width, h, 16, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(w.png, w.info);
  std::vector<std::uint8_t> row(static_cast<size_t>(width) * 2);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < width; ++x) {
      const double mm = std::clamp(depth_m(y, x) * 1000.0, 0.0, 65535.0);
      const auto v = static_cast<std::uint16_t>(std::lround(mm));
      row[2 * x + 0] = static_cast<std::uint8_t>(v >> 8);  // PNG is big-endian
      row[2 * x + 1] = static_cast<std::uint8_t>(v & 0xff);
    }
    png_write_row(w.png, row.data());
  }
  png_write_end(w.png, nullptr);
}

GrayImage read_png_depth16(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open: " + path);
  PngReader r(path);
  png_init_io(r.png, fp.get());
  png_read_info(r.png, r.info);
  const int width = png_get_image_width(r.png, r.info);
  const int h = png_get_image_height(r.png, r.info);
  if (png_get_bit_depth(r.png, r.info) != 16 ||
      png_get_color_type(r.png, r.info) != PNG_COLOR_TYPE_GRAY) {
    throw FormatError("expected 16-bit grayscale PNG: " + path);
  }
  GrayImage depth(h, width);
  std::vector<std::uint8_t> row(static_cast<size_t>(width) * 2);
  for (int y = 0; y < h; ++y) {
    png_read_row(r.png, row.data(), nullptr);
    for (int x = 0; x < width; ++x) {
      const std::uint16_t v =
          static_cast<std::uint16_t>((row[2 * x + 0] << 8) | row[2 * x + 1]);
      depth(y, x) = v / 1000.0;
    }
  }
  png_read_end(r.png, nullptr);
  return depth;
}

}  // namespace gslam
