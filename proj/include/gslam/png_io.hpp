#pragma once

#include <string>

#include "gslam/image.hpp"

namespace gslam {

/// 8-bit RGB PNG. Values are clamped to [0,1] and quantized on write.
void write_png_rgb8(const std::string& path, const ColorImage& img);
ColorImage read_png_rgb8(const std::string& path);

/// 16-bit grayscale PNG storing depth in millimeters; 0 means invalid.
void write_png_depth16(const std::string& path, const GrayImage& depth_m);
GrayImage read_png_depth16(const std::string& path);

}  // namespace gslam
