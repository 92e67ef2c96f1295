#pragma once

#include <Eigen/Dense>

#include "gslam/errors.hpp"

namespace gslam {

/// Single-channel image, indexed (row=y, col=x).
using GrayImage = Eigen::ArrayXXd;

/// Planar RGB image with values in [0,1].
struct ColorImage {
  GrayImage r, g, b;

  ColorImage() = default;
  ColorImage(int height, int width)
      : r(GrayImage::Zero(height, width)),
        g(GrayImage::Zero(height, width)),
        b(GrayImage::Zero(height, width)) {}

  int height() const { return static_cast<int>(r.rows()); }
  int width() const { return static_cast<int>(r.cols()); }

  Eigen::Vector3d pixel(int y, int x) const { return {r(y, x), g(y, x), b(y, x)}; }
  void set_pixel(int y, int x, const Eigen::Vector3d& c) {
    r(y, x) = c.x();
    g(y, x) = c.y();
    b(y, x) = c.z();
  }

  const GrayImage& plane(int ch) const { return ch == 0 ? r : (ch == 1 ? g : b); }
  GrayImage& plane(int ch) { return ch == 0 ? r : (ch == 1 ? g : b); }

  /// Channel-mean grayscale conversion.
  GrayImage gray() const { return (r + g + b) / 3.0; }
};

inline bool same_shape(const GrayImage& a, const GrayImage& b) {
  return a.rows() == b.rows() && a.cols() == b.cols();
}

inline void require_same_shape(const GrayImage& a, const GrayImage& b, const char* where) {
  if (!same_shape(a, b)) throw ShapeMismatch(std::string(where) + ": image shapes differ");
}

}  // namespace gslam
