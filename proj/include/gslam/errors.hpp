#pragma once

#include <stdexcept>
#include <string>

namespace gslam {

struct NonPositiveDepth : std::domain_error {
  explicit NonPositiveDepth(const std::string& what) : std::domain_error(what) {}
};

struct ShapeMismatch : std::invalid_argument {
  explicit ShapeMismatch(const std::string& what) : std::invalid_argument(what) {}
};

// File cannot be parsed or violates the expected on-disk layout. Carries the
// offending path in what().
struct FormatError : std::runtime_error {
  explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

struct NotConnected : std::runtime_error {
  explicit NotConnected(const std::string& what) : std::runtime_error(what) {}
};

struct MissingAnchorPose : std::runtime_error {
  explicit MissingAnchorPose(const std::string& what) : std::runtime_error(what) {}
};

struct TooFewPoses : std::runtime_error {
  explicit TooFewPoses(const std::string& what) : std::runtime_error(what) {}
};

struct NoValidPixels : std::runtime_error {
  explicit NoValidPixels(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace gslam
