#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "gslam/errors.hpp"

namespace gslam {

template <typename S>
using Vector3 = Eigen::Matrix<S, 3, 1>;
template <typename S>
using Vector6 = Eigen::Matrix<S, 6, 1>;
template <typename S>
using Matrix3 = Eigen::Matrix<S, 3, 3>;
template <typename S>
using Matrix6 = Eigen::Matrix<S, 6, 6>;

using Vector6d = Vector6<double>;
using Matrix6d = Matrix6<double>;

/// Skew-symmetric matrix such that hat(w) * v == w.cross(v).
template <typename S>
Matrix3<S> so3_hat(const Vector3<S>& w) {
  Matrix3<S> m;
  m << S(0), -w.z(), w.y(), w.z(), S(0), -w.x(), -w.y(), w.x(), S(0);
  return m;
}

/// Re-orthonormalizes a near-rotation matrix by Gram-Schmidt on the columns;
/// the third column is rebuilt as a cross product so the determinant is +1.
template <typename S>
Matrix3<S> orthonormalized(const Matrix3<S>& m) {
  Vector3<S> c0 = m.col(0).normalized();
  Vector3<S> c1 = (m.col(1) - c0.dot(m.col(1)) * c0).normalized();
  Vector3<S> c2 = c0.cross(c1);
  Matrix3<S> r;
  r.col(0) = c0;
  r.col(1) = c1;
  r.col(2) = c2;
  return r;
}

template <typename S>
Matrix3<S> so3_exp(const Vector3<S>& w) {
  const S theta2 = w.squaredNorm();
  const S theta = std::sqrt(theta2);
  const Matrix3<S> hat = so3_hat(w);
  S a, b;  // sin(t)/t, (1-cos(t))/t^2
  if (theta < S(1e-8)) {
    a = S(1) - theta2 / S(6);
    b = S(0.5) - theta2 / S(24);
  } else {
    a = std::sin(theta) / theta;
    b = (S(1) - std::cos(theta)) / theta2;
  }
  return Matrix3<S>::Identity() + a * hat + b * hat * hat;
}

template <typename S>
Vector3<S> so3_log(const Matrix3<S>& r) {
  const S cos_theta = std::clamp((r.trace() - S(1)) / S(2), S(-1), S(1));
  const S theta = std::acos(cos_theta);
  Vector3<S> axis(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
  if (theta < S(1e-8)) {
    return S(0.5) * axis;  // first-order
  }
  if (theta > S(M_PI) - S(1e-4)) {
    // Near pi the skew part vanishes; recover axis*axis^T from the symmetric
    // part, which is free of the first-order skew contribution.
    const Matrix3<S> sym = (r + r.transpose()) / S(2);
    const Matrix3<S> outer =
        (sym - cos_theta * Matrix3<S>::Identity()) / (S(1) - cos_theta);
    int k;
    outer.diagonal().maxCoeff(&k);
    Vector3<S> u = outer.col(k) / std::sqrt(outer(k, k));
    // Fix sign using the skew part where it is nonzero.
    if (axis.dot(u) < S(0)) u = -u;
    return theta * u;
  }
  return (theta / (S(2) * std::sin(theta))) * axis;
}

/// Inverse of the right Jacobian of SO(3); maps residual-space increments to
/// tangent increments in Gauss-Newton on rotation residuals.
template <typename S>
Matrix3<S> so3_right_jacobian_inv(const Vector3<S>& w) {
  const S theta2 = w.squaredNorm();
  const S theta = std::sqrt(theta2);
  const Matrix3<S> hat = so3_hat(w);
  S c;
  if (theta < S(1e-5)) {
    c = S(1) / S(12) + theta2 / S(720);
  } else {
    c = (S(1) / theta2) - (S(1) + std::cos(theta)) / (S(2) * theta * std::sin(theta));
  }
  return Matrix3<S>::Identity() + S(0.5) * hat + c * hat * hat;
}

/// Rigid transform; rotation kept orthonormal (det +1) across composition
/// chains by Gram-Schmidt in compose().
template <typename S>
struct Se3 {
  Matrix3<S> rotation = Matrix3<S>::Identity();
  Vector3<S> translation = Vector3<S>::Zero();

  static Se3 identity() { return Se3{}; }

  Vector3<S> operator*(const Vector3<S>& p) const { return rotation * p + translation; }

  Se3 inverse() const {
    Se3 inv;
    inv.rotation = rotation.transpose();
    inv.translation = -(inv.rotation * translation);
    return inv;
  }
};

template <typename S>
Se3<S> se3_compose(const Se3<S>& a, const Se3<S>& b) {
  Se3<S> c;
  c.rotation = orthonormalized<S>(a.rotation * b.rotation);
  c.translation = a.rotation * b.translation + a.translation;
  return c;
}

template <typename S>
Se3<S> operator*(const Se3<S>& a, const Se3<S>& b) {
  return se3_compose(a, b);
}

/// Exponential map. Tangent layout: translation first, rotation last,
/// xi = (vx, vy, vz, wx, wy, wz), rotation in radians.
template <typename S>
Se3<S> se3_exp(const Vector6<S>& xi) {
  const Vector3<S> v = xi.template head<3>();
  const Vector3<S> w = xi.template tail<3>();
  const S theta2 = w.squaredNorm();
  const S theta = std::sqrt(theta2);
  const Matrix3<S> hat = so3_hat(w);
  S b, c;  // (1-cos)/t^2, (t-sin)/t^3
  if (theta < S(1e-8)) {
    b = S(0.5) - theta2 / S(24);
    c = S(1) / S(6) - theta2 / S(120);
  } else {
    b = (S(1) - std::cos(theta)) / theta2;
    c = (theta - std::sin(theta)) / (theta2 * theta);
  }
  const Matrix3<S> V = Matrix3<S>::Identity() + b * hat + c * hat * hat;
  Se3<S> t;
  t.rotation = so3_exp(w);
  t.translation = V * v;
  return t;
}

template <typename S>
Vector6<S> se3_log(const Se3<S>& t) {
  const Vector3<S> w = so3_log(t.rotation);
  const S theta2 = w.squaredNorm();
  const S theta = std::sqrt(theta2);
  const Matrix3<S> hat = so3_hat(w);
  S c;
  if (theta < S(1e-5)) {
    c = S(1) / S(12) + theta2 / S(720);
  } else {
    c = (S(1) / theta2) - (S(1) + std::cos(theta)) / (S(2) * theta * std::sin(theta));
  }
  const Matrix3<S> Vinv = Matrix3<S>::Identity() - S(0.5) * hat + c * hat * hat;
  Vector6<S> xi;
  xi.template head<3>() = Vinv * t.translation;
  xi.template tail<3>() = w;
  return xi;
}

/// Adjoint of T, with exp(adjoint(T) * xi) == T * exp(xi) * T^-1.
template <typename S>
Matrix6<S> se3_adjoint(const Se3<S>& t) {
  Matrix6<S> adj = Matrix6<S>::Zero();
  adj.template block<3, 3>(0, 0) = t.rotation;
  adj.template block<3, 3>(0, 3) = so3_hat<S>(t.translation) * t.rotation;
  adj.template block<3, 3>(3, 3) = t.rotation;
  return adj;
}

using Se3d = Se3<double>;

struct CameraIntrinsics {
  double fx = 0, fy = 0;
  double cx = 0, cy = 0;
  int width = 0, height = 0;
};

constexpr double kMinProjectDepth = 1e-6;

/// Pinhole projection of a camera-frame point to pixel coordinates.
inline Eigen::Vector2d project(const CameraIntrinsics& intr, const Eigen::Vector3d& p_cam) {
  if (p_cam.z() <= kMinProjectDepth) {
    throw NonPositiveDepth("project: z = " + std::to_string(p_cam.z()));
  }
  return {intr.fx * p_cam.x() / p_cam.z() + intr.cx, intr.fy * p_cam.y() / p_cam.z() + intr.cy};
}

inline Eigen::Vector3d backproject(const CameraIntrinsics& intr, const Eigen::Vector2d& pixel,
                                   double depth) {
  if (depth <= 0.0) {
    throw NonPositiveDepth("backproject: depth = " + std::to_string(depth));
  }
  return {(pixel.x() - intr.cx) / intr.fx * depth, (pixel.y() - intr.cy) / intr.fy * depth, depth};
}

/// 2x3 Jacobian of the pinhole projection at a camera-frame point.
inline Eigen::Matrix<double, 2, 3> projection_jacobian(const CameraIntrinsics& intr,
                                                       const Eigen::Vector3d& p_cam) {
  const double z = p_cam.z();
  const double inv_z = 1.0 / z;
  const double inv_z2 = inv_z * inv_z;
  Eigen::Matrix<double, 2, 3> j;
  j << intr.fx * inv_z, 0, -intr.fx * p_cam.x() * inv_z2, 0, intr.fy * inv_z,
      -intr.fy * p_cam.y() * inv_z2;
  return j;
}

enum class CameraId { Up = 0, Mid = 1, Down = 2 };
constexpr int kNumCameras = 3;

inline const char* camera_name(CameraId id) {
  switch (id) {
    case CameraId::Up:
      return "up";
    case CameraId::Mid:
      return "mid";
    default:
      return "down";
  }
}

/// Fixed transforms between the three rig cameras. "a_from_b" maps b-frame
/// coordinates into a-frame coordinates.
struct RigExtrinsics {
  Se3d up_from_mid;
  Se3d down_from_mid;

  Se3d cam_from_mid(CameraId id) const {
    switch (id) {
      case CameraId::Up:
        return up_from_mid;
      case CameraId::Mid:
        return Se3d::identity();
      default:
        return down_from_mid;
    }
  }
};

struct TrajectoryEntry {
  double ts = 0;
  Se3d pose;  // world-from-camera
};

/// "timestamp tx ty tz qx qy qz qw" per line (quaternion scalar-last),
/// '#'-prefixed comment lines allowed.
void save_trajectory(const std::string& path, const std::vector<TrajectoryEntry>& traj);
std::vector<TrajectoryEntry> load_trajectory(const std::string& path);

std::string format_trajectory_line(const TrajectoryEntry& entry);

}  // namespace gslam
