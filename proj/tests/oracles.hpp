// Test-only reference implementations, kept independent of the production
// rasterizer: straightforward nested loops, no tiling, no early termination.
#pragma once

#include <algorithm>
#include <random>
#include <vector>

#include "gslam/splat.hpp"

namespace gslam::testing {

// Per-pixel blending reference evaluated directly from the formulas: project
// each Gaussian, sort by depth, alpha-composite with the 3-sigma cutoff but
// without transmittance early-out.
inline RenderOutput brute_force_render(const std::vector<Gaussian>& gaussians,
                                       const Se3d& cam_from_world,
                                       const CameraIntrinsics& intr) {
  struct Entry {
    Eigen::Vector2d mu;
    Eigen::Matrix2d cov_inv;
    double z, opacity;
    Eigen::Vector3d color;
    std::size_t order;
  };
  std::vector<Entry> entries;
  for (std::size_t k = 0; k < gaussians.size(); ++k) {
    const Gaussian& g = gaussians[k];
    const Eigen::Vector3d x = cam_from_world * g.mu;
    if (x.z() <= kNearPlane) continue;
    Entry e;
    e.z = x.z();
    e.mu = {intr.fx * x.x() / x.z() + intr.cx, intr.fy * x.y() / x.z() + intr.cy};
    Eigen::Matrix<double, 2, 3> j;
    j << intr.fx / x.z(), 0, -intr.fx * x.x() / (x.z() * x.z()), 0, intr.fy / x.z(),
        -intr.fy * x.y() / (x.z() * x.z());
    const Eigen::Matrix2d cov = g.s * g.s * (j * j.transpose());
    const double tr = cov(0, 0) + cov(1, 1);
    const double det = cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(1, 0);
    const double disc = std::sqrt(std::max(0.25 * tr * tr - det, 0.0));
    const double lmin = 0.5 * tr - disc, lmax = 0.5 * tr + disc;
    if (!(lmin > 0) || lmax > kMaxCondition * lmin) continue;
    e.cov_inv = cov.inverse();
    e.opacity = g.opacity;
    e.color = g.color;
    e.order = k;
    entries.push_back(e);
  }
  std::stable_sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    return a.z != b.z ? a.z < b.z : a.order < b.order;
  });

  RenderOutput out;
  out.color = ColorImage(intr.height, intr.width);
  out.depth = GrayImage::Zero(intr.height, intr.width);
  out.silhouette = GrayImage::Zero(intr.height, intr.width);
  for (int y = 0; y < intr.height; ++y) {
    for (int x = 0; x < intr.width; ++x) {
      double transmittance = 1.0;
      Eigen::Vector3d color = Eigen::Vector3d::Zero();
      double premul = 0, sil = 0;
      for (const auto& e : entries) {
        const Eigen::Vector2d d(x - e.mu.x(), y - e.mu.y());
        const double q = d.dot(e.cov_inv * d);
        if (q > 9.0) continue;
        const double alpha = e.opacity * std::exp(-0.5 * q);
        color += alpha * transmittance * e.color;
        premul += alpha * transmittance * e.z;
        sil += alpha * transmittance;
        transmittance *= (1.0 - alpha);
      }
      out.color.set_pixel(y, x, color);
      out.silhouette(y, x) = sil;
      out.depth(y, x) = premul / std::max(sil, 1e-6);
    }
  }
  return out;
}

inline std::vector<Gaussian> random_scene(std::mt19937_64& rng, int count,
                                          double depth_min = 1.0, double depth_max = 4.0) {
  std::uniform_real_distribution<double> xy(-0.8, 0.8), zd(depth_min, depth_max),
      scale(0.05, 0.25), col(0.05, 0.95), opa(0.2, 0.85);
  std::vector<Gaussian> scene;
  for (int k = 0; k < count; ++k) {
    Gaussian g;
    const double z = zd(rng);
    g.mu = {xy(rng) * z, xy(rng) * z * 0.7, z};
    g.s = scale(rng);
    g.color = {col(rng), col(rng), col(rng)};
    g.opacity = opa(rng);
    g.anchor_ts = k;
    scene.push_back(g);
  }
  return scene;
}

// Central finite differences are only meaningful away from the renderer's
// discontinuities: the 3-sigma truncation (a jump, since normalized depth
// snaps to the splat depth when a Gaussian is a pixel's only coverage) and
// the transmittance early-out. A scene is FD-safe when no (pixel, Gaussian)
// pair sits within the step window of either boundary.
inline bool fd_safe_scene(const std::vector<Gaussian>& gaussians, const Se3d& cam_from_world,
                          const CameraIntrinsics& intr, double q_margin = 1e-2,
                          double t_margin = 3e-5) {
  struct Entry {
    Eigen::Vector2d mu;
    Eigen::Matrix2d cov_inv;
    double z, opacity;
    std::size_t order;
  };
  std::vector<Entry> entries;
  for (std::size_t k = 0; k < gaussians.size(); ++k) {
    const auto proj = project_gaussian(gaussians[k], cam_from_world, intr);
    if (!proj) continue;
    entries.push_back(
        {proj->mu_image, proj->sigma_image.inverse(), proj->depth_cam, gaussians[k].opacity, k});
  }
  std::stable_sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    return a.z != b.z ? a.z < b.z : a.order < b.order;
  });
  for (int y = 0; y < intr.height; ++y) {
    for (int x = 0; x < intr.width; ++x) {
      double transmittance = 1.0;
      for (const auto& e : entries) {
        const Eigen::Vector2d d(x - e.mu.x(), y - e.mu.y());
        const double q = d.dot(e.cov_inv * d);
        if (std::abs(q - 9.0) < q_margin) return false;
        if (q > 9.0) continue;
        transmittance *= (1.0 - e.opacity * std::exp(-0.5 * q));
        if (std::abs(transmittance - 1e-4) < t_margin) return false;
        if (transmittance < 1e-4) break;
      }
    }
  }
  return true;
}

inline std::vector<Gaussian> fd_safe_random_scene(std::mt19937_64& rng, int count,
                                                  const Se3d& cam_from_world,
                                                  const CameraIntrinsics& intr) {
  for (int attempt = 0; attempt < 100; ++attempt) {
    auto scene = random_scene(rng, count);
    if (fd_safe_scene(scene, cam_from_world, intr)) return scene;
  }
  throw std::runtime_error("no FD-safe scene found");
}

inline CameraIntrinsics tiny_intrinsics(int width = 8, int height = 8) {
  CameraIntrinsics intr;
  intr.width = width;
  intr.height = height;
  intr.fx = intr.fy = 6.0;
  intr.cx = width / 2.0;
  intr.cy = height / 2.0;
  return intr;
}

}  // namespace gslam::testing
