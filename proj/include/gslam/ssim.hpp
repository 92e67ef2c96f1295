#pragma once

#include "gslam/image.hpp"

namespace gslam {

// 11x11 Gaussian window, sigma 1.5, constants C1=(0.01)^2 C2=(0.03)^2 on unit
// dynamic range. Windows are renormalized at image borders so ssim(a,a) == 1
// exactly everywhere.
constexpr int kSsimRadius = 5;
constexpr double kSsimSigma = 1.5;
constexpr double kSsimC1 = 0.01 * 0.01;
constexpr double kSsimC2 = 0.03 * 0.03;

/// Window statistics kept around for the backward pass.
struct SsimStats {
  GrayImage mu_a, mu_b;
  GrayImage s_aa, s_bb, s_ab;  // windowed second moments (not centered)
  GrayImage ssim;              // per-pixel SSIM map
};

/// Per-pixel SSIM map between two single-channel images.
SsimStats ssim_plane(const GrayImage& a, const GrayImage& b);

/// Gradient of sum_p upstream(p) * ssim(p) with respect to image a.
GrayImage ssim_backward_a(const SsimStats& stats, const GrayImage& a, const GrayImage& b,
                          const GrayImage& upstream);

/// Border-renormalized Gaussian blur used by the SSIM window stats.
GrayImage gaussian_window_mean(const GrayImage& img);

}  // namespace gslam
