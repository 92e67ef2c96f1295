#include "gslam/ssim.hpp"

#include <array>
#include <cmath>

namespace gslam {

namespace {

std::array<double, 2 * kSsimRadius + 1> window_kernel() {
  std::array<double, 2 * kSsimRadius + 1> k{};
  double sum = 0;
  for (int i = -kSsimRadius; i <= kSsimRadius; ++i) {
    const double v = std::exp(-0.5 * i * i / (kSsimSigma * kSsimSigma));
    k[i + kSsimRadius] = v;
    sum += v;
  }
  for (auto& v : k) v /= sum;
  return k;
}

// Zero-padded separable convolution with the symmetric window kernel.
GrayImage conv_zero(const GrayImage& img) {
  static const auto k = window_kernel();
  const int h = static_cast<int>(img.rows()), w = static_cast<int>(img.cols());
  GrayImage tmp = GrayImage::Zero(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      const int lo = std::max(-kSsimRadius, -x), hi = std::min(kSsimRadius, w - 1 - x);
      for (int d = lo; d <= hi; ++d) acc += k[d + kSsimRadius] * img(y, x + d);
      tmp(y, x) = acc;
    }
  }
  GrayImage out = GrayImage::Zero(h, w);
  for (int x = 0; x < w; ++x) {
    for (int y = 0; y < h; ++y) {
      double acc = 0;
      const int lo = std::max(-kSsimRadius, -y), hi = std::min(kSsimRadius, h - 1 - y);
      for (int d = lo; d <= hi; ++d) acc += k[d + kSsimRadius] * tmp(y + d, x);
      out(y, x) = acc;
    }
  }
  return out;
}

GrayImage window_normalizer(int h, int w) {
  return conv_zero(GrayImage::Ones(h, w));
}

}  // namespace

GrayImage gaussian_window_mean(const GrayImage& img) {
  const auto n = window_normalizer(static_cast<int>(img.rows()), static_cast<int>(img.cols()));
  return conv_zero(img) / n;
}

SsimStats ssim_plane(const GrayImage& a, const GrayImage& b) {
  require_same_shape(a, b, "ssim");
  const int h = static_cast<int>(a.rows()), w = static_cast<int>(a.cols());
  const GrayImage n = window_normalizer(h, w);
  SsimStats st;
  st.mu_a = conv_zero(a) / n;
  st.mu_b = conv_zero(b) / n;
  st.s_aa = conv_zero(a.square()) / n;
  st.s_bb = conv_zero(b.square()) / n;
  st.s_ab = conv_zero(a * b) / n;
  const GrayImage var_a = st.s_aa - st.mu_a.square();
  const GrayImage var_b = st.s_bb - st.mu_b.square();
  const GrayImage cov = st.s_ab - st.mu_a * st.mu_b;
  const GrayImage num = (2.0 * st.mu_a * st.mu_b + kSsimC1) * (2.0 * cov + kSsimC2);
  const GrayImage den =
      (st.mu_a.square() + st.mu_b.square() + kSsimC1) * (var_a + var_b + kSsimC2);
  st.ssim = num / den;
  return st;
}

GrayImage ssim_backward_a(const SsimStats& st, const GrayImage& a, const GrayImage& b,
                          const GrayImage& upstream) {
  const int h = static_cast<int>(a.rows()), w = static_cast<int>(a.cols());
  const GrayImage n = window_normalizer(h, w);

  const GrayImage var_a = st.s_aa - st.mu_a.square();
  const GrayImage var_b = st.s_bb - st.mu_b.square();
  const GrayImage cov = st.s_ab - st.mu_a * st.mu_b;
  const GrayImage a1 = 2.0 * st.mu_a * st.mu_b + kSsimC1;
  const GrayImage a2 = 2.0 * cov + kSsimC2;
  const GrayImage b1 = st.mu_a.square() + st.mu_b.square() + kSsimC1;
  const GrayImage b2 = var_a + var_b + kSsimC2;
  const GrayImage inv_b1b2 = (b1 * b2).inverse();

  // Partials of SSIM w.r.t. the window stats (mu_a, s_aa, s_ab), with the
  // centered moments expanded in terms of the raw ones.
  const GrayImage g_saa = -st.ssim / b2;
  const GrayImage g_sab = 2.0 * a1 * inv_b1b2;
  const GrayImage g_mua = 2.0 * st.mu_b * a2 * inv_b1b2 - 2.0 * st.ssim * st.mu_a / b1 -
                          2.0 * st.mu_a * g_saa - st.mu_b * g_sab;

  // Each stat is a border-renormalized blur of a pointwise function of the
  // inputs, so its adjoint is a plain zero-padded blur of upstream/n.
  const GrayImage u = upstream / n;
  const GrayImage t_mu = conv_zero(u * g_mua);
  const GrayImage t_saa = conv_zero(u * g_saa);
  const GrayImage t_sab = conv_zero(u * g_sab);
  return t_mu + 2.0 * a * t_saa + b * t_sab;
}

}  // namespace gslam
