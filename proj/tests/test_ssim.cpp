#include <doctest.h>

#include <random>

#include "gslam/ssim.hpp"

using namespace gslam;

namespace {

GrayImage random_image(std::mt19937_64& rng, int h, int w) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  GrayImage img(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) img(y, x) = u(rng);
  return img;
}

// Direct nested-loop SSIM at one pixel, renormalized Gaussian window; written
// from the formula, independent of the separable implementation.
double ssim_at(const GrayImage& a, const GrayImage& b, int py, int px) {
  const int h = static_cast<int>(a.rows()), w = static_cast<int>(a.cols());
  double wsum = 0, mu_a = 0, mu_b = 0, s_aa = 0, s_bb = 0, s_ab = 0;
  for (int dy = -kSsimRadius; dy <= kSsimRadius; ++dy) {
    for (int dx = -kSsimRadius; dx <= kSsimRadius; ++dx) {
      const int y = py + dy, x = px + dx;
      if (y < 0 || y >= h || x < 0 || x >= w) continue;
      const double weight = std::exp(-0.5 * (dx * dx + dy * dy) / (kSsimSigma * kSsimSigma));
      wsum += weight;
      mu_a += weight * a(y, x);
      mu_b += weight * b(y, x);
      s_aa += weight * a(y, x) * a(y, x);
      s_bb += weight * b(y, x) * b(y, x);
      s_ab += weight * a(y, x) * b(y, x);
    }
  }
  mu_a /= wsum;
  mu_b /= wsum;
  s_aa /= wsum;
  s_bb /= wsum;
  s_ab /= wsum;
  const double var_a = s_aa - mu_a * mu_a;
  const double var_b = s_bb - mu_b * mu_b;
  const double cov = s_ab - mu_a * mu_b;
  return ((2 * mu_a * mu_b + kSsimC1) * (2 * cov + kSsimC2)) /
         ((mu_a * mu_a + mu_b * mu_b + kSsimC1) * (var_a + var_b + kSsimC2));
}

}  // namespace

TEST_CASE("ssim_plane: identical images give exactly one everywhere") {
  std::mt19937_64 rng(5);
  const GrayImage a = random_image(rng, 12, 17);
  const auto stats = ssim_plane(a, a);
  CHECK((stats.ssim - 1.0).abs().maxCoeff() < 1e-12);
}

TEST_CASE("ssim_plane: matches the direct nested-loop formula") {
  std::mt19937_64 rng(9);
  const GrayImage a = random_image(rng, 14, 11);
  const GrayImage b = random_image(rng, 14, 11);
  const auto stats = ssim_plane(a, b);
  for (int y = 0; y < 14; ++y) {
    for (int x = 0; x < 11; ++x) {
      CHECK(stats.ssim(y, x) == doctest::Approx(ssim_at(a, b, y, x)).epsilon(1e-9));
    }
  }
}

TEST_CASE("ssim_plane: inverted checker scores strongly negative") {
  GrayImage a(12, 12);
  for (int y = 0; y < 12; ++y)
    for (int x = 0; x < 12; ++x) a(y, x) = ((x / 2 + y / 2) % 2 == 0) ? 1.0 : 0.0;
  const GrayImage b = 1.0 - a;
  CHECK(ssim_plane(a, b).ssim.mean() < 0.0);
}

TEST_CASE("ssim_backward_a: matches finite differences") {
  std::mt19937_64 rng(13);
  const int h = 9, w = 10;
  const GrayImage a = random_image(rng, h, w);
  const GrayImage b = random_image(rng, h, w);
  GrayImage upstream = random_image(rng, h, w) - 0.5;

  const auto stats = ssim_plane(a, b);
  const GrayImage grad = ssim_backward_a(stats, a, b, upstream);

  const double step = 1e-6;
  for (int y = 0; y < h; y += 2) {
    for (int x = 0; x < w; x += 3) {
      GrayImage hi = a, lo = a;
      hi(y, x) += step;
      lo(y, x) -= step;
      const double f_hi = (upstream * ssim_plane(hi, b).ssim).sum();
      const double f_lo = (upstream * ssim_plane(lo, b).ssim).sum();
      const double fd = (f_hi - f_lo) / (2 * step);
      CHECK(grad(y, x) == doctest::Approx(fd).epsilon(1e-5));
    }
  }
}
