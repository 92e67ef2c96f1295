#include <doctest.h>

#include <random>

#include "gslam/splat.hpp"
#include "oracles.hpp"

using namespace gslam;

namespace {

// Weighted sum of rendered color and depth pixels: the scalar function whose
// analytic gradient the backward pass must reproduce.
double weighted_output(const std::vector<Gaussian>& scene, const Se3d& cam_from_world,
                       const CameraIntrinsics& intr, const PixelWeights& weights) {
  const auto out = render(MapView::all(std::span<const Gaussian>(scene)), cam_from_world, intr);
  double total = 0;
  for (int ch = 0; ch < 3; ++ch) {
    total += (weights.color.plane(ch) * out.color.plane(ch)).sum();
  }
  total += (weights.depth * out.depth).sum();
  return total;
}

PixelWeights random_weights(std::mt19937_64& rng, int h, int w) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  PixelWeights weights(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      weights.color.r(y, x) = u(rng);
      weights.color.g(y, x) = u(rng);
      weights.color.b(y, x) = u(rng);
      weights.depth(y, x) = 0.3 * u(rng);
    }
  }
  return weights;
}

bool grad_close(double analytic, double fd) {
  const double abs_err = std::abs(analytic - fd);
  if (abs_err < 1e-6) return true;
  return abs_err / std::max(std::abs(fd), std::abs(analytic)) < 1e-3;
}

constexpr double kFdStep = 1e-5;

}  // namespace

TEST_CASE("render_with_gradients: zero upstream weights give zero gradients") {
  std::mt19937_64 rng(101);
  const auto intr = testing::tiny_intrinsics();
  const auto scene = testing::random_scene(rng, 5);
  PixelWeights weights(intr.height, intr.width);
  RenderGradients grads;
  render_with_gradients(MapView::all(std::span<const Gaussian>(scene)), Se3d::identity(), intr,
                        weights, grads);
  CHECK(grads.dpose.cwiseAbs().maxCoeff() == 0);
  for (const auto& g : grads.dgaussians) {
    CHECK(g.dmu.cwiseAbs().maxCoeff() == 0);
    CHECK(g.ds == 0);
    CHECK(g.dcolor.cwiseAbs().maxCoeff() == 0);
    CHECK(g.dopacity == 0);
  }
}

TEST_CASE("render_with_gradients: color gradient is the blend weight") {
  Gaussian g;
  g.mu = {0, 0, 2};
  g.s = 0.3;
  g.color = {0.2, 0.4, 0.6};
  g.opacity = 0.7;
  std::vector<Gaussian> scene{g};
  CameraIntrinsics intr{20, 20, 8, 8, 16, 16};

  PixelWeights weights(intr.height, intr.width);
  weights.color.r(8, 8) = 1.0;  // center pixel, red channel

  RenderGradients grads;
  const auto out = render_with_gradients(MapView::all(std::span<const Gaussian>(scene)),
                                         Se3d::identity(), intr, weights, grads);
  // d output_r / d color_r at the center equals the blend weight alpha*T = alpha.
  CHECK(grads.dgaussians[0].dcolor.x() == doctest::Approx(0.7));
  CHECK(grads.dgaussians[0].dcolor.y() == 0);
  CHECK(grads.dgaussians[0].dcolor.z() == 0);
  CHECK(out.color.r(8, 8) == doctest::Approx(0.7 * 0.2));
}

TEST_CASE("render_with_gradients: matches central finite differences") {
  std::mt19937_64 rng(103);
  const auto intr = testing::tiny_intrinsics();

  for (int trial = 0; trial < 8; ++trial) {
    Se3d cam = Se3d::identity();
    cam.translation = {0.05, -0.02, 0.01};
    std::vector<Gaussian> scene = testing::fd_safe_random_scene(rng, 3, cam, intr);
    const PixelWeights weights = random_weights(rng, intr.height, intr.width);

    RenderGradients grads;
    render_with_gradients(MapView::all(std::span<const Gaussian>(scene)), cam, intr, weights,
                          grads);

    // Pose tangent.
    for (int i = 0; i < 6; ++i) {
      Vector6d xi = Vector6d::Zero();
      xi[i] = kFdStep;
      const double hi = weighted_output(scene, se3_exp(xi) * cam, intr, weights);
      xi[i] = -kFdStep;
      const double lo = weighted_output(scene, se3_exp(xi) * cam, intr, weights);
      const double fd = (hi - lo) / (2 * kFdStep);
      INFO("pose component ", i);
      CHECK(grad_close(grads.dpose[i], fd));
    }

    // Per-Gaussian parameters.
    for (std::size_t k = 0; k < scene.size(); ++k) {
      for (int i = 0; i < 3; ++i) {
        auto perturbed = scene;
        perturbed[k].mu[i] += kFdStep;
        const double hi = weighted_output(perturbed, cam, intr, weights);
        perturbed[k].mu[i] -= 2 * kFdStep;
        const double lo = weighted_output(perturbed, cam, intr, weights);
        INFO("gaussian ", k, " mu[", i, "]");
        CHECK(grad_close(grads.dgaussians[k].dmu[i], (hi - lo) / (2 * kFdStep)));
      }
      {
        auto perturbed = scene;
        perturbed[k].s += kFdStep;
        const double hi = weighted_output(perturbed, cam, intr, weights);
        perturbed[k].s -= 2 * kFdStep;
        const double lo = weighted_output(perturbed, cam, intr, weights);
        INFO("gaussian ", k, " scale");
        CHECK(grad_close(grads.dgaussians[k].ds, (hi - lo) / (2 * kFdStep)));
      }
      for (int i = 0; i < 3; ++i) {
        auto perturbed = scene;
        perturbed[k].color[i] += kFdStep;
        const double hi = weighted_output(perturbed, cam, intr, weights);
        perturbed[k].color[i] -= 2 * kFdStep;
        const double lo = weighted_output(perturbed, cam, intr, weights);
        INFO("gaussian ", k, " color[", i, "]");
        CHECK(grad_close(grads.dgaussians[k].dcolor[i], (hi - lo) / (2 * kFdStep)));
      }
      {
        auto perturbed = scene;
        perturbed[k].opacity += kFdStep;
        const double hi = weighted_output(perturbed, cam, intr, weights);
        perturbed[k].opacity -= 2 * kFdStep;
        const double lo = weighted_output(perturbed, cam, intr, weights);
        INFO("gaussian ", k, " opacity");
        CHECK(grad_close(grads.dgaussians[k].dopacity, (hi - lo) / (2 * kFdStep)));
      }
    }
  }
}
