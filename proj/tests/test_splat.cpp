#include <doctest.h>

#include <filesystem>
#include <random>

#include "gslam/splat.hpp"
#include "oracles.hpp"

using namespace gslam;

namespace {

double max_abs_diff(const RenderOutput& a, const RenderOutput& b) {
  double m = 0;
  for (int ch = 0; ch < 3; ++ch) {
    m = std::max(m, (a.color.plane(ch) - b.color.plane(ch)).abs().maxCoeff());
  }
  m = std::max(m, (a.depth - b.depth).abs().maxCoeff());
  m = std::max(m, (a.silhouette - b.silhouette).abs().maxCoeff());
  return m;
}

GaussianMap map_from(const std::vector<Gaussian>& gaussians) {
  GaussianMap map;
  for (const auto& g : gaussians) map.add(g);
  return map;
}

}  // namespace

TEST_CASE("project_gaussian: on-axis analytic case") {
  Gaussian g;
  g.mu = {0, 0, 2};
  g.s = 0.1;
  CameraIntrinsics intr{100, 100, 50, 50, 100, 100};
  const auto proj = project_gaussian(g, Se3d::identity(), intr);
  REQUIRE(proj.has_value());
  CHECK((proj->mu_image - Eigen::Vector2d(50, 50)).norm() < 1e-12);
  CHECK(proj->depth_cam == doctest::Approx(2.0));
  CHECK(proj->sigma_image(0, 0) == doctest::Approx(25.0));
  CHECK(proj->sigma_image(1, 1) == doctest::Approx(25.0));
  CHECK(std::abs(proj->sigma_image(0, 1)) < 1e-12);
}

TEST_CASE("project_gaussian: translated camera") {
  Gaussian g;
  g.mu = {0, 0, 2};
  g.s = 0.1;
  CameraIntrinsics intr{100, 100, 50, 50, 100, 100};
  Se3d cam_from_world = Se3d::identity();
  cam_from_world.translation = {-0.5, 0, 0};  // point lands at (-0.5, 0, 2) in camera
  const auto proj = project_gaussian(g, cam_from_world, intr);
  REQUIRE(proj.has_value());
  CHECK((proj->mu_image - Eigen::Vector2d(25, 50)).norm() < 1e-9);
}

TEST_CASE("project_gaussian: behind camera returns nullopt") {
  Gaussian g;
  g.mu = {0, 0, -1};
  CameraIntrinsics intr{100, 100, 50, 50, 100, 100};
  CHECK(!project_gaussian(g, Se3d::identity(), intr).has_value());
}

TEST_CASE("project_gaussian: covariance matches finite-difference propagation") {
  // Propagate the isotropic world covariance through a numerically
  // differentiated projection and compare.
  std::mt19937_64 rng(41);
  CameraIntrinsics intr{80, 95, 40, 30, 80, 60};
  std::uniform_real_distribution<double> u(-0.6, 0.6), zd(0.8, 5.0), sd(0.02, 0.3);
  for (int trial = 0; trial < 50; ++trial) {
    Gaussian g;
    const double z = zd(rng);
    g.mu = {u(rng) * z, u(rng) * z, z};
    g.s = sd(rng);
    const auto proj = project_gaussian(g, Se3d::identity(), intr);
    REQUIRE(proj.has_value());

    const double h = 1e-6;
    Eigen::Matrix<double, 2, 3> j_fd;
    for (int k = 0; k < 3; ++k) {
      Eigen::Vector3d hi = g.mu, lo = g.mu;
      hi[k] += h;
      lo[k] -= h;
      j_fd.col(k) = (project(intr, hi) - project(intr, lo)) / (2 * h);
    }
    const Eigen::Matrix2d sigma_fd = g.s * g.s * (j_fd * j_fd.transpose());
    const double rel =
        (proj->sigma_image - sigma_fd).norm() / std::max(sigma_fd.norm(), 1e-12);
    CHECK(rel < 1e-4);
  }
}

TEST_CASE("render: empty map gives zero buffers") {
  const GaussianMap map;
  const auto out = render(MapView::all(map), Se3d::identity(), testing::tiny_intrinsics());
  CHECK(out.color.r.abs().maxCoeff() == 0);
  CHECK(out.depth.abs().maxCoeff() == 0);
  CHECK(out.silhouette.abs().maxCoeff() == 0);
}

TEST_CASE("render: single opaque on-axis splat") {
  Gaussian g;
  g.mu = {0, 0, 2};
  g.s = 0.3;
  g.color = {1, 0, 0};
  g.opacity = 1.0;
  GaussianMap map;
  map.add(g);
  CameraIntrinsics intr{20, 20, 8, 8, 16, 16};
  const auto out = render(MapView::all(map), Se3d::identity(), intr);
  CHECK(out.color.r(8, 8) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(out.color.g(8, 8) == doctest::Approx(0.0));
  CHECK(out.silhouette(8, 8) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(out.depth(8, 8) == doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("render: matches the brute-force blending oracle on random scenes") {
  std::mt19937_64 rng(43);
  const auto intr = testing::tiny_intrinsics();
  for (int scene_idx = 0; scene_idx < 20; ++scene_idx) {
    const auto scene = testing::random_scene(rng, 5);
    const GaussianMap map = map_from(scene);
    const auto fast = render(MapView::all(map), Se3d::identity(), intr);
    const auto reference = testing::brute_force_render(scene, Se3d::identity(), intr);
    CHECK(max_abs_diff(fast, reference) < 1e-3);
  }
}

TEST_CASE("render: gauge invariance under a rigid world motion") {
  std::mt19937_64 rng(47);
  const auto intr = testing::tiny_intrinsics();
  const auto scene = testing::random_scene(rng, 8);
  const GaussianMap map = map_from(scene);

  Vector6d xi;
  xi << 0.4, -0.2, 0.1, 0.3, -0.5, 0.2;
  const Se3d g_motion = se3_exp(xi);

  std::vector<Gaussian> moved = scene;
  for (auto& g : moved) g.mu = g_motion * g.mu;
  const GaussianMap moved_map = map_from(moved);

  Se3d cam = Se3d::identity();
  cam.translation = {0.1, 0, -0.5};
  const auto a = render(MapView::all(map), cam, intr);
  const auto b = render(MapView::all(moved_map), cam * g_motion.inverse(), intr);
  CHECK(max_abs_diff(a, b) < 1e-6);
}

TEST_CASE("render: identical-depth splats blend in stable view order") {
  Gaussian front;
  front.mu = {0, 0, 2};
  front.s = 0.4;
  front.opacity = 0.6;
  front.color = {1, 0, 0};
  Gaussian back = front;
  back.color = {0, 1, 0};

  GaussianMap ab;
  ab.add(front);
  ab.add(back);
  GaussianMap ba;
  ba.add(back);
  ba.add(front);

  CameraIntrinsics intr{20, 20, 8, 8, 16, 16};
  const auto out_ab = render(MapView::all(ab), Se3d::identity(), intr);
  const auto out_ba = render(MapView::all(ba), Se3d::identity(), intr);
  // First-in-view wins the blend at equal depth.
  CHECK(out_ab.color.r(8, 8) > out_ab.color.g(8, 8));
  CHECK(out_ba.color.g(8, 8) > out_ba.color.r(8, 8));

  // Bit-identical rerun.
  const auto again = render(MapView::all(ab), Se3d::identity(), intr);
  CHECK((again.color.r == out_ab.color.r).all());
  CHECK((again.depth == out_ab.depth).all());
}

TEST_CASE("render: per-pixel blend weights sum to at most one") {
  std::mt19937_64 rng(53);
  const auto intr = testing::tiny_intrinsics();
  for (int trial = 0; trial < 10; ++trial) {
    const GaussianMap map = map_from(testing::random_scene(rng, 10));
    const auto out = render(MapView::all(map), Se3d::identity(), intr);
    CHECK(out.silhouette.maxCoeff() <= 1.0 + 1e-12);
    CHECK(out.silhouette.minCoeff() >= 0.0);
  }
}

TEST_CASE("render: transmittance is non-increasing over the blend sequence") {
  std::mt19937_64 rng(97);
  const auto intr = testing::tiny_intrinsics();
  const auto scene = testing::random_scene(rng, 10);
  // Walk the blend at a few pixels with the oracle's formulas and check the
  // running transmittance directly.
  for (int y = 0; y < intr.height; y += 3) {
    for (int x = 0; x < intr.width; x += 3) {
      double transmittance = 1.0;
      std::vector<double> history;
      for (const auto& g : scene) {
        const auto proj = project_gaussian(g, Se3d::identity(), intr);
        if (!proj) continue;
        const Eigen::Vector2d d(x - proj->mu_image.x(), y - proj->mu_image.y());
        const double q = d.dot(proj->sigma_image.inverse() * d);
        if (q > kChi2Cutoff) continue;
        transmittance *= (1.0 - g.opacity * std::exp(-0.5 * q));
        history.push_back(transmittance);
      }
      for (std::size_t k = 1; k < history.size(); ++k) CHECK(history[k] <= history[k - 1]);
    }
  }
}

TEST_CASE("partition_by_timestamp: boundary uses >= for history") {
  GaussianMap map;
  for (const std::int64_t ts : {0, 59, 60, 200}) {
    Gaussian g;
    g.anchor_ts = ts;
    map.add(g);
  }
  const auto part = partition_by_timestamp(map, 0, 60);
  REQUIRE(part.history.size() == 2);
  REQUIRE(part.novel.size() == 2);
  CHECK(map.at(part.history[0]).anchor_ts == 60);
  CHECK(map.at(part.history[1]).anchor_ts == 200);
  CHECK(map.at(part.novel[0]).anchor_ts == 0);
  CHECK(map.at(part.novel[1]).anchor_ts == 59);
}

TEST_CASE("partition_by_timestamp: same-timestamp map is all novel") {
  GaussianMap map;
  for (int k = 0; k < 5; ++k) {
    Gaussian g;
    g.anchor_ts = 42;
    map.add(g);
  }
  const auto part = partition_by_timestamp(map, 42, 60);
  CHECK(part.history.empty());
  CHECK(part.novel.size() == 5);
}

TEST_CASE("partition_by_timestamp: equals a brute-force filter on random anchors") {
  std::mt19937_64 rng(59);
  std::uniform_int_distribution<std::int64_t> ts_dist(0, 500);
  GaussianMap map;
  for (int k = 0; k < 300; ++k) {
    Gaussian g;
    g.anchor_ts = ts_dist(rng);
    map.add(g);
  }
  for (const std::int64_t t_c : {0L, 100L, 250L, 500L}) {
    const std::int64_t tau = 60;
    const auto part = partition_by_timestamp(map, t_c, tau);
    std::vector<std::uint32_t> expect_history, expect_novel;
    for (std::uint32_t i = 0; i < map.size(); ++i) {
      if (std::llabs(map.at(i).anchor_ts - t_c) >= tau) {
        expect_history.push_back(i);
      } else {
        expect_novel.push_back(i);
      }
    }
    CHECK(part.history == expect_history);
    CHECK(part.novel == expect_novel);
    CHECK(part.history.size() + part.novel.size() == map.size());
  }
}

TEST_CASE("map checkpoint: lossless round trip") {
  std::mt19937_64 rng(61);
  const GaussianMap map = map_from(testing::random_scene(rng, 40));
  const auto path = std::filesystem::temp_directory_path() / "gslam_map_test.gslm";
  save_map(path.string(), map);
  const GaussianMap loaded = load_map(path.string());
  REQUIRE(loaded.size() == map.size());
  for (std::uint32_t i = 0; i < map.size(); ++i) {
    CHECK(map.at(i).mu == loaded.at(i).mu);  // bit-exact
    CHECK(map.at(i).s == loaded.at(i).s);
    CHECK(map.at(i).color == loaded.at(i).color);
    CHECK(map.at(i).opacity == loaded.at(i).opacity);
    CHECK(map.at(i).anchor_ts == loaded.at(i).anchor_ts);
  }
  std::filesystem::remove(path);
}

TEST_CASE("map checkpoint: truncated file raises FormatError") {
  std::mt19937_64 rng(67);
  const GaussianMap map = map_from(testing::random_scene(rng, 10));
  const auto path = std::filesystem::temp_directory_path() / "gslam_map_trunc.gslm";
  save_map(path.string(), map);
  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 9);
  CHECK_THROWS_AS(load_map(path.string()), FormatError);
  std::filesystem::remove(path);
}

TEST_CASE("timestamp index covers every gaussian exactly once") {
  std::mt19937_64 rng(71);
  const GaussianMap map = map_from(testing::random_scene(rng, 100));
  std::vector<int> seen(map.size(), 0);
  for (const auto& [ts, indices] : map.timestamp_index()) {
    for (const auto idx : indices) {
      REQUIRE(idx < map.size());
      CHECK(map.at(idx).anchor_ts == ts);
      ++seen[idx];
    }
  }
  for (const int count : seen) CHECK(count == 1);
}
