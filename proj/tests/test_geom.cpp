#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "gslam/geom.hpp"

using namespace gslam;

namespace {

Se3d random_pose(std::mt19937_64& rng, double rot_range = 2.5, double trans_range = 2.0) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Vector6d xi;
  xi << trans_range * u(rng), trans_range * u(rng), trans_range * u(rng), rot_range * u(rng),
      rot_range * u(rng), rot_range * u(rng);
  return se3_exp(xi);
}

double pose_distance(const Se3d& a, const Se3d& b) {
  return (a.rotation - b.rotation).cwiseAbs().maxCoeff() +
         (a.translation - b.translation).cwiseAbs().maxCoeff();
}

}  // namespace

TEST_CASE("compose: identity is neutral and inverse cancels") {
  std::mt19937_64 rng(7);
  const Se3d t = random_pose(rng);
  CHECK(pose_distance(Se3d::identity() * t, t) < 1e-12);
  CHECK(pose_distance(t * Se3d::identity(), t) < 1e-12);
  CHECK(pose_distance(t * t.inverse(), Se3d::identity()) < 1e-9);
  CHECK(pose_distance(t.inverse() * t, Se3d::identity()) < 1e-9);
}

TEST_CASE("compose: point-transport oracle on random pose pairs") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  for (int trial = 0; trial < 20; ++trial) {
    const Se3d a = random_pose(rng), b = random_pose(rng);
    const Se3d ab = a * b;
    for (int k = 0; k < 100; ++k) {
      const Eigen::Vector3d p(u(rng), u(rng), u(rng));
      CHECK((ab * p - a * (b * p)).norm() < 1e-9);
    }
  }
}

TEST_CASE("compose: group laws hold on random samples") {
  std::mt19937_64 rng(13);
  for (int k = 0; k < 1000; ++k) {
    const Se3d a = random_pose(rng), b = random_pose(rng), c = random_pose(rng);
    CHECK(pose_distance((a * b) * c, a * (b * c)) < 1e-9);
  }
}

TEST_CASE("compose: rotation stays orthonormal over a 1e4 chain") {
  std::mt19937_64 rng(17);
  Se3d chain = Se3d::identity();
  const Se3d step = random_pose(rng, 0.02, 0.01);
  for (int k = 0; k < 10000; ++k) chain = chain * step;
  const Eigen::Matrix3d should_be_identity = chain.rotation.transpose() * chain.rotation;
  CHECK((should_be_identity - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(chain.rotation.determinant() == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("se3_exp: zero maps to identity") {
  const Se3d t = se3_exp<double>(Vector6d::Zero());
  CHECK(pose_distance(t, Se3d::identity()) < 1e-15);
}

TEST_CASE("se3_exp: quarter turn about z") {
  Vector6d xi;
  xi << 0, 0, 0, 0, 0, M_PI / 2;
  const Se3d t = se3_exp(xi);
  CHECK(t.translation.norm() < 1e-15);
  Eigen::Matrix3d expected;
  expected << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  CHECK((t.rotation - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("se3 exp/log round trip for 1000 random tangents") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int k = 0; k < 1000; ++k) {
    Vector6d xi;
    Eigen::Vector3d w(u(rng), u(rng), u(rng));
    w *= 3.0 / std::sqrt(3.0);  // keep |rot| < 3
    xi << 2 * u(rng), 2 * u(rng), 2 * u(rng), w.x(), w.y(), w.z();
    const Vector6d back = se3_log(se3_exp(xi));
    CHECK((back - xi).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("so3_log handles near-pi rotations") {
  const Eigen::Vector3d axis = Eigen::Vector3d(1, 2, 3).normalized();
  for (const double theta : {3.0, 3.1, M_PI - 1e-4}) {
    const Eigen::Matrix3d r = so3_exp<double>(axis * theta);
    const Eigen::Vector3d w = so3_log(r);
    CHECK((so3_exp(w) - r).cwiseAbs().maxCoeff() < 1e-9);
  }
  // Within rounding distance of pi itself the axis is still recovered, just
  // with first-order accuracy.
  const Eigen::Matrix3d r = so3_exp<double>(axis * (M_PI - 1e-7));
  CHECK((so3_exp(so3_log(r)) - r).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("se3_adjoint matches its defining identity") {
  std::mt19937_64 rng(29);
  for (int k = 0; k < 50; ++k) {
    const Se3d t = random_pose(rng);
    Vector6d xi = 1e-3 * random_pose(rng).translation.homogeneous().norm() * Vector6d::Ones();
    std::uniform_real_distribution<double> u(-1e-2, 1e-2);
    for (int i = 0; i < 6; ++i) xi[i] = u(rng);
    const Se3d lhs = t * se3_exp(xi) * t.inverse();
    const Se3d rhs = se3_exp<double>(se3_adjoint(t) * xi);
    CHECK(pose_distance(lhs, rhs) < 1e-6);
  }
}

TEST_CASE("project: analytic cases") {
  CameraIntrinsics intr{100, 100, 50, 50, 100, 100};
  CHECK((project(intr, {0, 0, 1}) - Eigen::Vector2d(50, 50)).norm() < 1e-12);
  CHECK((project(intr, {0.5, 0, 1}) - Eigen::Vector2d(100, 50)).norm() < 1e-12);
  CHECK_THROWS_AS(project(intr, {0, 0, 0}), NonPositiveDepth);
  CHECK_THROWS_AS(project(intr, {0, 0, -1}), NonPositiveDepth);
}

TEST_CASE("backproject: analytic cases and round trips") {
  CameraIntrinsics intr{100, 100, 50, 50, 100, 100};
  CHECK((backproject(intr, {50, 50}, 2.0) - Eigen::Vector3d(0, 0, 2)).norm() < 1e-12);
  CHECK((backproject(intr, {100, 50}, 1.0) - Eigen::Vector3d(0.5, 0, 1)).norm() < 1e-12);
  CHECK_THROWS_AS(backproject(intr, {50, 50}, 0.0), NonPositiveDepth);

  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> du(0.0, 99.0), dd(0.1, 10.0);
  for (int k = 0; k < 500; ++k) {
    const Eigen::Vector2d px(du(rng), du(rng));
    const double depth = dd(rng);
    const Eigen::Vector3d p = backproject(intr, px, depth);
    CHECK((project(intr, p) - px).norm() < 1e-9);
    // And the other direction.
    const Eigen::Vector3d q(0.3 * du(rng) / 100, 0.3 * du(rng) / 100, depth);
    const Eigen::Vector2d px2 = project(intr, q);
    CHECK((backproject(intr, px2, q.z()) - q).norm() < 1e-9);
  }
}

TEST_CASE("trajectory text format round trip with comments") {
  std::mt19937_64 rng(37);
  std::vector<TrajectoryEntry> traj;
  for (int k = 0; k < 10; ++k) traj.push_back({static_cast<double>(k), random_pose(rng)});
  const auto path = std::filesystem::temp_directory_path() / "gslam_traj_test.txt";
  save_trajectory(path.string(), traj);
  const auto loaded = load_trajectory(path.string());
  REQUIRE(loaded.size() == traj.size());
  for (std::size_t k = 0; k < traj.size(); ++k) {
    CHECK(loaded[k].ts == doctest::Approx(traj[k].ts));
    CHECK(pose_distance(loaded[k].pose, traj[k].pose) < 1e-6);
  }
  std::filesystem::remove(path);
}

TEST_CASE("trajectory loader rejects malformed lines") {
  const auto path = std::filesystem::temp_directory_path() / "gslam_traj_bad.txt";
  {
    std::ofstream out(path);
    out << "# comment\n0 1 2 3\n";
  }
  CHECK_THROWS_AS(load_trajectory(path.string()), FormatError);
  std::filesystem::remove(path);
}
