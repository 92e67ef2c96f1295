#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gslam/tracker.hpp"

namespace gslam {

/// Textured planar rectangle: origin + a*edge_u + b*edge_v for a, b in [0,1].
struct TexturedPatch {
  enum class Texture { Checker, Gradient, Uniform };

  Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  Eigen::Vector3d edge_u = Eigen::Vector3d::UnitX();
  Eigen::Vector3d edge_v = Eigen::Vector3d::UnitZ();
  Texture texture = Texture::Checker;
  Eigen::Vector3d color_a = Eigen::Vector3d::Ones();
  Eigen::Vector3d color_b = Eigen::Vector3d::Zero();
  double cells = 8;  // checker cells across each edge

  Eigen::Vector3d shade(double u, double v) const;
};

/// Procedural desk-scale scene: a closed room of textured wall/floor/ceiling
/// patches plus a few interior panels for parallax.
struct SceneModel {
  std::vector<TexturedPatch> patches;
};

SceneModel generate_scene(std::uint64_t seed);

struct RayHit {
  double t = 0;  // ray parameter (camera z-depth when dir has unit z)
  Eigen::Vector3d color = Eigen::Vector3d::Zero();
};

/// Nearest patch intersection along origin + t*dir, t > eps.
std::optional<RayHit> cast_ray(const SceneModel& scene, const Eigen::Vector3d& origin,
                               const Eigen::Vector3d& dir);

struct SequenceSpec {
  int frames = 120;
  double deg_per_frame = 3.0;
  CameraIntrinsics intr;
  RigExtrinsics rig;
  double rig_height = 1.5;       // rotation axis origin above the floor
  double cam_radius = 0.25;      // camera offset from the rotation axis
  double depth_noise_sigma = 0;  // meters
  double jitter_sigma = 0;       // radians, rotation-axis perturbation
  std::uint64_t seed = 0;
};

/// Intrinsics with a 60 degree horizontal field of view.
CameraIntrinsics default_intrinsics(int width, int height);

/// Up/down cameras pitched +/- pitch_deg relative to mid.
RigExtrinsics default_rig(double pitch_deg = 20.0);

/// Ground-truth world-from-mid pose at a yaw angle around a (possibly
/// jittered) rotation axis.
Se3d rig_mid_pose(const SequenceSpec& spec, double yaw_rad, const Eigen::Vector3d& axis);

/// Ray-casts the full sequence to disk:
///   dir/cam{up,mid,down}/color/%06d.png   8-bit RGB
///   dir/cam{up,mid,down}/depth/%06d.png   16-bit millimeters
///   dir/groundtruth.txt                   trajectory of the mid camera
///   dir/calib.txt                         intrinsics and rig extrinsics
void simulate_sequence(const SceneModel& scene, const SequenceSpec& spec,
                       const std::string& out_dir);

/// Renders one camera of one pose directly (test oracle and eval reference).
void raycast_camera(const SceneModel& scene, const Se3d& world_from_cam,
                    const CameraIntrinsics& intr, ColorImage& color, GrayImage& depth);

/// Reads a sequence directory written by simulate_sequence (or following the
/// same layout). Frames are yielded in timestamp order; absent up/down images
/// produce mid-only frames.
class SequenceReader {
 public:
  explicit SequenceReader(const std::string& dir);

  int frame_count() const { return frame_count_; }
  const CameraIntrinsics& intrinsics() const { return intr_; }
  const RigExtrinsics& rig() const { return rig_; }
  const std::vector<TrajectoryEntry>& ground_truth() const { return ground_truth_; }

  /// ts == index. all_cameras=false loads mid only.
  Frame read_frame(int index, bool all_cameras) const;

 private:
  std::string dir_;
  int frame_count_ = 0;
  CameraIntrinsics intr_;
  RigExtrinsics rig_;
  std::vector<TrajectoryEntry> ground_truth_;
};

}  // namespace gslam
