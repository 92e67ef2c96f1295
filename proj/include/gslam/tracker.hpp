#pragma once

#include <array>
#include <cstdint>
#include <optional>

#include "gslam/geom.hpp"
#include "gslam/image.hpp"
#include "gslam/splat.hpp"

namespace gslam {

enum class FrameKind { Keyframe, Rand, Plain };

struct CameraImage {
  ColorImage color;
  GrayImage depth;  // meters, 0 = invalid
  bool valid = false;
};

/// One timestamped rig observation. Keyframes carry all three cameras; rand
/// and plain frames carry the middle camera only.
struct Frame {
  std::int64_t ts = 0;
  FrameKind kind = FrameKind::Plain;
  std::array<CameraImage, kNumCameras> images;  // indexed by CameraId
  Se3d pose_mid;                                // world-from-mid estimate

  const CameraImage& camera(CameraId id) const { return images[static_cast<int>(id)]; }
  CameraImage& camera(CameraId id) { return images[static_cast<int>(id)]; }
};

struct TrackingReport {
  double final_loss = 0;
  int iterations = 0;
  bool converged = false;
  std::array<double, kNumCameras> per_camera_loss{};
};

struct TrackConfig {
  int max_iters = 40;
  double step_trans = 2e-3;  // meters
  double step_rot = 2e-3;    // radians
  double rel_tol = 1e-5;
  std::int64_t tau_t = 60;
};

/// Constant-velocity prediction: prev composed with the last relative motion.
Se3d motion_model_init(const Se3d& prev, const Se3d& prev2);

struct TrackLoss {
  double loss = 0;
  Vector6d grad = Vector6d::Zero();  // w.r.t. left perturbation of cam_from_world
  long n_pixels = 0;
};

/// Silhouette-masked L1 photometric + geometric loss of one camera against a
/// rendered view. Pixels with silhouette <= 0.99 or invalid observed depth
/// contribute nothing. Returns nullopt when the mask is empty.
std::optional<TrackLoss> tracking_loss(const CameraImage& observed, MapView view,
                                       const Se3d& cam_from_world, const CameraIntrinsics& intr);

struct TrackResult {
  Se3d pose_mid;  // world-from-mid
  TrackingReport report;
};

/// Joint three-camera pose refinement over an explicit view (used by both
/// tracking and bundle adjustment). Adam-style steps with rejection on loss
/// increase; the initial pose is frame.pose_mid.
TrackResult optimize_frame_pose(const Frame& frame, MapView view, const RigExtrinsics& rig,
                                const CameraIntrinsics& intr, const TrackConfig& config);

/// Per-frame tracking entry point: only the novel Gaussians of the frame's
/// timestamp participate.
TrackResult track_frame(const Frame& frame, const GaussianMap& map, const RigExtrinsics& rig,
                        const CameraIntrinsics& intr, const TrackConfig& config);

}  // namespace gslam
