#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <vector>

#include "gslam/tracker.hpp"

namespace gslam {

/// Keyframe / rand-list bookkeeping plus the pose of every processed frame.
struct FrameStore {
  std::vector<Frame> keyframes;
  std::vector<Frame> rand_list;
  std::map<std::int64_t, Se3d> all_poses;  // ts -> world-from-mid
};

/// Keyframes land on multiples of the interval; rand frames on the floor
/// midpoint between adjacent keyframes.
FrameKind classify_frame(std::int64_t ts, int keyframe_interval);

using DensificationMask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

struct MapperConfig {
  double depth_slack = 0.05;        // meters
  int densify_stride = 2;           // every n-th masked pixel
  double splat_size_factor = 1.0;   // scale = depth / fx * factor
  double init_opacity = 0.5;
  int map_iters = 30;
  std::int64_t tau_t = 60;
  double lambda = 0.5;              // Eq. 10 up/down weight
  double overlap_threshold = 0.3;   // frustum reprojection fraction
  double lr_mu = 2e-3;
  double lr_s = 1e-3;
  double lr_color = 1e-2;
  double lr_opacity = 5e-2;
  double s_min = 1e-4, s_max = 1.0;  // meters
};

/// True where the observed depth is valid and the map under-explains the
/// pixel: silhouette < 0.5, or the observation is closer than the render by
/// more than depth_slack.
DensificationMask densification_mask(const CameraImage& observed, MapView view,
                                     const Se3d& cam_from_world, const CameraIntrinsics& intr,
                                     const MapperConfig& config);

/// Seeds new anchored Gaussians for under-covered pixels. Keyframes densify
/// from all three cameras, other frames from mid only. Returns the number of
/// Gaussians created.
int densify(const Frame& frame, GaussianMap& map, const RigExtrinsics& rig,
            const CameraIntrinsics& intr, const MapperConfig& config);

struct MappingLoss {
  double loss = 0;
  std::vector<GaussianGrad> dgaussians;  // aligned with the view order
};

/// Eq. 9 loss: 0.8 L1(photometric) + 0.2 D-SSIM + 2 L1(geometric), with
/// invalid-depth pixels excluded from the geometric term only. Poses fixed;
/// gradients flow to Gaussian parameters.
MappingLoss mapping_loss(const CameraImage& observed, MapView view, const Se3d& cam_from_world,
                         const CameraIntrinsics& intr);

/// Adam state over Gaussian parameters, persisted across frames. New map
/// entries join with zero moments.
class MapOptimizer {
 public:
  void accumulate(const MapView& view, const std::vector<GaussianGrad>& grads, double weight);
  /// Applies one step from the accumulated gradients and clears them.
  void step(GaussianMap& map, const MapperConfig& config);
  void clear_accumulated();

 private:
  void ensure_size(std::size_t n);

  struct Moments {
    Eigen::Vector3d m_mu = Eigen::Vector3d::Zero(), v_mu = Eigen::Vector3d::Zero();
    double m_s = 0, v_s = 0;
    Eigen::Vector3d m_color = Eigen::Vector3d::Zero(), v_color = Eigen::Vector3d::Zero();
    double m_op = 0, v_op = 0;
    int t = 0;
  };
  std::vector<Moments> moments_;
  std::vector<GaussianGrad> accum_;
  std::vector<std::uint32_t> touched_;
};

/// One call runs config.map_iters iterations of Eq. 10 with anti-forgetting
/// frame sampling. Randomness comes only from the supplied generator.
int optimize_map(const Frame& current, const FrameStore& store, GaussianMap& map,
                 MapOptimizer& optimizer, const RigExtrinsics& rig, const CameraIntrinsics& intr,
                 const MapperConfig& config, std::mt19937_64& rng);

/// Fraction of view Gaussians whose centers project inside the camera bounds
/// with positive depth.
double frustum_overlap_fraction(const GaussianMap& map, const std::vector<std::uint32_t>& indices,
                                const Se3d& cam_from_world, const CameraIntrinsics& intr);

}  // namespace gslam
