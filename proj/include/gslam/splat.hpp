#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gslam/geom.hpp"
#include "gslam/image.hpp"

namespace gslam {

/// Isotropic 3D Gaussian map primitive. The world covariance is s^2 * I, so
/// no orientation is stored. anchor_ts is the timestamp of the frame whose
/// densification created the Gaussian and never changes afterwards.
struct Gaussian {
  Eigen::Vector3d mu = Eigen::Vector3d::Zero();  // world position, meters
  double s = 0.01;                               // isotropic scale, meters
  Eigen::Vector3d color = Eigen::Vector3d::Zero();
  double opacity = 0.5;
  std::int64_t anchor_ts = 0;
};

/// Append-only Gaussian store with an anchor-timestamp index.
class GaussianMap {
 public:
  std::uint32_t add(const Gaussian& g) {
    const auto idx = static_cast<std::uint32_t>(gaussians_.size());
    gaussians_.push_back(g);
    by_anchor_[g.anchor_ts].push_back(idx);
    return idx;
  }

  std::size_t size() const { return gaussians_.size(); }
  bool empty() const { return gaussians_.empty(); }

  const std::vector<Gaussian>& gaussians() const { return gaussians_; }
  const Gaussian& at(std::uint32_t i) const { return gaussians_[i]; }

  /// Mutable access for the map optimizer and loop correction. anchor_ts must
  /// not be modified through this reference.
  Gaussian& mutable_at(std::uint32_t i) { return gaussians_[i]; }

  const std::map<std::int64_t, std::vector<std::uint32_t>>& timestamp_index() const {
    return by_anchor_;
  }

 private:
  std::vector<Gaussian> gaussians_;
  std::map<std::int64_t, std::vector<std::uint32_t>> by_anchor_;
};

/// History/novel split of map indices relative to a query timestamp (history:
/// |anchor - t_c| >= tau_t). Both sets are ascending.
struct Partition {
  std::vector<std::uint32_t> history;
  std::vector<std::uint32_t> novel;
};

Partition partition_by_timestamp(const GaussianMap& map, std::int64_t t_c, std::int64_t tau_t);

/// Non-owning ordered subset of a Gaussian pool. The view order is the blend
/// tiebreak order, so identical-depth Gaussians blend in view order.
class MapView {
 public:
  MapView() = default;

  static MapView all(const GaussianMap& map) {
    MapView v;
    v.pool_ = map.gaussians();
    v.use_all_ = true;
    return v;
  }
  static MapView all(std::span<const Gaussian> pool) {
    MapView v;
    v.pool_ = pool;
    v.use_all_ = true;
    return v;
  }
  static MapView subset(const GaussianMap& map, std::span<const std::uint32_t> indices) {
    MapView v;
    v.pool_ = map.gaussians();
    v.indices_ = indices;
    return v;
  }

  std::size_t size() const { return use_all_ ? pool_.size() : indices_.size(); }
  const Gaussian& operator[](std::size_t k) const {
    return use_all_ ? pool_[k] : pool_[indices_[k]];
  }
  /// Index into the underlying pool for the k-th view element.
  std::uint32_t pool_index(std::size_t k) const {
    return use_all_ ? static_cast<std::uint32_t>(k) : indices_[k];
  }

 private:
  std::span<const Gaussian> pool_;
  std::span<const std::uint32_t> indices_;
  bool use_all_ = false;
};

struct RenderOutput {
  ColorImage color;
  GrayImage depth;       // alpha-blended, silhouette-normalized; 0 where uncovered
  GrayImage silhouette;  // accumulated blend weight in [0,1]
};

struct ProjectedGaussian {
  Eigen::Vector2d mu_image;      // pixels
  Eigen::Matrix2d sigma_image;   // pixels^2, symmetric PSD
  double depth_cam = 0;          // meters
};

constexpr double kNearPlane = 0.01;
constexpr double kChi2Cutoff = 9.0;  // 3-sigma ellipse truncation
constexpr double kMinTransmittance = 1e-4;
constexpr double kMaxCondition = 1e8;
constexpr double kSilhouetteFloor = 1e-6;

/// EWA-style projection of one Gaussian. Returns nullopt when the center is
/// behind the near plane.
std::optional<ProjectedGaussian> project_gaussian(const Gaussian& g, const Se3d& cam_from_world,
                                                  const CameraIntrinsics& intr);

/// Per-pixel upstream gradients fed into the backward pass.
struct PixelWeights {
  ColorImage color;
  GrayImage depth;

  PixelWeights() = default;
  PixelWeights(int height, int width)
      : color(height, width), depth(GrayImage::Zero(height, width)) {}
};

struct GaussianGrad {
  Eigen::Vector3d dmu = Eigen::Vector3d::Zero();
  double ds = 0;
  Eigen::Vector3d dcolor = Eigen::Vector3d::Zero();
  double dopacity = 0;
};

struct RenderGradients {
  Vector6d dpose = Vector6d::Zero();   // left-retraction tangent on cam_from_world
  std::vector<GaussianGrad> dgaussians;  // aligned with the view order
};

/// One-shot rasterization of a view from a camera pose. Projection, culling
/// and depth sorting happen once; forward() and backward() share that work.
class Rasterizer {
 public:
  Rasterizer(MapView view, const Se3d& cam_from_world, const CameraIntrinsics& intr);
  ~Rasterizer();

  const RenderOutput& forward();
  RenderGradients backward(const PixelWeights& weights);

 private:
  struct Splat;
  void prepare();

  MapView view_;
  Se3d cam_from_world_;
  CameraIntrinsics intr_;
  std::vector<Splat> splats_;
  std::vector<std::vector<std::uint32_t>> tile_lists_;
  int tiles_x_ = 0, tiles_y_ = 0;
  bool prepared_ = false;
  bool forward_done_ = false;
  RenderOutput output_;
};

RenderOutput render(MapView view, const Se3d& cam_from_world, const CameraIntrinsics& intr);

RenderOutput render_with_gradients(MapView view, const Se3d& cam_from_world,
                                   const CameraIntrinsics& intr, const PixelWeights& weights,
                                   RenderGradients& grads);

/// Binary map checkpoint, little-endian: magic "GSLM", version u32, count u64,
/// then per Gaussian (mu f64x3, s f64, color f64x3, opacity f64, anchor i64).
void save_map(const std::string& path, const GaussianMap& map);
GaussianMap load_map(const std::string& path);

}  // namespace gslam
