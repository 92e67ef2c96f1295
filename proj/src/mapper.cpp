#include "gslam/mapper.hpp"

#include <algorithm>
#include <cmath>

#include "gslam/ssim.hpp"

namespace gslam {

FrameKind classify_frame(std::int64_t ts, int keyframe_interval) {
  const std::int64_t rem = ts % keyframe_interval;
  if (rem == 0) return FrameKind::Keyframe;
  if (rem == keyframe_interval / 2) return FrameKind::Rand;
  return FrameKind::Plain;
}

DensificationMask densification_mask(const CameraImage& observed, MapView view,
                                     const Se3d& cam_from_world, const CameraIntrinsics& intr,
                                     const MapperConfig& config) {
  const RenderOutput rendered = render(view, cam_from_world, intr);
  const int h = intr.height, w = intr.width;
  DensificationMask mask(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double obs_d = observed.depth(y, x);
      if (obs_d <= 0) {
        mask(y, x) = false;
        continue;
      }
      const bool uncovered = rendered.silhouette(y, x) < 0.5;
      const bool in_front = obs_d < rendered.depth(y, x) - config.depth_slack;
      mask(y, x) = uncovered || in_front;
    }
  }
  return mask;
}

int densify(const Frame& frame, GaussianMap& map, const RigExtrinsics& rig,
            const CameraIntrinsics& intr, const MapperConfig& config) {
  const Se3d mid_from_world = frame.pose_mid.inverse();
  int created = 0;
  for (int c = 0; c < kNumCameras; ++c) {
    const auto id = static_cast<CameraId>(c);
    if (frame.kind != FrameKind::Keyframe && id != CameraId::Mid) continue;
    const CameraImage& obs = frame.camera(id);
    if (!obs.valid) continue;
    const Se3d cam_from_world = rig.cam_from_mid(id) * mid_from_world;
    const Se3d world_from_cam = cam_from_world.inverse();
    const DensificationMask mask =
        densification_mask(obs, MapView::all(map), cam_from_world, intr, config);
    long masked_seen = 0;
    for (int y = 0; y < intr.height; ++y) {
      for (int x = 0; x < intr.width; ++x) {
        if (!mask(y, x)) continue;
        const bool take = (masked_seen % std::max(config.densify_stride, 1)) == 0;
        ++masked_seen;
        if (!take) continue;
        const double depth = obs.depth(y, x);
        Gaussian g;
        g.mu = world_from_cam * backproject(intr, {double(x), double(y)}, depth);
        g.s = std::clamp(depth / intr.fx * config.splat_size_factor, config.s_min, config.s_max);
        g.color = obs.color.pixel(y, x);
        g.opacity = config.init_opacity;
        g.anchor_ts = frame.ts;
        map.add(g);
        ++created;
      }
    }
  }
  return created;
}

namespace {

double sign(double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }

}  // namespace

MappingLoss mapping_loss(const CameraImage& observed, MapView view, const Se3d& cam_from_world,
                         const CameraIntrinsics& intr) {
  Rasterizer rast(view, cam_from_world, intr);
  const RenderOutput& rendered = rast.forward();
  const int h = intr.height, w = intr.width;

  MappingLoss out;
  PixelWeights weights(h, w);

  // L1 terms.
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int ch = 0; ch < 3; ++ch) {
        const double e = rendered.color.plane(ch)(y, x) - observed.color.plane(ch)(y, x);
        out.loss += 0.8 * std::abs(e);
        weights.color.plane(ch)(y, x) += 0.8 * sign(e);
      }
      if (observed.depth(y, x) > 0) {
        const double e_geo = rendered.depth(y, x) - observed.depth(y, x);
        out.loss += 2.0 * std::abs(e_geo);
        weights.depth(y, x) = 2.0 * sign(e_geo);
      }
    }
  }

  // D-SSIM term, per channel, channel-averaged:
  //   sum_p 0.2 * (1 - mean_ch ssim_ch(p)) / 2.
  for (int ch = 0; ch < 3; ++ch) {
    const GrayImage& a = rendered.color.plane(ch);
    const GrayImage& b = observed.color.plane(ch);
    const SsimStats stats = ssim_plane(a, b);
    out.loss += 0.2 * 0.5 * (1.0 - stats.ssim).sum() / 3.0;
    const GrayImage upstream = GrayImage::Constant(h, w, -0.2 * 0.5 / 3.0);
    weights.color.plane(ch) += ssim_backward_a(stats, a, b, upstream);
  }

  out.dgaussians = rast.backward(weights).dgaussians;
  return out;
}

void MapOptimizer::ensure_size(std::size_t n) {
  if (moments_.size() < n) moments_.resize(n);
  if (accum_.size() < n) accum_.resize(n);
}

void MapOptimizer::accumulate(const MapView& view, const std::vector<GaussianGrad>& grads,
                              double weight) {
  for (std::size_t k = 0; k < grads.size(); ++k) {
    const GaussianGrad& g = grads[k];
    if (g.dmu.isZero() && g.ds == 0 && g.dcolor.isZero() && g.dopacity == 0) continue;
    const std::uint32_t idx = view.pool_index(k);
    ensure_size(idx + 1);
    GaussianGrad& acc = accum_[idx];
    if (acc.dmu.isZero() && acc.ds == 0 && acc.dcolor.isZero() && acc.dopacity == 0) {
      touched_.push_back(idx);
    }
    acc.dmu += weight * g.dmu;
    acc.ds += weight * g.ds;
    acc.dcolor += weight * g.dcolor;
    acc.dopacity += weight * g.dopacity;
  }
}

void MapOptimizer::clear_accumulated() {
  for (const auto idx : touched_) accum_[idx] = GaussianGrad{};
  touched_.clear();
}

void MapOptimizer::step(GaussianMap& map, const MapperConfig& config) {
  ensure_size(map.size());
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::sort(touched_.begin(), touched_.end());
  for (const auto idx : touched_) {
    const GaussianGrad& g = accum_[idx];
    Moments& mom = moments_[idx];
    ++mom.t;
    const double c1 = 1.0 - std::pow(beta1, mom.t);
    const double c2 = 1.0 - std::pow(beta2, mom.t);
    auto adam = [&](double grad, double& m, double& v, double lr) {
      m = beta1 * m + (1.0 - beta1) * grad;
      v = beta2 * v + (1.0 - beta2) * grad * grad;
      return -lr * (m / c1) / (std::sqrt(v / c2) + eps);
    };
    Gaussian& gauss = map.mutable_at(idx);
    for (int i = 0; i < 3; ++i) {
      gauss.mu[i] += adam(g.dmu[i], mom.m_mu[i], mom.v_mu[i], config.lr_mu);
      gauss.color[i] =
          std::clamp(gauss.color[i] + adam(g.dcolor[i], mom.m_color[i], mom.v_color[i],
                                           config.lr_color),
                     0.0, 1.0);
    }
    gauss.s = std::clamp(gauss.s + adam(g.ds, mom.m_s, mom.v_s, config.lr_s), config.s_min,
                         config.s_max);
    gauss.opacity = std::clamp(
        gauss.opacity + adam(g.dopacity, mom.m_op, mom.v_op, config.lr_opacity), 0.0, 1.0);
  }
  clear_accumulated();
}

double frustum_overlap_fraction(const GaussianMap& map, const std::vector<std::uint32_t>& indices,
                                const Se3d& cam_from_world, const CameraIntrinsics& intr) {
  if (indices.empty()) return 0.0;
  long inside = 0;
  for (const auto idx : indices) {
    const Eigen::Vector3d x_cam = cam_from_world * map.at(idx).mu;
    if (x_cam.z() <= kNearPlane) continue;
    const Eigen::Vector2d px = project(intr, x_cam);
    if (px.x() >= 0 && px.x() < intr.width && px.y() >= 0 && px.y() < intr.height) ++inside;
  }
  return static_cast<double>(inside) / static_cast<double>(indices.size());
}

namespace {

// Renders the sampled frame with its own novel set (anti-forgetting rule:
// history Gaussians never receive gradients).
void add_frame_loss(const Frame& frame, CameraId cam, const GaussianMap& map,
                    MapOptimizer& optimizer, const RigExtrinsics& rig,
                    const CameraIntrinsics& intr, const MapperConfig& config, double weight,
                    double& total_loss) {
  const CameraImage& obs = frame.camera(cam);
  if (!obs.valid) return;
  const Partition part = partition_by_timestamp(map, frame.ts, config.tau_t);
  if (part.novel.empty()) return;
  const MapView view = MapView::subset(map, part.novel);
  const Se3d cam_from_world = rig.cam_from_mid(cam) * frame.pose_mid.inverse();
  MappingLoss loss = mapping_loss(obs, view, cam_from_world, intr);
  optimizer.accumulate(view, loss.dgaussians, weight);
  total_loss += weight * loss.loss;
}

}  // namespace

int optimize_map(const Frame& current, const FrameStore& store, GaussianMap& map,
                 MapOptimizer& optimizer, const RigExtrinsics& rig, const CameraIntrinsics& intr,
                 const MapperConfig& config, std::mt19937_64& rng) {
  if (map.empty()) return 0;

  // Classify stored frames once per call against the current frame's novel set.
  const Partition current_part = partition_by_timestamp(map, current.ts, config.tau_t);
  std::vector<const Frame*> overlapping_kf, nonoverlap_kf, nonoverlap_rand;
  for (const auto& kf : store.keyframes) {
    if (kf.ts == current.ts) continue;
    const Se3d cam = kf.pose_mid.inverse();
    const double frac = frustum_overlap_fraction(map, current_part.novel, cam, intr);
    (frac > config.overlap_threshold ? overlapping_kf : nonoverlap_kf).push_back(&kf);
  }
  for (const auto& rf : store.rand_list) {
    if (rf.ts == current.ts) continue;
    const Se3d cam = rf.pose_mid.inverse();
    if (frustum_overlap_fraction(map, current_part.novel, cam, intr) <=
        config.overlap_threshold) {
      nonoverlap_rand.push_back(&rf);
    }
  }

  auto pick = [&rng](const std::vector<const Frame*>& frames) -> const Frame* {
    if (frames.empty()) return nullptr;
    std::uniform_int_distribution<std::size_t> dist(0, frames.size() - 1);
    return frames[dist(rng)];
  };

  int applied = 0;
  for (int iter = 0; iter < config.map_iters; ++iter) {
    double total = 0;
    // Current frame: Eq. 10 weights over the available cameras.
    add_frame_loss(current, CameraId::Mid, map, optimizer, rig, intr, config, 1.0, total);
    if (current.kind == FrameKind::Keyframe) {
      add_frame_loss(current, CameraId::Up, map, optimizer, rig, intr, config, config.lambda,
                     total);
      add_frame_loss(current, CameraId::Down, map, optimizer, rig, intr, config, config.lambda,
                     total);
    }
    if (const Frame* kf = pick(overlapping_kf)) {
      add_frame_loss(*kf, CameraId::Mid, map, optimizer, rig, intr, config, 1.0, total);
    }
    if (const Frame* kf = pick(nonoverlap_kf)) {
      add_frame_loss(*kf, CameraId::Mid, map, optimizer, rig, intr, config, 1.0, total);
    }
    if (const Frame* rf = pick(nonoverlap_rand)) {
      add_frame_loss(*rf, CameraId::Mid, map, optimizer, rig, intr, config, 1.0, total);
    }
    optimizer.step(map, config);
    ++applied;
  }
  return applied;
}

}  // namespace gslam
