#include "gslam/tracker.hpp"

#include <cmath>

namespace gslam {

Se3d motion_model_init(const Se3d& prev, const Se3d& prev2) {
  return prev * (prev2.inverse() * prev);
}

namespace {

double sign(double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); }

struct MaskedLoss {
  double loss = 0;
  long n_pixels = 0;
  PixelWeights weights;
};

// Eq. 5 style loss + upstream pixel gradients from an already-rendered view.
MaskedLoss masked_l1_loss(const CameraImage& obs, const RenderOutput& rendered) {
  const int h = obs.color.height(), w = obs.color.width();
  MaskedLoss out;
  out.weights = PixelWeights(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (rendered.silhouette(y, x) <= 0.99 || obs.depth(y, x) <= 0) continue;
      ++out.n_pixels;
      const double e_geo = rendered.depth(y, x) - obs.depth(y, x);
      out.loss += std::abs(e_geo);
      out.weights.depth(y, x) = sign(e_geo);
      for (int ch = 0; ch < 3; ++ch) {
        const double e = rendered.color.plane(ch)(y, x) - obs.color.plane(ch)(y, x);
        out.loss += 0.5 * std::abs(e);
        out.weights.color.plane(ch)(y, x) = 0.5 * sign(e);
      }
    }
  }
  return out;
}

}  // namespace

std::optional<TrackLoss> tracking_loss(const CameraImage& observed, MapView view,
                                       const Se3d& cam_from_world,
                                       const CameraIntrinsics& intr) {
  Rasterizer rast(view, cam_from_world, intr);
  const RenderOutput& rendered = rast.forward();
  MaskedLoss masked = masked_l1_loss(observed, rendered);
  if (masked.n_pixels == 0) return std::nullopt;
  TrackLoss out;
  out.loss = masked.loss;
  out.n_pixels = masked.n_pixels;
  out.grad = rast.backward(masked.weights).dpose;
  return out;
}

namespace {

struct JointLoss {
  double total = 0;
  Vector6d grad = Vector6d::Zero();  // w.r.t. left perturbation of mid cam_from_world
  std::array<double, kNumCameras> per_camera{};
  bool any_valid = false;
};

JointLoss joint_tracking_loss(const Frame& frame, MapView view, const RigExtrinsics& rig,
                              const CameraIntrinsics& intr, const Se3d& mid_from_world,
                              bool with_grad) {
  JointLoss joint;
  for (int c = 0; c < kNumCameras; ++c) {
    const auto id = static_cast<CameraId>(c);
    const CameraImage& obs = frame.camera(id);
    if (!obs.valid) continue;
    const Se3d extr = rig.cam_from_mid(id);
    const Se3d cam_from_world = extr * mid_from_world;
    if (with_grad) {
      auto loss = tracking_loss(obs, view, cam_from_world, intr);
      if (!loss) continue;
      joint.any_valid = true;
      joint.total += loss->loss;
      joint.per_camera[c] = loss->loss;
      // Chain each camera's left-tangent gradient to the mid camera variable.
      joint.grad += se3_adjoint(extr).transpose() * loss->grad;
    } else {
      const RenderOutput rendered = render(view, cam_from_world, intr);
      MaskedLoss masked = masked_l1_loss(obs, rendered);
      if (masked.n_pixels == 0) continue;
      joint.any_valid = true;
      joint.total += masked.loss;
      joint.per_camera[c] = masked.loss;
    }
  }
  return joint;
}

}  // namespace

TrackResult optimize_frame_pose(const Frame& frame, MapView view, const RigExtrinsics& rig,
                                const CameraIntrinsics& intr, const TrackConfig& config) {
  TrackResult result;
  result.pose_mid = frame.pose_mid;
  Se3d mid_from_world = frame.pose_mid.inverse();

  JointLoss current = joint_tracking_loss(frame, view, rig, intr, mid_from_world, true);
  if (!current.any_valid) {
    result.report.converged = false;
    return result;
  }

  Vector6d lr;
  lr << config.step_trans, config.step_trans, config.step_trans, config.step_rot,
      config.step_rot, config.step_rot;
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  Vector6d m = Vector6d::Zero(), v = Vector6d::Zero();
  double lr_scale = 1.0;
  int adam_t = 0;

  int iters = 0;
  bool converged = false;
  for (; iters < config.max_iters; ++iters) {
    ++adam_t;
    m = beta1 * m + (1.0 - beta1) * current.grad;
    v = beta2 * v + (1.0 - beta2) * current.grad.cwiseProduct(current.grad);
    const Vector6d m_hat = m / (1.0 - std::pow(beta1, adam_t));
    const Vector6d v_hat = v / (1.0 - std::pow(beta2, adam_t));
    const Vector6d step =
        -(lr_scale * lr.array() * m_hat.array() / (v_hat.array().sqrt() + eps)).matrix();

    const Se3d candidate = se3_exp(step) * mid_from_world;
    JointLoss next = joint_tracking_loss(frame, view, rig, intr, candidate, true);
    if (next.any_valid && next.total <= current.total) {
      const double rel_change =
          std::abs(current.total - next.total) / std::max(current.total, 1e-12);
      mid_from_world = candidate;
      current = next;
      if (rel_change < config.rel_tol) {
        converged = true;
        ++iters;
        break;
      }
    } else {
      lr_scale *= 0.5;
      if (lr_scale < 1e-6) {
        converged = true;
        ++iters;
        break;
      }
    }
  }

  result.pose_mid = mid_from_world.inverse();
  result.report.final_loss = current.total;
  result.report.iterations = iters;
  result.report.converged = converged;
  result.report.per_camera_loss = current.per_camera;
  return result;
}

TrackResult track_frame(const Frame& frame, const GaussianMap& map, const RigExtrinsics& rig,
                        const CameraIntrinsics& intr, const TrackConfig& config) {
  const Partition part = partition_by_timestamp(map, frame.ts, config.tau_t);
  return optimize_frame_pose(frame, MapView::subset(map, part.novel), rig, intr, config);
}

}  // namespace gslam
