#include "gslam/splat.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace gslam {

namespace {

constexpr int kTileSize = 16;

struct Eigen2x2 {
  double lambda_min, lambda_max;
};

Eigen2x2 symmetric_eigenvalues(const Eigen::Matrix2d& m) {
  const double tr = m(0, 0) + m(1, 1);
  const double det = m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0);
  const double disc = std::sqrt(std::max(0.25 * tr * tr - det, 0.0));
  return {0.5 * tr - disc, 0.5 * tr + disc};
}

// d J / d x_cam[k] for the pinhole projection Jacobian.
Eigen::Matrix<double, 2, 3> jacobian_derivative(const CameraIntrinsics& intr,
                                                const Eigen::Vector3d& p, int k) {
  const double z = p.z();
  const double inv_z2 = 1.0 / (z * z);
  Eigen::Matrix<double, 2, 3> d = Eigen::Matrix<double, 2, 3>::Zero();
  switch (k) {
    case 0:
      d(0, 2) = -intr.fx * inv_z2;
      break;
    case 1:
      d(1, 2) = -intr.fy * inv_z2;
      break;
    default:
      d(0, 0) = -intr.fx * inv_z2;
      d(1, 1) = -intr.fy * inv_z2;
      d(0, 2) = 2.0 * intr.fx * p.x() * inv_z2 / z;
      d(1, 2) = 2.0 * intr.fy * p.y() * inv_z2 / z;
      break;
  }
  return d;
}

}  // namespace

Partition partition_by_timestamp(const GaussianMap& map, std::int64_t t_c, std::int64_t tau_t) {
  Partition part;
  part.history.reserve(map.size());
  part.novel.reserve(map.size());
  for (const auto& [anchor, indices] : map.timestamp_index()) {
    const std::int64_t dt = anchor >= t_c ? anchor - t_c : t_c - anchor;
    auto& dst = (dt >= tau_t) ? part.history : part.novel;
    dst.insert(dst.end(), indices.begin(), indices.end());
  }
  std::sort(part.history.begin(), part.history.end());
  std::sort(part.novel.begin(), part.novel.end());
  return part;
}

std::optional<ProjectedGaussian> project_gaussian(const Gaussian& g, const Se3d& cam_from_world,
                                                  const CameraIntrinsics& intr) {
  const Eigen::Vector3d x_cam = cam_from_world * g.mu;
  if (x_cam.z() <= kNearPlane) return std::nullopt;
  ProjectedGaussian out;
  out.depth_cam = x_cam.z();
  out.mu_image = project(intr, x_cam);
  const auto j = projection_jacobian(intr, x_cam);
  // World covariance is isotropic (s^2 I), so W * Sigma_w * W^T = s^2 I and
  // the screen covariance reduces to s^2 J J^T.
  out.sigma_image = (g.s * g.s) * (j * j.transpose());
  return out;
}

struct Rasterizer::Splat {
  std::uint32_t view_idx;
  double z;
  Eigen::Vector3d x_cam;
  Eigen::Vector2d mu_img;
  Eigen::Matrix2d cov_inv;
  double opacity;
  Eigen::Vector3d color;
  int x0, x1, y0, y1;  // inclusive pixel bounds
};

Rasterizer::Rasterizer(MapView view, const Se3d& cam_from_world, const CameraIntrinsics& intr)
    : view_(view), cam_from_world_(cam_from_world), intr_(intr) {}

Rasterizer::~Rasterizer() = default;

void Rasterizer::prepare() {
  if (prepared_) return;
  prepared_ = true;
  const int w = intr_.width, h = intr_.height;
  splats_.reserve(view_.size());
  for (std::size_t k = 0; k < view_.size(); ++k) {
    const Gaussian& g = view_[k];
    const Eigen::Vector3d x_cam = cam_from_world_ * g.mu;
    if (x_cam.z() <= kNearPlane) continue;
    const auto j = projection_jacobian(intr_, x_cam);
    const Eigen::Matrix2d cov = (g.s * g.s) * (j * j.transpose());
    const auto ev = symmetric_eigenvalues(cov);
    if (!(ev.lambda_min > 0) || ev.lambda_max > kMaxCondition * ev.lambda_min) continue;
    const double radius = 3.0 * std::sqrt(ev.lambda_max);
    const Eigen::Vector2d mu_img = project(intr_, x_cam);
    const int x0 = std::max(0, static_cast<int>(std::ceil(mu_img.x() - radius)));
    const int x1 = std::min(w - 1, static_cast<int>(std::floor(mu_img.x() + radius)));
    const int y0 = std::max(0, static_cast<int>(std::ceil(mu_img.y() - radius)));
    const int y1 = std::min(h - 1, static_cast<int>(std::floor(mu_img.y() + radius)));
    if (x0 > x1 || y0 > y1) continue;
    const double det = cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(1, 0);
    Eigen::Matrix2d cov_inv;
    cov_inv << cov(1, 1), -cov(0, 1), -cov(1, 0), cov(0, 0);
    cov_inv /= det;
    splats_.push_back(Splat{static_cast<std::uint32_t>(k), x_cam.z(), x_cam, mu_img, cov_inv,
                            g.opacity, g.color, x0, x1, y0, y1});
  }
  // Front-to-back blend order; ties resolved by view order for determinism.
  std::sort(splats_.begin(), splats_.end(), [](const Splat& a, const Splat& b) {
    return a.z != b.z ? a.z < b.z : a.view_idx < b.view_idx;
  });

  tiles_x_ = (w + kTileSize - 1) / kTileSize;
  tiles_y_ = (h + kTileSize - 1) / kTileSize;
  tile_lists_.assign(static_cast<std::size_t>(tiles_x_) * tiles_y_, {});
  for (std::uint32_t si = 0; si < splats_.size(); ++si) {
    const Splat& s = splats_[si];
    const int tx0 = s.x0 / kTileSize, tx1 = s.x1 / kTileSize;
    const int ty0 = s.y0 / kTileSize, ty1 = s.y1 / kTileSize;
    for (int ty = ty0; ty <= ty1; ++ty)
      for (int tx = tx0; tx <= tx1; ++tx)
        tile_lists_[static_cast<std::size_t>(ty) * tiles_x_ + tx].push_back(si);
  }
}

const RenderOutput& Rasterizer::forward() {
  if (forward_done_) return output_;
  prepare();
  const int w = intr_.width, h = intr_.height;
  output_.color = ColorImage(h, w);
  output_.depth = GrayImage::Zero(h, w);
  output_.silhouette = GrayImage::Zero(h, w);

  for (int ty = 0; ty < tiles_y_; ++ty) {
    for (int tx = 0; tx < tiles_x_; ++tx) {
      const auto& list = tile_lists_[static_cast<std::size_t>(ty) * tiles_x_ + tx];
      if (list.empty()) continue;
      const int ylo = ty * kTileSize, yhi = std::min(h, ylo + kTileSize);
      const int xlo = tx * kTileSize, xhi = std::min(w, xlo + kTileSize);
      for (int y = ylo; y < yhi; ++y) {
        for (int x = xlo; x < xhi; ++x) {
          double transmittance = 1.0;
          double cr = 0, cg = 0, cb = 0, dep = 0, sil = 0;
          for (const auto si : list) {
            const Splat& s = splats_[si];
            if (x < s.x0 || x > s.x1 || y < s.y0 || y > s.y1) continue;
            const Eigen::Vector2d d(x - s.mu_img.x(), y - s.mu_img.y());
            const double q = d.dot(s.cov_inv * d);
            if (q > kChi2Cutoff) continue;
            const double alpha = s.opacity * std::exp(-0.5 * q);
            if (alpha <= 0.0) continue;
            const double weight = alpha * transmittance;
            cr += weight * s.color.x();
            cg += weight * s.color.y();
            cb += weight * s.color.z();
            dep += weight * s.z;
            sil += weight;
            transmittance *= (1.0 - alpha);
            if (transmittance < kMinTransmittance) break;
          }
          output_.color.r(y, x) = cr;
          output_.color.g(y, x) = cg;
          output_.color.b(y, x) = cb;
          output_.silhouette(y, x) = sil;
          output_.depth(y, x) = dep / std::max(sil, kSilhouetteFloor);
        }
      }
    }
  }
  forward_done_ = true;
  return output_;
}

RenderGradients Rasterizer::backward(const PixelWeights& weights) {
  forward();
  const int w = intr_.width, h = intr_.height;

  // Screen-space gradient accumulators per culled splat.
  struct ScreenGrad {
    Eigen::Vector2d d_mu = Eigen::Vector2d::Zero();
    Eigen::Matrix2d d_cov = Eigen::Matrix2d::Zero();
    double d_z = 0;
    Eigen::Vector3d d_color = Eigen::Vector3d::Zero();
    double d_opacity = 0;
  };
  std::vector<ScreenGrad> sg(splats_.size());

  struct Hit {
    std::uint32_t si;
    double alpha, falloff, transmittance;
  };
  std::vector<Hit> hits;
  hits.reserve(64);

  for (int ty = 0; ty < tiles_y_; ++ty) {
    for (int tx = 0; tx < tiles_x_; ++tx) {
      const auto& list = tile_lists_[static_cast<std::size_t>(ty) * tiles_x_ + tx];
      if (list.empty()) continue;
      const int ylo = ty * kTileSize, yhi = std::min(h, ylo + kTileSize);
      const int xlo = tx * kTileSize, xhi = std::min(w, xlo + kTileSize);
      for (int y = ylo; y < yhi; ++y) {
        for (int x = xlo; x < xhi; ++x) {
          const double u_r = weights.color.r(y, x);
          const double u_g = weights.color.g(y, x);
          const double u_b = weights.color.b(y, x);
          const double u_d = weights.depth(y, x);
          if (u_r == 0 && u_g == 0 && u_b == 0 && u_d == 0) continue;

          // Depth output is premultiplied depth / max(silhouette, floor).
          const double sil = output_.silhouette(y, x);
          const double denom = std::max(sil, kSilhouetteFloor);
          const double premul = output_.depth(y, x) * denom;
          const double d_premul = u_d / denom;
          const double d_sil = (sil > kSilhouetteFloor) ? -u_d * premul / (sil * sil) : 0.0;

          hits.clear();
          double transmittance = 1.0;
          for (const auto si : list) {
            const Splat& s = splats_[si];
            if (x < s.x0 || x > s.x1 || y < s.y0 || y > s.y1) continue;
            const Eigen::Vector2d d(x - s.mu_img.x(), y - s.mu_img.y());
            const double q = d.dot(s.cov_inv * d);
            if (q > kChi2Cutoff) continue;
            const double falloff = std::exp(-0.5 * q);
            const double alpha = s.opacity * falloff;
            if (alpha <= 0.0) continue;
            hits.push_back(Hit{si, alpha, falloff, transmittance});
            transmittance *= (1.0 - alpha);
            if (transmittance < kMinTransmittance) break;
          }

          // Reverse sweep with suffix accumulators:
          //   dOut/dalpha_i = T_i * (a_i - B_i),  B_{i-1} = alpha_i a_i + (1-alpha_i) B_i.
          double b_r = 0, b_g = 0, b_b = 0, b_z = 0, b_s = 0;
          for (auto it = hits.rbegin(); it != hits.rend(); ++it) {
            const Splat& s = splats_[it->si];
            ScreenGrad& grad = sg[it->si];
            const double weight = it->alpha * it->transmittance;
            const double d_alpha =
                u_r * it->transmittance * (s.color.x() - b_r) +
                u_g * it->transmittance * (s.color.y() - b_g) +
                u_b * it->transmittance * (s.color.z() - b_b) +
                d_premul * it->transmittance * (s.z - b_z) +
                d_sil * it->transmittance * (1.0 - b_s);

            grad.d_color += Eigen::Vector3d(u_r, u_g, u_b) * weight;
            grad.d_z += d_premul * weight;
            grad.d_opacity += d_alpha * it->falloff;

            const double d_q = -0.5 * it->alpha * d_alpha;
            const Eigen::Vector2d d(x - s.mu_img.x(), y - s.mu_img.y());
            const Eigen::Vector2d ad = s.cov_inv * d;
            grad.d_mu += d_q * (-2.0) * ad;
            grad.d_cov += d_q * (-(ad * ad.transpose()));

            b_r = it->alpha * s.color.x() + (1.0 - it->alpha) * b_r;
            b_g = it->alpha * s.color.y() + (1.0 - it->alpha) * b_g;
            b_b = it->alpha * s.color.z() + (1.0 - it->alpha) * b_b;
            b_z = it->alpha * s.z + (1.0 - it->alpha) * b_z;
            b_s = it->alpha * 1.0 + (1.0 - it->alpha) * b_s;
          }
        }
      }
    }
  }

  // Chain screen-space gradients back to world parameters and the pose.
  RenderGradients out;
  out.dgaussians.assign(view_.size(), GaussianGrad{});
  const Eigen::Matrix3d rot_t = cam_from_world_.rotation.transpose();
  for (std::uint32_t si = 0; si < splats_.size(); ++si) {
    const Splat& s = splats_[si];
    const ScreenGrad& grad = sg[si];
    const Gaussian& g = view_[s.view_idx];
    const auto j = projection_jacobian(intr_, s.x_cam);

    Eigen::Vector3d d_xc = j.transpose() * grad.d_mu;
    d_xc.z() += grad.d_z;
    const double s2 = g.s * g.s;
    for (int k = 0; k < 3; ++k) {
      const auto jk = jacobian_derivative(intr_, s.x_cam, k);
      const Eigen::Matrix2d jkjt = jk * j.transpose();
      d_xc[k] += 2.0 * s2 * grad.d_cov.cwiseProduct(jkjt).sum();
    }

    GaussianGrad& gg = out.dgaussians[s.view_idx];
    gg.dmu = rot_t * d_xc;
    gg.ds = 2.0 * g.s * grad.d_cov.cwiseProduct(j * j.transpose()).sum();
    gg.dcolor = grad.d_color;
    gg.dopacity = grad.d_opacity;

    out.dpose.head<3>() += d_xc;
    out.dpose.tail<3>() += s.x_cam.cross(d_xc);
  }
  return out;
}

RenderOutput render(MapView view, const Se3d& cam_from_world, const CameraIntrinsics& intr) {
  Rasterizer r(view, cam_from_world, intr);
  return r.forward();
}

RenderOutput render_with_gradients(MapView view, const Se3d& cam_from_world,
                                   const CameraIntrinsics& intr, const PixelWeights& weights,
                                   RenderGradients& grads) {
  Rasterizer r(view, cam_from_world, intr);
  RenderOutput out = r.forward();
  grads = r.backward(weights);
  return out;
}

namespace {

template <typename T>
void write_raw(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::ifstream& in, const std::string& path) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw FormatError("truncated map checkpoint: " + path);
  return v;
}

constexpr char kMapMagic[4] = {'G', 'S', 'L', 'M'};
constexpr std::uint32_t kMapVersion = 1;

}  // namespace

void save_map(const std::string& path, const GaussianMap& map) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open map checkpoint for writing: " + path);
  out.write(kMapMagic, 4);
  write_raw(out, kMapVersion);
  write_raw(out, static_cast<std::uint64_t>(map.size()));
  for (const auto& g : map.gaussians()) {
    write_raw(out, g.mu.x());
    write_raw(out, g.mu.y());
    write_raw(out, g.mu.z());
    write_raw(out, g.s);
    write_raw(out, g.color.x());
    write_raw(out, g.color.y());
    write_raw(out, g.color.z());
    write_raw(out, g.opacity);
    write_raw(out, g.anchor_ts);
  }
  if (!out) throw IoError("write failed: " + path);
}

GaussianMap load_map(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open map checkpoint: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMapMagic, 4) != 0) {
    throw FormatError("bad map checkpoint magic: " + path);
  }
  const auto version = read_raw<std::uint32_t>(in, path);
  if (version != kMapVersion) {
    throw FormatError("unsupported map checkpoint version in " + path);
  }
  const auto count = read_raw<std::uint64_t>(in, path);
  GaussianMap map;
  for (std::uint64_t i = 0; i < count; ++i) {
    Gaussian g;
    g.mu.x() = read_raw<double>(in, path);
    g.mu.y() = read_raw<double>(in, path);
    g.mu.z() = read_raw<double>(in, path);
    g.s = read_raw<double>(in, path);
    g.color.x() = read_raw<double>(in, path);
    g.color.y() = read_raw<double>(in, path);
    g.color.z() = read_raw<double>(in, path);
    g.opacity = read_raw<double>(in, path);
    g.anchor_ts = read_raw<std::int64_t>(in, path);
    map.add(g);
  }
  return map;
}

}  // namespace gslam
