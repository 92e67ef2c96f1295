#include "gslam/sim.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "gslam/png_io.hpp"

namespace fs = std::filesystem;

namespace gslam {

Eigen::Vector3d TexturedPatch::shade(double u, double v) const {
  switch (texture) {
    case Texture::Checker: {
      const int iu = static_cast<int>(std::floor(u * cells));
      const int iv = static_cast<int>(std::floor(v * cells));
      return ((iu + iv) % 2 == 0) ? color_a : color_b;
    }
    case Texture::Gradient:
      return color_a + (color_b - color_a) * u;
    default:
      return color_a;
  }
}

std::optional<RayHit> cast_ray(const SceneModel& scene, const Eigen::Vector3d& origin,
                               const Eigen::Vector3d& dir) {
  constexpr double kEps = 1e-9;
  std::optional<RayHit> best;
  for (const auto& patch : scene.patches) {
    const Eigen::Vector3d normal = patch.edge_u.cross(patch.edge_v);
    const double denom = normal.dot(dir);
    if (std::abs(denom) < kEps) continue;
    const double t = normal.dot(patch.origin - origin) / denom;
    if (t <= kEps) continue;
    if (best && t >= best->t) continue;
    const Eigen::Vector3d p = origin + t * dir - patch.origin;
    // Solve p = u*edge_u + v*edge_v in the patch plane.
    const double uu = patch.edge_u.squaredNorm();
    const double vv = patch.edge_v.squaredNorm();
    const double uv = patch.edge_u.dot(patch.edge_v);
    const double pu = p.dot(patch.edge_u);
    const double pv = p.dot(patch.edge_v);
    const double det = uu * vv - uv * uv;
    if (std::abs(det) < kEps) continue;
    const double u = (pu * vv - pv * uv) / det;
    const double v = (pv * uu - pu * uv) / det;
    if (u < 0 || u > 1 || v < 0 || v > 1) continue;
    best = RayHit{t, patch.shade(u, v)};
  }
  return best;
}

namespace {

Eigen::Vector3d random_color(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(0.1, 0.95);
  return {dist(rng), dist(rng), dist(rng)};
}

}  // namespace

SceneModel generate_scene(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> cells_dist(3.0, 10.0);
  std::uniform_int_distribution<int> tex_dist(0, 2);

  SceneModel scene;
  const double half = 3.0;    // room half-width, meters
  const double height = 3.0;  // room height

  // Four walls, each split into two vertically stacked patches.
  struct WallSpec {
    Eigen::Vector3d origin, along;
  };
  const WallSpec walls[4] = {
      {{half, -half, 0}, {0, 2 * half, 0}},    // +x wall
      {{half, half, 0}, {-2 * half, 0, 0}},    // +y wall
      {{-half, half, 0}, {0, -2 * half, 0}},   // -x wall
      {{-half, -half, 0}, {2 * half, 0, 0}},   // -y wall
  };
  int patch_count = 0;
  for (const auto& wall : walls) {
    for (int band = 0; band < 2; ++band) {
      TexturedPatch p;
      p.origin = wall.origin + Eigen::Vector3d(0, 0, band * height / 2);
      p.edge_u = wall.along;
      p.edge_v = Eigen::Vector3d(0, 0, height / 2);
      p.cells = std::floor(cells_dist(rng));
      p.color_a = random_color(rng);
      p.color_b = random_color(rng);
      const int tex = tex_dist(rng);
      p.texture = tex == 0 ? TexturedPatch::Texture::Gradient : TexturedPatch::Texture::Checker;
      // Keep exactly one guaranteed low-texture patch.
      if (patch_count == 3) p.texture = TexturedPatch::Texture::Uniform;
      scene.patches.push_back(p);
      ++patch_count;
    }
  }

  // Floor and ceiling.
  TexturedPatch floor;
  floor.origin = {-half, -half, 0};
  floor.edge_u = {2 * half, 0, 0};
  floor.edge_v = {0, 2 * half, 0};
  floor.texture = TexturedPatch::Texture::Checker;
  floor.cells = 8;
  floor.color_a = random_color(rng);
  floor.color_b = random_color(rng);
  scene.patches.push_back(floor);

  TexturedPatch ceiling = floor;
  ceiling.origin = {-half, -half, height};
  ceiling.color_a = random_color(rng);
  ceiling.color_b = random_color(rng);
  ceiling.cells = 5;
  scene.patches.push_back(ceiling);

  // Interior vertical panels at mid radius for parallax.
  std::uniform_real_distribution<double> angle_dist(0, 2 * M_PI);
  std::uniform_real_distribution<double> radius_dist(1.6, 2.4);
  std::uniform_real_distribution<double> size_dist(0.5, 1.1);
  for (int k = 0; k < 5; ++k) {
    const double ang = angle_dist(rng);
    const double rad = radius_dist(rng);
    const double w = size_dist(rng), h = size_dist(rng);
    const Eigen::Vector3d center(rad * std::cos(ang), rad * std::sin(ang), 1.0 + 0.3 * k * 0.2);
    const Eigen::Vector3d inward = -center.normalized();
    const Eigen::Vector3d tangent(-inward.y(), inward.x(), 0);
    TexturedPatch p;
    p.origin = center - 0.5 * w * tangent - Eigen::Vector3d(0, 0, 0.5 * h);
    p.edge_u = w * tangent;
    p.edge_v = {0, 0, h};
    p.texture = TexturedPatch::Texture::Checker;
    p.cells = std::floor(cells_dist(rng));
    p.color_a = random_color(rng);
    p.color_b = random_color(rng);
    scene.patches.push_back(p);
  }
  return scene;
}

CameraIntrinsics default_intrinsics(int width, int height) {
  CameraIntrinsics intr;
  intr.width = width;
  intr.height = height;
  intr.fx = intr.fy = width / (2.0 * std::tan(30.0 * M_PI / 180.0));
  intr.cx = width / 2.0;
  intr.cy = height / 2.0;
  return intr;
}

RigExtrinsics default_rig(double pitch_deg) {
  const double a = pitch_deg * M_PI / 180.0;
  auto rot_x = [](double angle) {
    Eigen::Matrix3d r;
    r << 1, 0, 0, 0, std::cos(angle), -std::sin(angle), 0, std::sin(angle), std::cos(angle);
    return r;
  };
  RigExtrinsics rig;
  // mid_from_up = Rx(+a) tilts the up camera's forward ray toward -y (image
  // up), so up_from_mid carries the inverse.
  rig.up_from_mid.rotation = rot_x(-a);
  rig.down_from_mid.rotation = rot_x(a);
  return rig;
}

Se3d rig_mid_pose(const SequenceSpec& spec, double yaw_rad, const Eigen::Vector3d& axis) {
  Se3d world_from_rig;
  world_from_rig.rotation =
      Eigen::AngleAxisd(yaw_rad, axis.normalized()).toRotationMatrix();
  world_from_rig.translation = {0, 0, spec.rig_height};

  // Camera frame: x right, y down, z forward; at yaw 0 the camera looks along
  // world +x with image up aligned to world +z.
  Se3d rig_from_mid;
  rig_from_mid.rotation << 0, 0, 1, -1, 0, 0, 0, -1, 0;
  rig_from_mid.translation = {spec.cam_radius, 0, 0};
  return world_from_rig * rig_from_mid;
}

void raycast_camera(const SceneModel& scene, const Se3d& world_from_cam,
                    const CameraIntrinsics& intr, ColorImage& color, GrayImage& depth) {
  color = ColorImage(intr.height, intr.width);
  depth = GrayImage::Zero(intr.height, intr.width);
  for (int y = 0; y < intr.height; ++y) {
    for (int x = 0; x < intr.width; ++x) {
      // Unit-z direction so the hit parameter equals the camera z-depth.
      const Eigen::Vector3d dir_cam((x - intr.cx) / intr.fx, (y - intr.cy) / intr.fy, 1.0);
      const Eigen::Vector3d dir_world = world_from_cam.rotation * dir_cam;
      const auto hit = cast_ray(scene, world_from_cam.translation, dir_world);
      if (!hit) continue;
      color.set_pixel(y, x, hit->color);
      depth(y, x) = hit->t;
    }
  }
}

namespace {

void write_atomic_png_rgb(const std::string& path, const ColorImage& img) {
  const std::string tmp = path + ".tmp";
  write_png_rgb8(tmp, img);
  fs::rename(tmp, path);
}

void write_atomic_png_depth(const std::string& path, const GrayImage& img) {
  const std::string tmp = path + ".tmp";
  write_png_depth16(tmp, img);
  fs::rename(tmp, path);
}

std::string frame_name(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06d.png", index);
  return buf;
}

std::string pose_to_calib_value(const Se3d& pose) {
  Eigen::Quaterniond q(pose.rotation);
  q.normalize();
  if (q.w() < 0) q.coeffs() = -q.coeffs();
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%.9f %.9f %.9f %.9f %.9f %.9f %.9f", pose.translation.x(),
                pose.translation.y(), pose.translation.z(), q.x(), q.y(), q.z(), q.w());
  return buf;
}

Se3d pose_from_calib_value(const std::string& value, const std::string& path) {
  std::istringstream ss(value);
  double tx, ty, tz, qx, qy, qz, qw;
  if (!(ss >> tx >> ty >> tz >> qx >> qy >> qz >> qw)) {
    throw FormatError("bad pose value in " + path);
  }
  Se3d pose;
  pose.translation = {tx, ty, tz};
  pose.rotation = Eigen::Quaterniond(qw, qx, qy, qz).normalized().toRotationMatrix();
  return pose;
}

}  // namespace

void simulate_sequence(const SceneModel& scene, const SequenceSpec& spec,
                       const std::string& out_dir) {
  std::error_code ec;
  for (const char* cam : {"up", "mid", "down"}) {
    fs::create_directories(fs::path(out_dir) / ("cam" + std::string(cam)) / "color", ec);
    if (ec) throw IoError("cannot create output directory under " + out_dir);
    fs::create_directories(fs::path(out_dir) / ("cam" + std::string(cam)) / "depth", ec);
    if (ec) throw IoError("cannot create output directory under " + out_dir);
  }

  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> axis_noise(0.0, spec.jitter_sigma);
  std::normal_distribution<double> depth_noise(0.0, spec.depth_noise_sigma);

  std::vector<TrajectoryEntry> gt;
  gt.reserve(spec.frames);

  for (int frame = 0; frame < spec.frames; ++frame) {
    Eigen::Vector3d axis(0, 0, 1);
    if (spec.jitter_sigma > 0) {
      axis = Eigen::Vector3d(axis_noise(rng), axis_noise(rng), 1.0).normalized();
    }
    const double yaw = frame * spec.deg_per_frame * M_PI / 180.0;
    const Se3d world_from_mid = rig_mid_pose(spec, yaw, axis);
    gt.push_back({static_cast<double>(frame), world_from_mid});

    for (int c = 0; c < kNumCameras; ++c) {
      const auto id = static_cast<CameraId>(c);
      const Se3d world_from_cam = world_from_mid * spec.rig.cam_from_mid(id).inverse();
      ColorImage color;
      GrayImage depth;
      raycast_camera(scene, world_from_cam, spec.intr, color, depth);
      if (spec.depth_noise_sigma > 0) {
        for (int y = 0; y < spec.intr.height; ++y) {
          for (int x = 0; x < spec.intr.width; ++x) {
            if (depth(y, x) <= 0) continue;
            depth(y, x) = std::max(0.0, depth(y, x) + depth_noise(rng));
          }
        }
      }
      const fs::path cam_dir = fs::path(out_dir) / ("cam" + std::string(camera_name(id)));
      write_atomic_png_rgb((cam_dir / "color" / frame_name(frame)).string(), color);
      write_atomic_png_depth((cam_dir / "depth" / frame_name(frame)).string(), depth);
    }
  }

  save_trajectory((fs::path(out_dir) / "groundtruth.txt").string(), gt);

  std::ofstream calib(fs::path(out_dir) / "calib.txt");
  if (!calib) throw IoError("cannot write calib.txt in " + out_dir);
  calib << "fx=" << spec.intr.fx << "\n";
  calib << "fy=" << spec.intr.fy << "\n";
  calib << "cx=" << spec.intr.cx << "\n";
  calib << "cy=" << spec.intr.cy << "\n";
  calib << "width=" << spec.intr.width << "\n";
  calib << "height=" << spec.intr.height << "\n";
  calib << "up_from_mid=" << pose_to_calib_value(spec.rig.up_from_mid) << "\n";
  calib << "down_from_mid=" << pose_to_calib_value(spec.rig.down_from_mid) << "\n";
}

SequenceReader::SequenceReader(const std::string& dir) : dir_(dir) {
  const fs::path calib_path = fs::path(dir) / "calib.txt";
  std::ifstream calib(calib_path);
  if (!calib) throw FormatError("missing calib.txt: " + calib_path.string());
  std::string line;
  std::map<std::string, std::string> kv;
  while (std::getline(calib, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("bad calib line in " + calib_path.string());
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto need = [&](const std::string& key) {
    const auto it = kv.find(key);
    if (it == kv.end()) {
      throw FormatError("calib key '" + key + "' missing in " + calib_path.string());
    }
    return it->second;
  };
  intr_.fx = std::stod(need("fx"));
  intr_.fy = std::stod(need("fy"));
  intr_.cx = std::stod(need("cx"));
  intr_.cy = std::stod(need("cy"));
  intr_.width = std::stoi(need("width"));
  intr_.height = std::stoi(need("height"));
  rig_.up_from_mid = pose_from_calib_value(need("up_from_mid"), calib_path.string());
  rig_.down_from_mid = pose_from_calib_value(need("down_from_mid"), calib_path.string());

  while (fs::exists(fs::path(dir) / "cammid" / "color" / frame_name(frame_count_))) {
    ++frame_count_;
  }

  const fs::path gt_path = fs::path(dir) / "groundtruth.txt";
  if (fs::exists(gt_path)) ground_truth_ = load_trajectory(gt_path.string());
}

Frame SequenceReader::read_frame(int index, bool all_cameras) const {
  Frame frame;
  frame.ts = index;
  for (int c = 0; c < kNumCameras; ++c) {
    const auto id = static_cast<CameraId>(c);
    if (!all_cameras && id != CameraId::Mid) continue;
    const fs::path cam_dir = fs::path(dir_) / ("cam" + std::string(camera_name(id)));
    const fs::path color_path = cam_dir / "color" / frame_name(index);
    const fs::path depth_path = cam_dir / "depth" / frame_name(index);
    if (!fs::exists(color_path) || !fs::exists(depth_path)) {
      if (id == CameraId::Mid) {
        throw FormatError("missing mid-camera frame: " + color_path.string());
      }
      continue;  // mid-only frame
    }
    CameraImage img;
    img.color = read_png_rgb8(color_path.string());
    img.depth = read_png_depth16(depth_path.string());
    if (img.color.height() != intr_.height || img.color.width() != intr_.width ||
        img.depth.rows() != intr_.height || img.depth.cols() != intr_.width) {
      throw FormatError("image size does not match calib: " + color_path.string());
    }
    img.valid = true;
    frame.camera(id) = std::move(img);
  }
  return frame;
}

}  // namespace gslam
