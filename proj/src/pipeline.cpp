#include "gslam/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

namespace gslam {

void SlamConfig::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0)) throw FormatError(std::string("config: ") + name + " must be positive");
  };
  positive(tau_r, "tau_r");
  positive(static_cast<double>(tau_t), "tau_t");
  positive(tau_ssim, "tau_ssim");
  positive(lambda, "lambda");
  positive(splat_size_factor, "splat_size_factor");
  positive(track_step_trans, "track_step_trans");
  positive(track_step_rot, "track_step_rot");
  if (keyframe_interval < 2) throw FormatError("config: keyframe_interval must be >= 2");
  if (densify_stride < 1) throw FormatError("config: densify_stride must be >= 1");
  if (ba_bin_size < 1) throw FormatError("config: ba_bin_size must be >= 1");
}

MapperConfig SlamConfig::mapper() const {
  MapperConfig m;
  m.depth_slack = depth_slack;
  m.densify_stride = densify_stride;
  m.splat_size_factor = splat_size_factor;
  m.map_iters = map_iters;
  m.tau_t = tau_t;
  m.lambda = lambda;
  m.overlap_threshold = overlap_threshold;
  m.lr_mu = lr_mu;
  m.lr_s = lr_s;
  m.lr_color = lr_color;
  m.lr_opacity = lr_opacity;
  return m;
}

TrackConfig SlamConfig::tracker() const {
  TrackConfig t;
  t.max_iters = track_iters;
  t.step_trans = track_step_trans;
  t.step_rot = track_step_rot;
  t.tau_t = tau_t;
  return t;
}

LoopConfig SlamConfig::loop() const {
  LoopConfig l;
  l.tau_r = tau_r;
  l.tau_t = tau_t;
  l.tau_ssim = tau_ssim;
  l.window_max = loop_window_max;
  l.cooldown = loop_cooldown;
  l.pg_max_iters = pg_max_iters;
  l.ba_bin_size = ba_bin_size;
  l.refine = tracker();
  l.refine.max_iters = ba_iters;
  return l;
}

namespace {

void set_key(SlamConfig& c, const std::string& key, const std::string& value) {
  try {
    if (key == "tau_r") c.tau_r = std::stod(value);
    else if (key == "tau_t") c.tau_t = std::stoll(value);
    else if (key == "tau_ssim") c.tau_ssim = std::stod(value);
    else if (key == "loop_window_max") c.loop_window_max = std::stoi(value);
    else if (key == "loop_cooldown") c.loop_cooldown = std::stoi(value);
    else if (key == "loop_enabled") c.loop_enabled = (value == "1" || value == "true");
    else if (key == "lambda") c.lambda = std::stod(value);
    else if (key == "keyframe_interval") c.keyframe_interval = std::stoi(value);
    else if (key == "map_iters") c.map_iters = std::stoi(value);
    else if (key == "map_iters_bootstrap") c.map_iters_bootstrap = std::stoi(value);
    else if (key == "densify_stride") c.densify_stride = std::stoi(value);
    else if (key == "depth_slack") c.depth_slack = std::stod(value);
    else if (key == "splat_size_factor") c.splat_size_factor = std::stod(value);
    else if (key == "overlap_threshold") c.overlap_threshold = std::stod(value);
    else if (key == "lr_mu") c.lr_mu = std::stod(value);
    else if (key == "lr_s") c.lr_s = std::stod(value);
    else if (key == "lr_color") c.lr_color = std::stod(value);
    else if (key == "lr_opacity") c.lr_opacity = std::stod(value);
    else if (key == "track_iters") c.track_iters = std::stoi(value);
    else if (key == "track_step_trans") c.track_step_trans = std::stod(value);
    else if (key == "track_step_rot") c.track_step_rot = std::stod(value);
    else if (key == "ba_bin_size") c.ba_bin_size = std::stoi(value);
    else if (key == "ba_iters") c.ba_iters = std::stoi(value);
    else if (key == "pg_max_iters") c.pg_max_iters = std::stoi(value);
    else if (key == "seed") c.seed = std::stoull(value);
    else throw FormatError("unknown config key: " + key);
  } catch (const std::invalid_argument&) {
    throw FormatError("bad value for config key " + key + ": " + value);
  }
}

}  // namespace

SlamConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open config: " + path);
  SlamConfig config;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw FormatError("bad config line " + std::to_string(lineno) + " in " + path);
    }
    set_key(config, line.substr(0, eq), line.substr(eq + 1));
  }
  config.validate();
  return config;
}

void save_config(const std::string& path, const SlamConfig& c) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write config: " + path);
  out << "tau_r=" << c.tau_r << "\n";
  out << "tau_t=" << c.tau_t << "\n";
  out << "tau_ssim=" << c.tau_ssim << "\n";
  out << "loop_window_max=" << c.loop_window_max << "\n";
  out << "loop_cooldown=" << c.loop_cooldown << "\n";
  out << "loop_enabled=" << (c.loop_enabled ? 1 : 0) << "\n";
  out << "lambda=" << c.lambda << "\n";
  out << "keyframe_interval=" << c.keyframe_interval << "\n";
  out << "map_iters=" << c.map_iters << "\n";
  out << "map_iters_bootstrap=" << c.map_iters_bootstrap << "\n";
  out << "densify_stride=" << c.densify_stride << "\n";
  out << "depth_slack=" << c.depth_slack << "\n";
  out << "splat_size_factor=" << c.splat_size_factor << "\n";
  out << "overlap_threshold=" << c.overlap_threshold << "\n";
  out << "lr_mu=" << c.lr_mu << "\n";
  out << "lr_s=" << c.lr_s << "\n";
  out << "lr_color=" << c.lr_color << "\n";
  out << "lr_opacity=" << c.lr_opacity << "\n";
  out << "track_iters=" << c.track_iters << "\n";
  out << "track_step_trans=" << c.track_step_trans << "\n";
  out << "track_step_rot=" << c.track_step_rot << "\n";
  out << "ba_bin_size=" << c.ba_bin_size << "\n";
  out << "ba_iters=" << c.ba_iters << "\n";
  out << "pg_max_iters=" << c.pg_max_iters << "\n";
  out << "seed=" << c.seed << "\n";
}

void apply_config_override(SlamConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw FormatError("override must be key=value: " + assignment);
  set_key(config, assignment.substr(0, eq), assignment.substr(eq + 1));
}

SlamPipeline::SlamPipeline(const SlamConfig& config, const CameraIntrinsics& intr,
                           const RigExtrinsics& rig)
    : config_(config), intr_(intr), rig_(rig), rng_(config.seed) {
  config_.validate();
}

void SlamPipeline::set_reference_trajectory(std::vector<TrajectoryEntry> reference) {
  reference_ = std::move(reference);
}

double SlamPipeline::current_ate_cm() const {
  if (reference_.empty() || graph_.vertices.size() < 3) return -1;
  TrajectoryPair pair;
  pair.reference = reference_;
  for (const auto& [ts, pose] : graph_.vertices) {
    pair.estimated.push_back({static_cast<double>(ts), pose});
  }
  try {
    return ate_rmse(pair);
  } catch (const TooFewPoses&) {
    return -1;
  }
}

void SlamPipeline::process(Frame frame) {
  using clock = std::chrono::steady_clock;
  if (frame.ts <= last_ts_) {
    throw FormatError("frames must arrive in increasing timestamp order");
  }
  last_ts_ = frame.ts;

  frame.kind = classify_frame(frame.ts, config_.keyframe_interval);
  FrameTiming timing;
  timing.ts = frame.ts;

  // Track.
  const auto track_start = clock::now();
  if (map_.empty()) {
    frame.pose_mid = Se3d::identity();
  } else {
    Se3d init = prev_pose_.value_or(Se3d::identity());
    if (prev_pose_ && prev2_pose_) init = motion_model_init(*prev_pose_, *prev2_pose_);
    frame.pose_mid = init;
    const TrackResult result = track_frame(frame, map_, rig_, intr_, config_.tracker());
    frame.pose_mid = result.pose_mid;
  }
  timing.track_ms =
      std::chrono::duration<double, std::milli>(clock::now() - track_start).count();

  // Bookkeeping: odometry edge and pose records.
  if (!graph_.vertices.empty()) {
    const auto prev_it = std::prev(graph_.vertices.end());
    PoseGraphEdge edge;
    edge.i = prev_it->first;
    edge.j = frame.ts;
    edge.t_ij = prev_it->second.inverse() * frame.pose_mid;
    graph_.odometry_edges.push_back(edge);
  }
  graph_.vertices[frame.ts] = frame.pose_mid;
  store_.all_poses[frame.ts] = frame.pose_mid;

  // Densify + map optimization.
  const auto map_start = clock::now();
  const bool bootstrap = map_.empty();
  densify(frame, map_, rig_, intr_, config_.mapper());
  MapperConfig mapper_cfg = config_.mapper();
  if (bootstrap) mapper_cfg.map_iters = config_.map_iters_bootstrap;
  optimize_map(frame, store_, map_, map_optimizer_, rig_, intr_, mapper_cfg, rng_);
  timing.map_ms = std::chrono::duration<double, std::milli>(clock::now() - map_start).count();

  // Store keyframes / rand frames (images kept); plain frames keep pose only.
  if (frame.kind == FrameKind::Keyframe) {
    store_.keyframes.push_back(frame);
  } else if (frame.kind == FrameKind::Rand) {
    Frame mid_only;
    mid_only.ts = frame.ts;
    mid_only.kind = frame.kind;
    mid_only.pose_mid = frame.pose_mid;
    mid_only.camera(CameraId::Mid) = frame.camera(CameraId::Mid);
    store_.rand_list.push_back(std::move(mid_only));
  }

  // Loop closure.
  const auto loop_start = clock::now();
  if (config_.loop_enabled) {
    const double ate_before = current_ate_cm();
    const auto event =
        run_loop_closure(frame, map_, store_, graph_, detector_, rig_, intr_, config_.loop());
    if (event) {
      LoopLogEntry entry;
      entry.event = *event;
      entry.ate_before_cm = ate_before;
      entry.ate_after_cm = current_ate_cm();
      loop_log_.push_back(entry);
      // The closure moved every stored pose; refresh the motion-model state.
      frame.pose_mid = graph_.vertices.at(frame.ts);
      const auto it = graph_.vertices.find(frame.ts);
      if (it != graph_.vertices.begin()) {
        const auto prev_it = std::prev(it);
        prev_pose_ = prev_it->second;
        if (prev_it != graph_.vertices.begin()) prev2_pose_ = std::prev(prev_it)->second;
      }
    }
  }
  timing.loop_ms = std::chrono::duration<double, std::milli>(clock::now() - loop_start).count();

  timing.n_gaussians = map_.size();
  timings_.push_back(timing);

  prev2_pose_ = prev_pose_;
  prev_pose_ = frame.pose_mid;
}

std::vector<TrajectoryEntry> SlamPipeline::trajectory() const {
  std::vector<TrajectoryEntry> out;
  out.reserve(graph_.vertices.size());
  for (const auto& [ts, pose] : graph_.vertices) {
    out.push_back({static_cast<double>(ts), pose});
  }
  return out;
}

MetricsReport evaluate_sequence(const SequenceReader& reader,
                                const std::vector<TrajectoryEntry>& estimated,
                                const GaussianMap& map, const SlamConfig& config,
                                bool training_views) {
  MetricsReport report;

  TrajectoryPair pair;
  pair.estimated = estimated;
  pair.reference = reader.ground_truth();
  const AteResult ate = ate_alignment(pair);
  report.ate_rmse_cm = ate.rmse_cm;
  report.ate_pairs = ate.pairs;

  // Reference poses mapped into the map's gauge.
  const Se3d est_from_ref = ate.ref_from_est.inverse();

  std::map<std::int64_t, Se3d> estimated_by_ts;
  for (const auto& e : estimated) {
    estimated_by_ts[static_cast<std::int64_t>(std::llround(e.ts))] = e.pose;
  }

  const MapView view = MapView::all(map);
  double psnr_sum = 0, ssim_sum = 0, depth_sum = 0;
  for (const auto& gt : reader.ground_truth()) {
    const auto ts = static_cast<std::int64_t>(std::llround(gt.ts));
    if (ts >= reader.frame_count()) continue;
    const FrameKind kind = classify_frame(ts, config.keyframe_interval);
    const bool is_training = kind != FrameKind::Plain;
    if (training_views != is_training) continue;

    Se3d world_from_mid;
    if (training_views) {
      const auto it = estimated_by_ts.find(ts);
      if (it == estimated_by_ts.end()) continue;
      world_from_mid = it->second;
    } else {
      world_from_mid = est_from_ref * gt.pose;
    }

    const Frame frame = reader.read_frame(static_cast<int>(ts), /*all_cameras=*/false);
    const CameraImage& obs = frame.camera(CameraId::Mid);
    const RenderOutput rendered = render(view, world_from_mid.inverse(), reader.intrinsics());

    ViewMetrics vm;
    vm.ts = ts;
    vm.psnr_db = psnr(rendered.color, obs.color);
    vm.ssim_score = ssim(rendered.color, obs.color);
    try {
      vm.depth_l1_cm = depth_l1(rendered.depth, obs.depth);
    } catch (const NoValidPixels&) {
      vm.depth_l1_cm = -1;
    }
    report.views.push_back(vm);
    psnr_sum += std::isinf(vm.psnr_db) ? 100.0 : vm.psnr_db;  // cap the sentinel for means
    ssim_sum += vm.ssim_score;
    depth_sum += std::max(vm.depth_l1_cm, 0.0);
  }
  if (!report.views.empty()) {
    report.mean_psnr_db = psnr_sum / report.views.size();
    report.mean_ssim = ssim_sum / report.views.size();
    report.mean_depth_l1_cm = depth_sum / report.views.size();
  }
  return report;
}

}  // namespace gslam
