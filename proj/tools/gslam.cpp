// Command-line front end: simulate, run, eval, render.
//
// Exit codes: 0 success, 1 usage, 2 data/format, 3 numerical failure.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "gslam/pipeline.hpp"
#include "gslam/png_io.hpp"

namespace fs = std::filesystem;
using namespace gslam;

namespace {

struct SimulateArgs {
  std::string out_dir;
  int frames = 120;
  double deg = 3.0;
  int width = 64, height = 48;
  double jitter = 0.0;
  double depth_noise = 0.0;
  double cam_radius = 0.25;
  std::uint64_t seed = 1;
};

int cmd_simulate(const SimulateArgs& args) {
  SequenceSpec spec;
  spec.frames = args.frames;
  spec.deg_per_frame = args.deg;
  spec.intr = default_intrinsics(args.width, args.height);
  spec.rig = default_rig();
  spec.cam_radius = args.cam_radius;
  spec.jitter_sigma = args.jitter;
  spec.depth_noise_sigma = args.depth_noise;
  spec.seed = args.seed;
  const SceneModel scene = generate_scene(args.seed);
  simulate_sequence(scene, spec, args.out_dir);
  std::printf("sequence: %s\n", args.out_dir.c_str());
  std::printf("frames: %d (%.1f deg/frame, %.1f deg total)\n", spec.frames, spec.deg_per_frame,
              spec.frames * spec.deg_per_frame);
  std::printf("resolution: %dx%d, cameras: 3\n", spec.intr.width, spec.intr.height);
  std::printf("noise: jitter_sigma=%g rad, depth_sigma=%g m\n", spec.jitter_sigma,
              spec.depth_noise_sigma);
  return 0;
}

struct RunArgs {
  std::string dataset;
  std::string config_path;
  std::string out_dir;
  std::vector<std::string> overrides;
  bool no_loop = false;
};

int cmd_run(const RunArgs& args) {
  SlamConfig config;
  if (!args.config_path.empty()) config = load_config(args.config_path);
  for (const auto& assignment : args.overrides) apply_config_override(config, assignment);
  if (args.no_loop) config.loop_enabled = false;
  config.validate();

  SequenceReader reader(args.dataset);
  fs::create_directories(args.out_dir);

  SlamPipeline pipeline(config, reader.intrinsics(), reader.rig());
  if (!reader.ground_truth().empty()) {
    pipeline.set_reference_trajectory(reader.ground_truth());
  }

  for (int i = 0; i < reader.frame_count(); ++i) {
    const bool keyframe = classify_frame(i, config.keyframe_interval) == FrameKind::Keyframe;
    pipeline.process(reader.read_frame(i, keyframe));
  }

  const fs::path out(args.out_dir);
  save_trajectory((out / "trajectory.txt").string(), pipeline.trajectory());
  save_map((out / "map.gslm").string(), pipeline.map());

  {
    std::ofstream log(out / "loop_log.txt");
    for (const auto& entry : pipeline.loop_log()) {
      char buf[256];
      std::snprintf(buf, sizeof(buf), "%lld %lld %.6f %.6f %.6f %.6f\n",
                    static_cast<long long>(entry.event.ts_j),
                    static_cast<long long>(entry.event.ts_i), entry.event.gamma,
                    entry.event.ssim, entry.ate_before_cm, entry.ate_after_cm);
      log << buf;
    }
  }
  {
    std::ofstream csv(out / "timing.csv");
    csv << "ts,track_ms,map_ms,loop_ms,n_gaussians\n";
    for (const auto& t : pipeline.timings()) {
      char buf[256];
      std::snprintf(buf, sizeof(buf), "%lld,%.3f,%.3f,%.3f,%zu\n",
                    static_cast<long long>(t.ts), t.track_ms, t.map_ms, t.loop_ms,
                    t.n_gaussians);
      csv << buf;
    }
  }
  std::printf("processed %d frames, %zu gaussians, %zu loop closures\n", reader.frame_count(),
              pipeline.map().size(), pipeline.loop_log().size());
  std::printf("outputs in %s\n", args.out_dir.c_str());
  return 0;
}

struct EvalArgs {
  std::string estimated;
  std::string dataset;
  std::string map_path;
  std::string out_prefix = "metrics";
  bool training_views = false;
};

int cmd_eval(const EvalArgs& args) {
  SequenceReader reader(args.dataset);
  const auto estimated = load_trajectory(args.estimated);
  const GaussianMap map = load_map(args.map_path);
  SlamConfig config;
  const MetricsReport report =
      evaluate_sequence(reader, estimated, map, config, args.training_views);
  write_metrics_report(args.out_prefix + ".txt", args.out_prefix + ".jsonl", report);
  std::printf("ate_rmse_cm=%.6f\n", report.ate_rmse_cm);
  std::printf("mean_psnr_db=%.6f\n", report.mean_psnr_db);
  std::printf("mean_ssim=%.6f\n", report.mean_ssim);
  std::printf("mean_depth_l1_cm=%.6f\n", report.mean_depth_l1_cm);
  std::printf("views=%zu\n", report.views.size());
  return 0;
}

struct RenderArgs {
  std::string map_path;
  std::string calib_dataset;
  std::vector<double> pose;  // tx ty tz qx qy qz qw (world-from-camera)
  std::string out_prefix = "render";
  bool history_only = false;
  bool novel_only = false;
  std::int64_t t_current = 0;
  std::int64_t tau_t = 60;
};

int cmd_render(const RenderArgs& args) {
  const GaussianMap map = load_map(args.map_path);
  SequenceReader reader(args.calib_dataset);
  Se3d world_from_cam;
  world_from_cam.translation = {args.pose[0], args.pose[1], args.pose[2]};
  world_from_cam.rotation =
      Eigen::Quaterniond(args.pose[6], args.pose[3], args.pose[4], args.pose[5])
          .normalized()
          .toRotationMatrix();

  Partition part;
  MapView view = MapView::all(map);
  if (args.history_only || args.novel_only) {
    part = partition_by_timestamp(map, args.t_current, args.tau_t);
    view = MapView::subset(map, args.history_only ? part.history : part.novel);
  }
  const RenderOutput out = render(view, world_from_cam.inverse(), reader.intrinsics());
  write_png_rgb8(args.out_prefix + "_color.png", out.color);
  write_png_depth16(args.out_prefix + "_depth.png", out.depth);
  ColorImage sil(out.silhouette.rows(), out.silhouette.cols());
  sil.r = out.silhouette;
  sil.g = out.silhouette;
  sil.b = out.silhouette;
  write_png_rgb8(args.out_prefix + "_silhouette.png", sil);
  std::printf("wrote %s_{color,depth,silhouette}.png\n", args.out_prefix.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gaussian-splatting SLAM for a rotating three-camera RGB-D rig"};
  app.require_subcommand(1);

  SimulateArgs sim_args;
  auto* sim_cmd = app.add_subcommand("simulate", "Generate a synthetic sequence");
  sim_cmd->add_option("--out", sim_args.out_dir, "Output directory")->required();
  sim_cmd->add_option("--frames", sim_args.frames, "Frame count");
  sim_cmd->add_option("--deg", sim_args.deg, "Degrees of yaw per frame");
  sim_cmd->add_option("--width", sim_args.width, "Image width");
  sim_cmd->add_option("--height", sim_args.height, "Image height");
  sim_cmd->add_option("--jitter", sim_args.jitter, "Rotation-axis jitter sigma (rad)");
  sim_cmd->add_option("--depth-noise", sim_args.depth_noise, "Depth noise sigma (m)");
  sim_cmd->add_option("--cam-radius", sim_args.cam_radius, "Camera offset from axis (m)");
  sim_cmd->add_option("--seed", sim_args.seed, "Scene and noise seed");

  RunArgs run_args;
  auto* run_cmd = app.add_subcommand("run", "Run SLAM over a sequence");
  run_cmd->add_option("dataset", run_args.dataset, "Sequence directory")->required();
  run_cmd->add_option("--config", run_args.config_path, "key=value config file");
  run_cmd->add_option("--out", run_args.out_dir, "Output directory")->required();
  run_cmd->add_option("--set", run_args.overrides, "Config override key=value");
  run_cmd->add_flag("--no-loop", run_args.no_loop, "Disable the loop-closure module");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a run against ground truth");
  eval_cmd->add_option("estimated", eval_args.estimated, "Estimated trajectory")->required();
  eval_cmd->add_option("dataset", eval_args.dataset, "Sequence directory")->required();
  eval_cmd->add_option("map", eval_args.map_path, "Map checkpoint")->required();
  eval_cmd->add_option("--out-prefix", eval_args.out_prefix, "Report path prefix");
  eval_cmd->add_flag("--training-views", eval_args.training_views,
                     "Evaluate keyframe/rand views at estimated poses instead of held-out");

  RenderArgs render_args;
  auto* render_cmd = app.add_subcommand("render", "Render a map checkpoint from a pose");
  render_cmd->add_option("map", render_args.map_path, "Map checkpoint")->required();
  render_cmd->add_option("dataset", render_args.calib_dataset, "Sequence dir (for calib)")
      ->required();
  render_cmd->add_option("--pose", render_args.pose, "tx ty tz qx qy qz qw (world-from-cam)")
      ->expected(7)
      ->required();
  render_cmd->add_option("--out-prefix", render_args.out_prefix, "Output path prefix");
  render_cmd->add_flag("--history-only", render_args.history_only, "Render history set only");
  render_cmd->add_flag("--novel-only", render_args.novel_only, "Render novel set only");
  render_cmd->add_option("--t-current", render_args.t_current, "Partition timestamp");
  render_cmd->add_option("--tau-t", render_args.tau_t, "Partition threshold (frames)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return e.get_exit_code() == 0 ? 0 : 1;
  }

  try {
    if (sim_cmd->parsed()) return cmd_simulate(sim_args);
    if (run_cmd->parsed()) return cmd_run(run_args);
    if (eval_cmd->parsed()) return cmd_eval(eval_args);
    if (render_cmd->parsed()) return cmd_render(render_args);
  } catch (const FormatError& e) {
    std::fprintf(stderr, "format error: %s\n", e.what());
    return 2;
  } catch (const IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return 2;
  } catch (const TooFewPoses& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 3;
  } catch (const NoValidPixels& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 3;
  } catch (const NotConnected& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 1;
}
