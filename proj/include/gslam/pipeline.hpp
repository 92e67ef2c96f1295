#pragma once

#include <optional>
#include <random>
#include <string>
#include <vector>

#include "gslam/eval.hpp"
#include "gslam/loop.hpp"
#include "gslam/mapper.hpp"
#include "gslam/sim.hpp"

namespace gslam {

/// Every tunable of the system. Paper operating points are the defaults for
/// the thresholds; optimizer settings were fixed by calibration on the
/// simulator.
struct SlamConfig {
  // Loop thresholds.
  double tau_r = 0.8;
  std::int64_t tau_t = 60;
  double tau_ssim = 25;  // accepted when ssim*100 >= tau_ssim
  int loop_window_max = 10;
  int loop_cooldown = 30;
  bool loop_enabled = true;

  // Mapping.
  double lambda = 0.5;
  int keyframe_interval = 5;
  int map_iters = 20;
  int map_iters_bootstrap = 120;
  int densify_stride = 2;
  double depth_slack = 0.05;
  double splat_size_factor = 1.0;
  double overlap_threshold = 0.3;
  double lr_mu = 2e-3;
  double lr_s = 1e-3;
  double lr_color = 1e-2;
  double lr_opacity = 5e-2;

  // Tracking and bundle adjustment.
  int track_iters = 40;
  double track_step_trans = 2e-3;
  double track_step_rot = 2e-3;
  int ba_bin_size = 8;
  int ba_iters = 15;

  // Pose graph.
  int pg_max_iters = 100;

  std::uint64_t seed = 0;

  void validate() const;

  MapperConfig mapper() const;
  TrackConfig tracker() const;
  LoopConfig loop() const;
};

/// Plain-text key=value config file; unknown keys are rejected.
SlamConfig load_config(const std::string& path);
void save_config(const std::string& path, const SlamConfig& config);
/// Applies one "key=value" override in place.
void apply_config_override(SlamConfig& config, const std::string& assignment);

struct FrameTiming {
  std::int64_t ts = 0;
  double track_ms = 0, map_ms = 0, loop_ms = 0;
  std::size_t n_gaussians = 0;
};

struct LoopLogEntry {
  LoopClosureEvent event;
  double ate_before_cm = -1, ate_after_cm = -1;  // -1 when no reference is known
};

/// Sequential frame-by-frame SLAM loop: track, keyframe/rand bookkeeping,
/// densify, map optimization, loop closure. All randomness (mapper frame
/// sampling) comes from one generator seeded by config.seed.
class SlamPipeline {
 public:
  SlamPipeline(const SlamConfig& config, const CameraIntrinsics& intr, const RigExtrinsics& rig);

  /// Frames must arrive in timestamp order; the frame's kind and pose fields
  /// are managed by the pipeline.
  void process(Frame frame);

  /// Optional: enables ATE columns in the loop log.
  void set_reference_trajectory(std::vector<TrajectoryEntry> reference);

  const GaussianMap& map() const { return map_; }
  const FrameStore& store() const { return store_; }
  const PoseGraph& graph() const { return graph_; }
  const LoopDetector& detector() const { return detector_; }
  const std::vector<FrameTiming>& timings() const { return timings_; }
  const std::vector<LoopLogEntry>& loop_log() const { return loop_log_; }

  std::vector<TrajectoryEntry> trajectory() const;

 private:
  double current_ate_cm() const;

  SlamConfig config_;
  CameraIntrinsics intr_;
  RigExtrinsics rig_;
  GaussianMap map_;
  FrameStore store_;
  PoseGraph graph_;
  LoopDetector detector_;
  MapOptimizer map_optimizer_;
  std::mt19937_64 rng_;
  std::vector<FrameTiming> timings_;
  std::vector<LoopLogEntry> loop_log_;
  std::vector<TrajectoryEntry> reference_;
  std::optional<Se3d> prev_pose_, prev2_pose_;  // world-from-mid history
  std::int64_t last_ts_ = -1;
};

/// Held-out rendering metrics: every frame outside keyframes and rand-list,
/// rendered at the gauge-aligned reference pose and compared to the observed
/// images. When training_views is set, keyframe/rand frames are rendered at
/// their estimated poses instead.
MetricsReport evaluate_sequence(const SequenceReader& reader,
                                const std::vector<TrajectoryEntry>& estimated,
                                const GaussianMap& map, const SlamConfig& config,
                                bool training_views = false);

}  // namespace gslam
