#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "gslam/mapper.hpp"
#include "gslam/tracker.hpp"

namespace gslam {

/// Relative-pose constraint: measured pose of frame j expressed in frame i,
/// T_ij = pose_i^-1 * pose_j for consistent vertices.
struct PoseGraphEdge {
  std::int64_t i = 0, j = 0;
  Se3d t_ij;
};

struct PoseGraph {
  std::map<std::int64_t, Se3d> vertices;  // ts -> world-from-camera (mid)
  std::vector<PoseGraphEdge> odometry_edges;
  std::vector<PoseGraphEdge> loop_edges;
};

struct LoopCandidate {
  std::int64_t current_ts = 0;   // loop frame j
  double ratio = 0;              // gamma = N_h / N_n
  double ssim_score = 0;         // history-vs-novel render similarity
  std::int64_t endpoint_ts = 0;  // dominant history anchor, frame i
};

struct CovisibilityCounts {
  long history = 0;
  long novel = 0;
};

/// Counts history/novel Gaussians whose centers project inside the image with
/// positive depth.
CovisibilityCounts covisibility_counts(const GaussianMap& map, const Se3d& cam_from_world,
                                       const CameraIntrinsics& intr, std::int64_t t_c,
                                       std::int64_t tau_t);

struct LoopConfig {
  double tau_r = 0.8;
  std::int64_t tau_t = 60;
  double tau_ssim = 25;  // acceptance threshold on ssim*100 for the winning candidate
  int window_max = 10;   // candidate window also closes after this many passing frames
  int cooldown = 30;     // frames to suppress detection after a closure
  int pg_max_iters = 100;
  double pg_tol = 1e-8;
  int ba_bin_size = 8;
  TrackConfig refine;  // optimizer contract for constraint estimation and BA
};

/// A finalized candidate carries the winning frame so the loop constraint can
/// be re-estimated against its images.
struct FinalizedCandidate {
  LoopCandidate candidate;
  Frame frame;
};

/// Windowed loop detection. Frames passing the covisibility ratio test
/// accumulate candidates; the best-SSIM candidate is finalized when the run
/// ends (ratio test fails) or the window reaches window_max frames.
class LoopDetector {
 public:
  /// Observe one tracked frame; returns a finalized candidate when a window
  /// closes. Deterministic: no randomness is consumed.
  std::optional<FinalizedCandidate> observe(const Frame& frame, const GaussianMap& map,
                                            const CameraIntrinsics& intr,
                                            const LoopConfig& config);

  void start_cooldown(std::int64_t ts, int cooldown_frames);
  bool in_cooldown(std::int64_t ts) const { return ts < cooldown_until_; }

  const std::vector<LoopCandidate>& all_candidates() const { return all_candidates_; }

 private:
  std::optional<FinalizedCandidate> finalize(const LoopConfig& config);

  std::vector<FinalizedCandidate> window_;
  std::vector<LoopCandidate> all_candidates_;  // every ratio-passing frame, for diagnostics
  std::int64_t cooldown_until_ = -1;
};

/// Re-estimates the current frame's pose against the history set only and
/// returns the loop constraint T_ij (endpoint i, current j). nullopt when the
/// refinement diverges (final loss above twice the initial loss).
std::optional<Se3d> estimate_loop_constraint(const LoopCandidate& candidate, const Frame& frame,
                                             const GaussianMap& map, const RigExtrinsics& rig,
                                             const CameraIntrinsics& intr,
                                             const PoseGraph& graph, const LoopConfig& config);

/// Damped Gauss-Newton over vertex tangents of Eq. 12's objective. Vertices
/// listed in `fixed` are frozen; when empty, the first vertex provides the
/// gauge. Returns iterations applied. Throws NotConnected.
int optimize_pose_graph(PoseGraph& graph, const LoopConfig& config,
                        const std::set<std::int64_t>& fixed = {});

/// Total squared residual of the graph objective (diagnostic and test hook).
double pose_graph_residual(const PoseGraph& graph);

/// Eq. 13: rigid per-anchor correction of Gaussian positions. Scale, color,
/// opacity and anchor stay untouched (exact for isotropic covariance).
void update_gaussians(GaussianMap& map, const std::map<std::int64_t, Se3d>& poses_before,
                      const std::map<std::int64_t, Se3d>& poses_after);

/// Eq. 14: merged keyframe + rand frames, binned by timestamp, each bin's
/// mid-camera poses refined against the (fixed) map. Updates the store poses
/// and returns the refined set.
std::map<std::int64_t, Se3d> local_bundle_adjustment(FrameStore& store, const GaussianMap& map,
                                                     const RigExtrinsics& rig,
                                                     const CameraIntrinsics& intr,
                                                     const LoopConfig& config);

/// Second graph pass: keyframe/rand vertices frozen at the refined values,
/// odometry edges unchanged; only the remaining vertices move.
void propagate_nonkey_poses(PoseGraph& graph, const std::map<std::int64_t, Se3d>& refined,
                            const LoopConfig& config);

struct LoopClosureEvent {
  std::int64_t ts_j = 0;  // current frame
  std::int64_t ts_i = 0;  // endpoint frame
  double gamma = 0;
  double ssim = 0;
};

/// Full pipeline for one tracked frame: detection, constraint estimation,
/// pose graph, Gaussian update, two-stage bundle adjustment. Returns the
/// event when a closure was applied. All stored poses (graph vertices, frame
/// store, keyframe/rand frames) are left mutually consistent.
std::optional<LoopClosureEvent> run_loop_closure(const Frame& current, GaussianMap& map,
                                                 FrameStore& store, PoseGraph& graph,
                                                 LoopDetector& detector,
                                                 const RigExtrinsics& rig,
                                                 const CameraIntrinsics& intr,
                                                 const LoopConfig& config);

}  // namespace gslam
