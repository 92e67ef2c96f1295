#include "gslam/loop.hpp"

#include <Eigen/SparseCholesky>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "gslam/ssim.hpp"

namespace gslam {

CovisibilityCounts covisibility_counts(const GaussianMap& map, const Se3d& cam_from_world,
                                       const CameraIntrinsics& intr, std::int64_t t_c,
                                       std::int64_t tau_t) {
  CovisibilityCounts counts;
  for (const auto& g : map.gaussians()) {
    const Eigen::Vector3d x_cam = cam_from_world * g.mu;
    if (x_cam.z() <= kNearPlane) continue;
    const Eigen::Vector2d px = project(intr, x_cam);
    if (px.x() < 0 || px.x() >= intr.width || px.y() < 0 || px.y() >= intr.height) continue;
    const std::int64_t dt = std::llabs(g.anchor_ts - t_c);
    if (dt >= tau_t) {
      ++counts.history;
    } else {
      ++counts.novel;
    }
  }
  return counts;
}

namespace {

double mean_ssim(const ColorImage& a, const ColorImage& b) {
  return ssim_plane(a.gray(), b.gray()).ssim.mean();
}

// Most frequent anchor timestamp among history Gaussians visible in the view;
// ties resolve to the older anchor.
std::optional<std::int64_t> dominant_history_anchor(const GaussianMap& map,
                                                    const Se3d& cam_from_world,
                                                    const CameraIntrinsics& intr,
                                                    std::int64_t t_c, std::int64_t tau_t) {
  std::map<std::int64_t, long> counts;
  for (const auto& g : map.gaussians()) {
    if (std::llabs(g.anchor_ts - t_c) < tau_t) continue;
    const Eigen::Vector3d x_cam = cam_from_world * g.mu;
    if (x_cam.z() <= kNearPlane) continue;
    const Eigen::Vector2d px = project(intr, x_cam);
    if (px.x() < 0 || px.x() >= intr.width || px.y() < 0 || px.y() >= intr.height) continue;
    ++counts[g.anchor_ts];
  }
  if (counts.empty()) return std::nullopt;
  auto best = counts.begin();
  for (auto it = counts.begin(); it != counts.end(); ++it) {
    if (it->second > best->second) best = it;
  }
  return best->first;
}

}  // namespace

std::optional<FinalizedCandidate> LoopDetector::finalize(const LoopConfig& config) {
  if (window_.empty()) return std::nullopt;
  auto best = window_.begin();
  for (auto it = window_.begin(); it != window_.end(); ++it) {
    if (it->candidate.ssim_score > best->candidate.ssim_score) best = it;
  }
  FinalizedCandidate winner = std::move(*best);
  window_.clear();
  if (winner.candidate.ssim_score * 100.0 < config.tau_ssim) return std::nullopt;
  return winner;
}

std::optional<FinalizedCandidate> LoopDetector::observe(const Frame& frame,
                                                        const GaussianMap& map,
                                                        const CameraIntrinsics& intr,
                                                        const LoopConfig& config) {
  if (in_cooldown(frame.ts) || map.empty()) return std::nullopt;

  const Se3d cam_from_world = frame.pose_mid.inverse();
  const auto counts = covisibility_counts(map, cam_from_world, intr, frame.ts, config.tau_t);
  const bool passing =
      counts.novel > 0 &&
      static_cast<double>(counts.history) / static_cast<double>(counts.novel) > config.tau_r;

  if (!passing) return finalize(config);

  const Partition part = partition_by_timestamp(map, frame.ts, config.tau_t);
  const RenderOutput novel_view =
      render(MapView::subset(map, part.novel), cam_from_world, intr);
  const RenderOutput history_view =
      render(MapView::subset(map, part.history), cam_from_world, intr);

  LoopCandidate cand;
  cand.current_ts = frame.ts;
  cand.ratio = static_cast<double>(counts.history) / static_cast<double>(counts.novel);
  cand.ssim_score = mean_ssim(novel_view.color, history_view.color);
  const auto endpoint =
      dominant_history_anchor(map, cam_from_world, intr, frame.ts, config.tau_t);
  if (!endpoint) return std::nullopt;  // ratio passed but nothing projects; ignore
  cand.endpoint_ts = *endpoint;

  all_candidates_.push_back(cand);
  window_.push_back(FinalizedCandidate{cand, frame});
  if (static_cast<int>(window_.size()) >= config.window_max) return finalize(config);
  return std::nullopt;
}

void LoopDetector::start_cooldown(std::int64_t ts, int cooldown_frames) {
  cooldown_until_ = ts + cooldown_frames;
  window_.clear();
}

std::optional<Se3d> estimate_loop_constraint(const LoopCandidate& candidate, const Frame& frame,
                                             const GaussianMap& map, const RigExtrinsics& rig,
                                             const CameraIntrinsics& intr,
                                             const PoseGraph& graph, const LoopConfig& config) {
  const Partition part = partition_by_timestamp(map, frame.ts, config.tau_t);
  if (part.history.empty()) return std::nullopt;
  const MapView history = MapView::subset(map, part.history);

  // Initial loss at the drifted pose; empty masks on every camera mean the
  // history set cannot constrain this frame.
  double initial_loss = 0;
  bool any = false;
  const Se3d mid_from_world = frame.pose_mid.inverse();
  for (int c = 0; c < kNumCameras; ++c) {
    const auto id = static_cast<CameraId>(c);
    if (!frame.camera(id).valid) continue;
    const auto loss =
        tracking_loss(frame.camera(id), history, rig.cam_from_mid(id) * mid_from_world, intr);
    if (loss) {
      any = true;
      initial_loss += loss->loss;
    }
  }
  if (!any) return std::nullopt;

  const TrackResult refit = optimize_frame_pose(frame, history, rig, intr, config.refine);
  if (!refit.report.converged && refit.report.iterations == 0) return std::nullopt;
  if (refit.report.final_loss > 2.0 * initial_loss) return std::nullopt;

  const auto it = graph.vertices.find(candidate.endpoint_ts);
  if (it == graph.vertices.end()) return std::nullopt;
  return it->second.inverse() * refit.pose_mid;
}

double pose_graph_residual(const PoseGraph& graph) {
  double total = 0;
  auto add = [&](const PoseGraphEdge& e) {
    const Se3d& ti = graph.vertices.at(e.i);
    const Se3d& tj = graph.vertices.at(e.j);
    const Eigen::Vector3d rt =
        e.t_ij.translation - ti.rotation.transpose() * (tj.translation - ti.translation);
    const Eigen::Vector3d rr =
        so3_log<double>(e.t_ij.rotation.transpose() * ti.rotation.transpose() * tj.rotation);
    total += rt.squaredNorm() + rr.squaredNorm();
  };
  for (const auto& e : graph.odometry_edges) add(e);
  for (const auto& e : graph.loop_edges) add(e);
  return total;
}

namespace {

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  }
  void unite(int a, int b) { parent[find(a)] = find(b); }
};

}  // namespace

int optimize_pose_graph(PoseGraph& graph, const LoopConfig& config,
                        const std::set<std::int64_t>& fixed) {
  const std::size_t n_vertices = graph.vertices.size();
  if (n_vertices == 0) return 0;

  std::map<std::int64_t, int> vertex_slot;
  int slot = 0;
  for (const auto& [ts, pose] : graph.vertices) vertex_slot[ts] = slot++;

  std::vector<PoseGraphEdge> edges = graph.odometry_edges;
  edges.insert(edges.end(), graph.loop_edges.begin(), graph.loop_edges.end());
  for (const auto& e : edges) {
    if (!vertex_slot.count(e.i) || !vertex_slot.count(e.j)) {
      throw NotConnected("pose graph edge references missing vertex");
    }
  }

  UnionFind uf(static_cast<int>(n_vertices));
  for (const auto& e : edges) uf.unite(vertex_slot[e.i], vertex_slot[e.j]);
  const int root = uf.find(0);
  for (int k = 0; k < static_cast<int>(n_vertices); ++k) {
    if (uf.find(k) != root) throw NotConnected("pose graph has disconnected vertices");
  }

  // Free-parameter layout; gauge = first vertex when nothing is pinned.
  std::map<std::int64_t, int> param_offset;
  std::set<std::int64_t> pinned = fixed;
  if (pinned.empty()) pinned.insert(graph.vertices.begin()->first);
  int n_params = 0;
  for (const auto& [ts, pose] : graph.vertices) {
    if (pinned.count(ts)) continue;
    param_offset[ts] = n_params;
    n_params += 6;
  }
  if (n_params == 0) return 0;

  auto cost_of = [&](const std::map<std::int64_t, Se3d>& vertices) {
    PoseGraph tmp;
    tmp.vertices = vertices;
    tmp.odometry_edges = graph.odometry_edges;
    tmp.loop_edges = graph.loop_edges;
    return pose_graph_residual(tmp);
  };

  double cost = pose_graph_residual(graph);
  double damping = 1e-6;
  int iters = 0;
  for (; iters < config.pg_max_iters; ++iters) {
    Eigen::SparseMatrix<double> h(n_params, n_params);
    std::vector<Eigen::Triplet<double>> triplets;
    Eigen::VectorXd g = Eigen::VectorXd::Zero(n_params);

    for (const auto& e : edges) {
      const Se3d& ti = graph.vertices.at(e.i);
      const Se3d& tj = graph.vertices.at(e.j);
      const Eigen::Matrix3d ri_t = ti.rotation.transpose();
      const Eigen::Vector3d rt =
          e.t_ij.translation - ri_t * (tj.translation - ti.translation);
      const Eigen::Vector3d rr =
          so3_log<double>(e.t_ij.rotation.transpose() * ri_t * tj.rotation);

      Eigen::Matrix<double, 6, 1> r;
      r << rt, rr;

      // Jacobian w.r.t. the left perturbation of vertex j; vertex i is -J_j.
      Eigen::Matrix<double, 6, 6> jj = Eigen::Matrix<double, 6, 6>::Zero();
      jj.block<3, 3>(0, 0) = -ri_t;
      jj.block<3, 3>(0, 3) = ri_t * so3_hat<double>(tj.translation);
      jj.block<3, 3>(3, 3) = so3_right_jacobian_inv<double>(rr) * tj.rotation.transpose();
      const Eigen::Matrix<double, 6, 6> ji = -jj;

      const bool free_i = param_offset.count(e.i) > 0;
      const bool free_j = param_offset.count(e.j) > 0;
      const int oi = free_i ? param_offset[e.i] : -1;
      const int oj = free_j ? param_offset[e.j] : -1;

      auto add_block = [&](int row0, int col0, const Eigen::Matrix<double, 6, 6>& block) {
        for (int a = 0; a < 6; ++a)
          for (int b = 0; b < 6; ++b) triplets.emplace_back(row0 + a, col0 + b, block(a, b));
      };
      if (free_i) {
        add_block(oi, oi, ji.transpose() * ji);
        g.segment<6>(oi) += ji.transpose() * r;
      }
      if (free_j) {
        add_block(oj, oj, jj.transpose() * jj);
        g.segment<6>(oj) += jj.transpose() * r;
      }
      if (free_i && free_j) {
        add_block(oi, oj, ji.transpose() * jj);
        add_block(oj, oi, jj.transpose() * ji);
      }
    }

    if (g.lpNorm<Eigen::Infinity>() < 1e-14) break;

    bool accepted = false;
    double step_norm = 0;
    for (int attempt = 0; attempt < 12 && !accepted; ++attempt) {
      auto damped = triplets;
      for (int k = 0; k < n_params; ++k) damped.emplace_back(k, k, damping);
      h.setFromTriplets(damped.begin(), damped.end());
      Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(h);
      if (solver.info() != Eigen::Success) {
        damping *= 10;
        continue;
      }
      const Eigen::VectorXd delta = solver.solve(-g);
      if (solver.info() != Eigen::Success) {
        damping *= 10;
        continue;
      }

      std::map<std::int64_t, Se3d> candidate = graph.vertices;
      for (const auto& [ts, offset] : param_offset) {
        candidate[ts] = se3_exp<double>(delta.segment<6>(offset)) * candidate[ts];
      }
      const double new_cost = cost_of(candidate);
      if (new_cost <= cost) {
        graph.vertices = std::move(candidate);
        cost = new_cost;
        damping = std::max(damping * 0.5, 1e-9);
        step_norm = delta.lpNorm<Eigen::Infinity>();
        accepted = true;
      } else {
        damping *= 10;
      }
    }
    if (!accepted) break;
    if (step_norm < config.pg_tol) {
      ++iters;
      break;
    }
  }
  return iters;
}

void update_gaussians(GaussianMap& map, const std::map<std::int64_t, Se3d>& poses_before,
                      const std::map<std::int64_t, Se3d>& poses_after) {
  std::map<std::int64_t, Se3d> corrections;
  for (const auto& [anchor, indices] : map.timestamp_index()) {
    const auto before = poses_before.find(anchor);
    const auto after = poses_after.find(anchor);
    if (before == poses_before.end() || after == poses_after.end()) {
      throw MissingAnchorPose("no pose pair for anchor " + std::to_string(anchor));
    }
    corrections.emplace(anchor, after->second * before->second.inverse());
  }
  for (const auto& [anchor, indices] : map.timestamp_index()) {
    const Se3d& c = corrections.at(anchor);
    for (const auto idx : indices) {
      Gaussian& g = map.mutable_at(idx);
      g.mu = c * g.mu;
    }
  }
}

std::map<std::int64_t, Se3d> local_bundle_adjustment(FrameStore& store, const GaussianMap& map,
                                                     const RigExtrinsics& rig,
                                                     const CameraIntrinsics& intr,
                                                     const LoopConfig& config) {
  std::vector<Frame*> members;
  for (auto& kf : store.keyframes) members.push_back(&kf);
  for (auto& rf : store.rand_list) members.push_back(&rf);
  std::sort(members.begin(), members.end(),
            [](const Frame* a, const Frame* b) { return a->ts < b->ts; });

  const MapView view = MapView::all(map);
  std::map<std::int64_t, Se3d> refined;
  const int bin_size = std::max(config.ba_bin_size, 1);
  for (std::size_t start = 0; start < members.size(); start += bin_size) {
    const std::size_t end = std::min(members.size(), start + bin_size);
    for (std::size_t k = start; k < end; ++k) {
      Frame* frame = members[k];
      // Eq. 14 considers the middle camera only.
      Frame mid_only;
      mid_only.ts = frame->ts;
      mid_only.kind = frame->kind;
      mid_only.pose_mid = frame->pose_mid;
      mid_only.camera(CameraId::Mid) = frame->camera(CameraId::Mid);
      const TrackResult result = optimize_frame_pose(mid_only, view, rig, intr, config.refine);
      frame->pose_mid = result.pose_mid;
      refined[frame->ts] = result.pose_mid;
      store.all_poses[frame->ts] = result.pose_mid;
    }
  }
  return refined;
}

void propagate_nonkey_poses(PoseGraph& graph, const std::map<std::int64_t, Se3d>& refined,
                            const LoopConfig& config) {
  std::set<std::int64_t> frozen;
  for (const auto& [ts, pose] : refined) {
    graph.vertices[ts] = pose;
    frozen.insert(ts);
  }
  optimize_pose_graph(graph, config, frozen);
}

std::optional<LoopClosureEvent> run_loop_closure(const Frame& current, GaussianMap& map,
                                                 FrameStore& store, PoseGraph& graph,
                                                 LoopDetector& detector,
                                                 const RigExtrinsics& rig,
                                                 const CameraIntrinsics& intr,
                                                 const LoopConfig& config) {
  auto finalized = detector.observe(current, map, intr, config);
  if (!finalized) return std::nullopt;

  const auto constraint = estimate_loop_constraint(finalized->candidate, finalized->frame, map,
                                                   rig, intr, graph, config);
  if (!constraint) return std::nullopt;

  const std::map<std::int64_t, Se3d> poses_before = graph.vertices;

  PoseGraphEdge loop_edge;
  loop_edge.i = finalized->candidate.endpoint_ts;
  loop_edge.j = finalized->candidate.current_ts;
  loop_edge.t_ij = *constraint;
  graph.loop_edges.push_back(loop_edge);

  optimize_pose_graph(graph, config);
  update_gaussians(map, poses_before, graph.vertices);

  // Sync stored poses with the corrected vertices before bundle adjustment.
  for (auto& kf : store.keyframes) kf.pose_mid = graph.vertices.at(kf.ts);
  for (auto& rf : store.rand_list) rf.pose_mid = graph.vertices.at(rf.ts);
  for (auto& [ts, pose] : store.all_poses) pose = graph.vertices.at(ts);

  const auto refined = local_bundle_adjustment(store, map, rig, intr, config);
  propagate_nonkey_poses(graph, refined, config);
  for (auto& [ts, pose] : store.all_poses) pose = graph.vertices.at(ts);

  detector.start_cooldown(current.ts, config.cooldown);

  LoopClosureEvent event;
  event.ts_j = finalized->candidate.current_ts;
  event.ts_i = finalized->candidate.endpoint_ts;
  event.gamma = finalized->candidate.ratio;
  event.ssim = finalized->candidate.ssim_score;
  return event;
}

}  // namespace gslam
