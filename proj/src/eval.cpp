#include "gslam/eval.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "gslam/ssim.hpp"

namespace gslam {

namespace {

struct Assoc {
  int est_idx, ref_idx;
};

std::vector<Assoc> associate(const TrajectoryPair& pair) {
  struct Candidate {
    double dt;
    int est_idx, ref_idx;
  };
  std::vector<Candidate> candidates;
  for (int e = 0; e < static_cast<int>(pair.estimated.size()); ++e) {
    for (int r = 0; r < static_cast<int>(pair.reference.size()); ++r) {
      const double dt = std::abs(pair.estimated[e].ts - pair.reference[r].ts);
      if (dt <= pair.tolerance) candidates.push_back({dt, e, r});
    }
  }
  std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
    if (a.dt != b.dt) return a.dt < b.dt;
    if (a.est_idx != b.est_idx) return a.est_idx < b.est_idx;
    return a.ref_idx < b.ref_idx;
  });
  std::vector<bool> est_used(pair.estimated.size(), false);
  std::vector<bool> ref_used(pair.reference.size(), false);
  std::vector<Assoc> out;
  for (const auto& c : candidates) {
    if (est_used[c.est_idx] || ref_used[c.ref_idx]) continue;
    est_used[c.est_idx] = true;
    ref_used[c.ref_idx] = true;
    out.push_back({c.est_idx, c.ref_idx});
  }
  std::sort(out.begin(), out.end(),
            [](const Assoc& a, const Assoc& b) { return a.est_idx < b.est_idx; });
  return out;
}

}  // namespace

AteResult ate_alignment(const TrajectoryPair& pair) {
  const auto assoc = associate(pair);
  if (assoc.size() < 3) {
    throw TooFewPoses("ate requires >= 3 associated poses, got " +
                      std::to_string(assoc.size()));
  }
  Eigen::MatrixXd src(3, assoc.size()), dst(3, assoc.size());
  for (std::size_t k = 0; k < assoc.size(); ++k) {
    src.col(k) = pair.estimated[assoc[k].est_idx].pose.translation;
    dst.col(k) = pair.reference[assoc[k].ref_idx].pose.translation;
  }
  const Eigen::Matrix4d t = Eigen::umeyama(src, dst, /*with_scaling=*/false);
  AteResult result;
  result.ref_from_est.rotation = orthonormalized<double>(t.block<3, 3>(0, 0));
  result.ref_from_est.translation = t.block<3, 1>(0, 3);
  result.pairs = static_cast<int>(assoc.size());
  double sq_sum = 0;
  for (std::size_t k = 0; k < assoc.size(); ++k) {
    const Eigen::Vector3d aligned = result.ref_from_est * Eigen::Vector3d(src.col(k));
    sq_sum += (aligned - dst.col(k)).squaredNorm();
  }
  result.rmse_cm = std::sqrt(sq_sum / assoc.size()) * 100.0;
  return result;
}

double ate_rmse(const TrajectoryPair& pair) { return ate_alignment(pair).rmse_cm; }

double psnr(const ColorImage& a, const ColorImage& b) {
  require_same_shape(a.r, b.r, "psnr");
  double mse = 0;
  for (int ch = 0; ch < 3; ++ch) mse += (a.plane(ch) - b.plane(ch)).square().sum();
  mse /= 3.0 * a.r.size();
  if (mse <= 0) return kPsnrInfinite;
  return 10.0 * std::log10(1.0 / mse);
}

double ssim(const ColorImage& a, const ColorImage& b) {
  require_same_shape(a.r, b.r, "ssim");
  return ssim_plane(a.gray(), b.gray()).ssim.mean();
}

double depth_l1(const GrayImage& rendered, const GrayImage& reference) {
  require_same_shape(rendered, reference, "depth_l1");
  double sum = 0;
  long count = 0;
  for (Eigen::Index i = 0; i < rendered.size(); ++i) {
    const double dr = rendered.data()[i];
    const double dg = reference.data()[i];
    if (dr <= 0 || dg <= 0) continue;
    sum += std::abs(dr - dg);
    ++count;
  }
  if (count == 0) throw NoValidPixels("depth_l1: no pixel valid on both sides");
  return sum / count * 100.0;
}

void write_metrics_report(const std::string& txt_path, const std::string& jsonl_path,
                          const MetricsReport& report) {
  std::ofstream txt(txt_path);
  if (!txt) throw IoError("cannot write metrics report: " + txt_path);
  char buf[128];
  std::snprintf(buf, sizeof(buf), "ate_rmse_cm=%.6f\n", report.ate_rmse_cm);
  txt << buf;
  txt << "ate_pairs=" << report.ate_pairs << "\n";
  std::snprintf(buf, sizeof(buf), "mean_psnr_db=%.6f\n", report.mean_psnr_db);
  txt << buf;
  std::snprintf(buf, sizeof(buf), "mean_ssim=%.6f\n", report.mean_ssim);
  txt << buf;
  std::snprintf(buf, sizeof(buf), "mean_depth_l1_cm=%.6f\n", report.mean_depth_l1_cm);
  txt << buf;
  txt << "views=" << report.views.size() << "\n";

  std::ofstream jsonl(jsonl_path);
  if (!jsonl) throw IoError("cannot write metrics jsonl: " + jsonl_path);
  for (const auto& view : report.views) {
    nlohmann::json rec;
    rec["ts"] = view.ts;
    rec["psnr_db"] = view.psnr_db;
    rec["ssim"] = view.ssim_score;
    rec["depth_l1_cm"] = view.depth_l1_cm;
    jsonl << rec.dump() << "\n";
  }
}

}  // namespace gslam
