#pragma once

#include <limits>
#include <string>
#include <vector>

#include "gslam/geom.hpp"
#include "gslam/image.hpp"

namespace gslam {

/// Trajectories associated by nearest timestamp within a tolerance; each
/// reference pose is used at most once.
struct TrajectoryPair {
  std::vector<TrajectoryEntry> estimated;
  std::vector<TrajectoryEntry> reference;
  double tolerance = 0.5;  // timestamp units (frames)
};

struct AteResult {
  double rmse_cm = 0;
  Se3d ref_from_est;  // rigid alignment applied to the estimated trajectory
  int pairs = 0;
};

/// ATE-RMSE after rigid (no scale) least-squares alignment, in centimeters.
/// Throws TooFewPoses below 3 associated pairs.
AteResult ate_alignment(const TrajectoryPair& pair);
double ate_rmse(const TrajectoryPair& pair);

/// 10*log10(1/MSE) over all pixels and channels of unit-range images.
/// Identical images return +infinity.
double psnr(const ColorImage& a, const ColorImage& b);

/// Mean local SSIM on channel-mean grayscale, 11x11 Gaussian window.
double ssim(const ColorImage& a, const ColorImage& b);

/// Mean absolute depth difference in centimeters over pixels valid (> 0) on
/// both sides. Throws NoValidPixels when no pixel qualifies.
double depth_l1(const GrayImage& rendered, const GrayImage& reference);

constexpr double kPsnrInfinite = std::numeric_limits<double>::infinity();

struct ViewMetrics {
  std::int64_t ts = 0;
  double psnr_db = 0;
  double ssim_score = 0;
  double depth_l1_cm = 0;
};

struct MetricsReport {
  double ate_rmse_cm = 0;
  int ate_pairs = 0;
  double mean_psnr_db = 0;
  double mean_ssim = 0;
  double mean_depth_l1_cm = 0;
  std::vector<ViewMetrics> views;
};

/// Plain-text key=value summary next to a JSON-lines file with one record per
/// evaluated view.
void write_metrics_report(const std::string& txt_path, const std::string& jsonl_path,
                          const MetricsReport& report);

}  // namespace gslam
