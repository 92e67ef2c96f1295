#include "gslam/geom.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace gslam {

std::string format_trajectory_line(const TrajectoryEntry& entry) {
  Eigen::Quaterniond q(entry.pose.rotation);
  q.normalize();
  if (q.w() < 0) q.coeffs() = -q.coeffs();  // canonical sign for reproducible output
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%.6f %.9f %.9f %.9f %.9f %.9f %.9f %.9f", entry.ts,
                entry.pose.translation.x(), entry.pose.translation.y(),
                entry.pose.translation.z(), q.x(), q.y(), q.z(), q.w());
  return buf;
}

void save_trajectory(const std::string& path, const std::vector<TrajectoryEntry>& traj) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open trajectory file for writing: " + path);
  out << "# ts tx ty tz qx qy qz qw\n";
  for (const auto& entry : traj) {
    out << format_trajectory_line(entry) << "\n";
  }
  if (!out) throw IoError("write failed: " + path);
}

std::vector<TrajectoryEntry> load_trajectory(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open trajectory file: " + path);
  std::vector<TrajectoryEntry> traj;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    double ts, tx, ty, tz, qx, qy, qz, qw;
    if (!(ss >> ts >> tx >> ty >> tz >> qx >> qy >> qz >> qw)) {
      throw FormatError("bad trajectory line " + std::to_string(lineno) + " in " + path);
    }
    TrajectoryEntry entry;
    entry.ts = ts;
    entry.pose.translation = {tx, ty, tz};
    Eigen::Quaterniond q(qw, qx, qy, qz);
    if (q.norm() < 1e-12) {
      throw FormatError("zero quaternion at line " + std::to_string(lineno) + " in " + path);
    }
    entry.pose.rotation = q.normalized().toRotationMatrix();
    traj.push_back(entry);
  }
  return traj;
}

}  // namespace gslam
