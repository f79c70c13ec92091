#ifndef DOT_TRAJECTORY_IO_HPP
#define DOT_TRAJECTORY_IO_HPP

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "dot/errors.hpp"
#include "dot/geometry.hpp"

namespace dot {

struct StampedPose {
  double timestamp = 0.0;
  SE3Pose pose;
};

using Trajectory = std::vector<StampedPose>;

/// TUM format: "timestamp tx ty tz qx qy qz qw" per line, '#' comments.
inline Trajectory read_tum(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error(ErrorCode::IoError, "cannot open trajectory " + path.string());
  }
  Trajectory traj;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    double t, tx, ty, tz, qx, qy, qz, qw;
    if (!(ss >> t >> tx >> ty >> tz >> qx >> qy >> qz >> qw)) {
      throw Error(ErrorCode::DecodeError,
                  path.string() + ":" + std::to_string(line_no) + ": malformed TUM line");
    }
    traj.push_back({t, SE3Pose::from_quaternion(Eigen::Quaterniond(qw, qx, qy, qz), {tx, ty, tz})});
  }
  return traj;
}

inline void write_tum(std::ostream& out, const Trajectory& traj) {
  out << std::setprecision(17);
  for (const auto& sp : traj) {
    const Eigen::Quaterniond q = sp.pose.quaternion();
    const Eigen::Vector3d& t = sp.pose.translation();
    out << sp.timestamp << ' ' << t.x() << ' ' << t.y() << ' ' << t.z() << ' ' << q.x() << ' '
        << q.y() << ' ' << q.z() << ' ' << q.w() << '\n';
  }
}

inline void write_tum(const std::filesystem::path& path, const Trajectory& traj) {
  std::ofstream out(path);
  if (!out) {
    throw Error(ErrorCode::IoError, "cannot write trajectory " + path.string());
  }
  write_tum(out, traj);
}

}  // namespace dot

#endif  // DOT_TRAJECTORY_IO_HPP
