#ifndef DOT_EVALUATION_HPP
#define DOT_EVALUATION_HPP

#include <Eigen/Geometry>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "dot/errors.hpp"
#include "dot/geometry.hpp"
#include "dot/trajectory_io.hpp"

namespace dot {

inline std::vector<Eigen::Vector3d> positions(const Trajectory& traj) {
  std::vector<Eigen::Vector3d> p;
  p.reserve(traj.size());
  for (const auto& sp : traj) p.push_back(sp.pose.translation());
  return p;
}

namespace detail {

inline Eigen::Matrix3Xd as_matrix(std::span<const Eigen::Vector3d> pts) {
  Eigen::Matrix3Xd m(3, static_cast<Eigen::Index>(pts.size()));
  for (std::size_t i = 0; i < pts.size(); ++i) m.col(static_cast<Eigen::Index>(i)) = pts[i];
  return m;
}

inline bool collinear(const Eigen::Matrix3Xd& m, double tol) {
  const Eigen::Matrix3Xd centred = m.colwise() - m.rowwise().mean();
  const Eigen::JacobiSVD<Eigen::Matrix3Xd> svd(centred);
  const Eigen::Vector3d s = svd.singularValues();
  return s(1) <= tol * std::max(1.0, s(0));
}

}  // namespace detail

/// Rigid (no scale) least-squares alignment A minimising
/// sum |A * estimate_i - truth_i|^2.
inline SE3Pose align_trajectories(std::span<const Eigen::Vector3d> estimate,
                                  std::span<const Eigen::Vector3d> truth) {
  if (estimate.size() != truth.size()) {
    throw Error(ErrorCode::LengthMismatch, std::to_string(estimate.size()) + " estimated vs " +
                                               std::to_string(truth.size()) + " true positions");
  }
  if (estimate.size() < 3) {
    throw Error(ErrorCode::DegenerateGeometry, "alignment needs at least 3 positions");
  }
  const Eigen::Matrix3Xd src = detail::as_matrix(estimate);
  const Eigen::Matrix3Xd dst = detail::as_matrix(truth);
  if (detail::collinear(src, 1e-9) || detail::collinear(dst, 1e-9)) {
    throw Error(ErrorCode::DegenerateGeometry, "positions are collinear");
  }
  const Eigen::Matrix4d a = Eigen::umeyama(src, dst, false);
  return SE3Pose::from_matrix(a);
}

inline SE3Pose align_trajectories(const Trajectory& estimate, const Trajectory& truth) {
  const auto e = positions(estimate);
  const auto t = positions(truth);
  return align_trajectories(e, t);
}

/// RMS position error, no alignment applied.
inline double ate_rmse(std::span<const Eigen::Vector3d> estimate, std::span<const Eigen::Vector3d> truth) {
  if (estimate.size() != truth.size()) {
    throw Error(ErrorCode::LengthMismatch, std::to_string(estimate.size()) + " estimated vs " +
                                               std::to_string(truth.size()) + " true positions");
  }
  if (estimate.empty()) {
    throw Error(ErrorCode::LengthMismatch, "empty trajectories");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < estimate.size(); ++i) sum += (estimate[i] - truth[i]).squaredNorm();
  return std::sqrt(sum / static_cast<double>(estimate.size()));
}

inline double ate_rmse(const Trajectory& estimate, const Trajectory& truth) {
  const auto e = positions(estimate);
  const auto t = positions(truth);
  return ate_rmse(e, t);
}

struct AteResult {
  double rmse = 0.0;
  SE3Pose alignment;
  // False when the positions were collinear and only the centroids were
  // matched.
  bool rigid = true;
};

/// Aligns then measures. Straight-line trajectories fall back to a
/// translation-only alignment.
inline AteResult absolute_trajectory_error(std::span<const Eigen::Vector3d> estimate,
                                           std::span<const Eigen::Vector3d> truth) {
  AteResult out;
  try {
    out.alignment = align_trajectories(estimate, truth);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::DegenerateGeometry || estimate.empty()) throw;
    Eigen::Vector3d ce = Eigen::Vector3d::Zero(), ct = Eigen::Vector3d::Zero();
    for (std::size_t i = 0; i < estimate.size(); ++i) {
      ce += estimate[i];
      ct += truth[i];
    }
    out.alignment = SE3Pose(Eigen::Matrix3d::Identity(), (ct - ce) / static_cast<double>(estimate.size()));
    out.rigid = false;
  }
  std::vector<Eigen::Vector3d> aligned;
  aligned.reserve(estimate.size());
  for (const auto& p : estimate) aligned.push_back(out.alignment * p);
  out.rmse = ate_rmse(aligned, truth);
  return out;
}

/// Pairs poses of two trajectories by nearest timestamp within `max_dt`,
/// each truth pose used at most once.
inline std::pair<Trajectory, Trajectory> associate_by_timestamp(const Trajectory& estimate,
                                                               const Trajectory& truth,
                                                               double max_dt = 0.02) {
  std::vector<std::tuple<double, std::size_t, std::size_t>> cand;
  for (std::size_t i = 0; i < estimate.size(); ++i) {
    for (std::size_t j = 0; j < truth.size(); ++j) {
      const double dt = std::abs(estimate[i].timestamp - truth[j].timestamp);
      if (dt <= max_dt) cand.emplace_back(dt, i, j);
    }
  }
  std::sort(cand.begin(), cand.end());
  std::vector<int> match(estimate.size(), -1);
  std::vector<bool> used(truth.size(), false);
  for (const auto& [dt, i, j] : cand) {
    if (match[i] >= 0 || used[j]) continue;
    match[i] = static_cast<int>(j);
    used[j] = true;
  }
  std::pair<Trajectory, Trajectory> out;
  for (std::size_t i = 0; i < estimate.size(); ++i) {
    if (match[i] < 0) continue;
    out.first.push_back(estimate[i]);
    out.second.push_back(truth[static_cast<std::size_t>(match[i])]);
  }
  return out;
}

/// errors[sequence][method] -> mean over sequences of error / error of
/// `reference_method` on that sequence.
inline std::map<std::string, double> normalized_error(
    const std::map<std::string, std::map<std::string, double>>& errors,
    const std::string& reference_method = "dot") {
  std::map<std::string, double> sum;
  std::map<std::string, int> count;
  for (const auto& [seq, methods] : errors) {
    const auto it = methods.find(reference_method);
    if (it == methods.end()) {
      throw Error(ErrorCode::ConfigError, "sequence " + seq + " has no " + reference_method + " result");
    }
    if (it->second == 0.0) {
      throw Error(ErrorCode::DivisionByZero, "sequence " + seq + " has zero " + reference_method + " error");
    }
    for (const auto& [method, err] : methods) {
      sum[method] += err / it->second;
      ++count[method];
    }
  }
  std::map<std::string, double> out;
  for (const auto& [method, s] : sum) out[method] = s / count[method];
  return out;
}

struct TrialOutcome {
  bool ok = false;
  double ate = std::numeric_limits<double>::quiet_NaN();
  double tracked_fraction = 0.0;
  std::string error;
};

struct TrialReport {
  std::vector<TrialOutcome> trials;
  double median = std::numeric_limits<double>::quiet_NaN();
  double min = std::numeric_limits<double>::quiet_NaN();
  double max = std::numeric_limits<double>::quiet_NaN();
  int failures = 0;

  int successes() const { return static_cast<int>(trials.size()) - failures; }
};

/// Runs `trial(seed)` for seeds base_seed .. base_seed + n - 1. Failed
/// trials (an Error thrown, or ok == false) are excluded from the
/// statistics but kept in the report.
inline TrialReport run_trials(const std::function<TrialOutcome(std::uint64_t)>& trial, int n,
                              std::uint64_t base_seed = 0) {
  TrialReport rep;
  std::vector<double> ok;
  for (int k = 0; k < n; ++k) {
    TrialOutcome t;
    try {
      t = trial(base_seed + static_cast<std::uint64_t>(k));
    } catch (const Error& e) {
      t.ok = false;
      t.error = e.what();
    }
    if (t.ok) {
      ok.push_back(t.ate);
    } else {
      ++rep.failures;
    }
    rep.trials.push_back(t);
  }
  if (!ok.empty()) {
    std::sort(ok.begin(), ok.end());
    const std::size_t m = ok.size();
    rep.median = m % 2 ? ok[m / 2] : 0.5 * (ok[m / 2 - 1] + ok[m / 2]);
    rep.min = ok.front();
    rep.max = ok.back();
  }
  return rep;
}

struct ResultRow {
  std::string sequence;
  std::string method;
  double ate_m = 0.0;
  double normalized = 0.0;
  int trials_ok = 0;
};

inline void write_results_csv(const std::filesystem::path& path, const std::vector<ResultRow>& rows) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << "sequence,method,ate_m,normalized,trials_ok\n" << std::setprecision(10);
  for (const auto& r : rows) {
    out << r.sequence << ',' << r.method << ',' << r.ate_m << ',' << r.normalized << ',' << r.trials_ok << '\n';
  }
}

}  // namespace dot

#endif  // DOT_EVALUATION_HPP
