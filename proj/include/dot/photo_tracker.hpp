#ifndef DOT_PHOTO_TRACKER_HPP
#define DOT_PHOTO_TRACKER_HPP

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dot/errors.hpp"
#include "dot/geometry.hpp"
#include "dot/image.hpp"

namespace dot {

inline constexpr int kBackground = 0;

/// A pixel anchored in a reference frame with its depth and the reference
/// intensity at every pyramid level (NaN where the level cannot sample it).
struct PointSample {
  Eigen::Vector2d pixel = Eigen::Vector2d::Zero();
  double depth = 0.0;
  std::vector<double> ref_intensity;
  Eigen::Vector2d gradient = Eigen::Vector2d::Zero();
  int owner = kBackground;
  // Cleared for the current frame when a nearer object covers the point.
  bool active = true;
};

struct SolverConfig {
  double huber_delta = 9.0;
  int max_iterations = 30;
  double convergence_eps = 1e-8;
  int pyramid_levels = 4;
  int min_valid_points = 12;
  double outlier_mad_factor = 5.0;
  double residual_sigma = 2.0;
  double min_pearson = 0.8;
  int max_step_halvings = 5;
  double max_condition = 1e12;

  void validate() const {
    if (!(huber_delta > 0) || max_iterations <= 0 || !(convergence_eps > 0) ||
        pyramid_levels <= 0 || min_valid_points <= 0 || !(outlier_mad_factor > 0) ||
        !(residual_sigma > 0) || max_step_halvings < 0 || !(max_condition > 0)) {
      throw Error(ErrorCode::ConfigError, "solver parameters must be positive");
    }
  }
};

template <int Dim>
struct ResidualRowT {
  double residual = 0.0;
  Eigen::Matrix<double, 1, Dim> jacobian = Eigen::Matrix<double, 1, Dim>::Zero();
};

using ResidualRow = ResidualRowT<6>;

/// Weighted normal equations of one Gauss-Newton step.
template <int Dim>
struct NormalEquationsT {
  Eigen::Matrix<double, Dim, Dim> JtSJ = Eigen::Matrix<double, Dim, Dim>::Zero();
  Eigen::Matrix<double, Dim, 1> JtSr = Eigen::Matrix<double, Dim, 1>::Zero();
  Eigen::Matrix<double, Dim, 1> increment = Eigen::Matrix<double, Dim, 1>::Zero();
  Eigen::Matrix<double, Dim, Dim> pose_covariance = Eigen::Matrix<double, Dim, Dim>::Zero();
  // Differential entropy of pose_covariance.
  double entropy = 0.0;
  // Same closed form evaluated on the information matrix JtSJ; grows with
  // how well the motion is constrained by the image.
  double observability = 0.0;
  int num_inliers = 0;
  double mean_cost = 0.0;
};

using NormalEquations = NormalEquationsT<6>;

inline double huber_weight(double r, double delta) {
  const double a = std::abs(r);
  return a <= delta ? 1.0 : delta / a;
}

inline double huber_cost(double r, double delta) {
  const double a = std::abs(r);
  return a <= delta ? 0.5 * r * r : delta * (a - 0.5 * delta);
}

/// 1/2 log((2 pi e)^k |cov|), evaluated through a Cholesky log-determinant.
template <int Dim>
double pose_entropy(const Eigen::Matrix<double, Dim, Dim>& cov) {
  const Eigen::LLT<Eigen::Matrix<double, Dim, Dim>> llt(cov);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::NotPositiveDefinite, "covariance is not positive definite");
  }
  const auto l = llt.matrixL();
  double log_det = 0.0;
  const Eigen::Matrix<double, Dim, Dim> lm = l;
  for (int i = 0; i < cov.rows(); ++i) {
    if (!(lm(i, i) > 0.0)) {
      throw Error(ErrorCode::NotPositiveDefinite, "covariance is not positive definite");
    }
    log_det += 2.0 * std::log(lm(i, i));
  }
  const double k = static_cast<double>(cov.rows());
  return 0.5 * (k * std::log(2.0 * std::numbers::pi * std::numbers::e) + log_det);
}

template <int Dim>
double pose_entropy(const NormalEquationsT<Dim>& ne) {
  return pose_entropy<Dim>(ne.pose_covariance);
}

/// Solves (J^T S^-1 J) x = -J^T S^-1 r with Huber reweighting and a
/// homoscedastic diagonal S = sigma^2 I.
template <int Dim>
NormalEquationsT<Dim> solve_normal_equations(std::span<const ResidualRowT<Dim>> rows, double sigma,
                                             double huber_delta, double max_condition = 1e12) {
  using Mat = Eigen::Matrix<double, Dim, Dim>;
  using Vec = Eigen::Matrix<double, Dim, 1>;
  if (static_cast<int>(rows.size()) < Dim) {
    throw Error(ErrorCode::TooFewValidPoints, "fewer residuals than unknowns");
  }
  const double inv_var = 1.0 / (sigma * sigma);
  Mat h = Mat::Zero();
  Vec g = Vec::Zero();
  double cost = 0.0;
  for (const auto& row : rows) {
    const double w = huber_weight(row.residual, huber_delta) * inv_var;
    h.noalias() += w * row.jacobian.transpose() * row.jacobian;
    g.noalias() += w * row.jacobian.transpose() * row.residual;
    cost += huber_cost(row.residual, huber_delta);
  }
  h = 0.5 * (h + h.transpose()).eval();

  const Eigen::SelfAdjointEigenSolver<Mat> eig(h);
  const Vec lambda = eig.eigenvalues();
  const double lmax = lambda.maxCoeff();
  const double lmin = lambda.minCoeff();
  if (!(lmax > 0.0) || !(lmin > 0.0) || lmax / lmin > max_condition) {
    throw Error(ErrorCode::SingularSystem,
                "normal equations are singular (condition " + std::to_string(lmax / lmin) + ")");
  }

  NormalEquationsT<Dim> ne;
  ne.JtSJ = h;
  ne.JtSr = g;
  const Eigen::LDLT<Mat> ldlt(h);
  ne.increment = ldlt.solve(-g);
  ne.pose_covariance = ldlt.solve(Mat::Identity());
  ne.pose_covariance = 0.5 * (ne.pose_covariance + ne.pose_covariance.transpose()).eval();
  const double k = static_cast<double>(Dim);
  const double log_2pie = std::log(2.0 * std::numbers::pi * std::numbers::e);
  ne.observability = 0.5 * (k * log_2pie + lambda.array().log().sum());
  ne.entropy = 0.5 * (k * log_2pie - lambda.array().log().sum());
  ne.num_inliers = static_cast<int>(rows.size());
  ne.mean_cost = cost / static_cast<double>(rows.size());
  return ne;
}

inline NormalEquations gauss_newton_step(std::span<const ResidualRow> rows, const SolverConfig& config) {
  return solve_normal_equations<6>(rows, config.residual_sigma, config.huber_delta,
                                   config.max_condition);
}

/// Pearson correlation of reference and tracked intensities.
inline double pearson_quality(std::span<const double> ref, std::span<const double> cur) {
  if (ref.size() != cur.size()) {
    throw Error(ErrorCode::LengthMismatch, "pearson inputs differ in length");
  }
  const std::size_t n = ref.size();
  if (n < 2) {
    throw Error(ErrorCode::DegenerateVariance, "pearson needs at least two samples");
  }
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += ref[i];
    my += cur[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = ref[i] - mx;
    const double dy = cur[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  const double nd = static_cast<double>(n);
  const double tol_x = 1e-12 * (1.0 + std::abs(mx));
  const double tol_y = 1e-12 * (1.0 + std::abs(my));
  if (sxx <= nd * tol_x * tol_x || syy <= nd * tol_y * tol_y) {
    throw Error(ErrorCode::DegenerateVariance, "constant intensity vector");
  }
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

namespace detail {

inline double median_of(std::vector<double> v) {
  const std::size_t n = v.size();
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(n / 2);
  std::nth_element(v.begin(), mid, v.end());
  const double hi = *mid;
  if (n % 2 == 1) {
    return hi;
  }
  const double lo = *std::max_element(v.begin(), mid);
  return 0.5 * (lo + hi);
}

}  // namespace detail

/// Flags as outliers the samples that sit far from the least-squares line
/// cur = a * ref + b, measured in units of the median absolute deviation of
/// the line residuals. Gain and offset changes are absorbed by the line.
inline std::vector<bool> reject_outliers_relative(std::span<const double> ref,
                                                  std::span<const double> cur,
                                                  double mad_factor) {
  if (ref.size() != cur.size()) {
    throw Error(ErrorCode::LengthMismatch, "outlier rejection inputs differ in length");
  }
  const std::size_t n = ref.size();
  if (n < 3) {
    throw Error(ErrorCode::DegenerateVariance, "line fit needs at least three samples");
  }
  double mx = 0.0, my = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += ref[i];
    my += cur[i];
    scale = std::max(scale, std::abs(cur[i]));
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (ref[i] - mx) * (ref[i] - mx);
    sxy += (ref[i] - mx) * (cur[i] - my);
  }
  if (sxx <= static_cast<double>(n) * 1e-24 * (1.0 + mx * mx)) {
    throw Error(ErrorCode::DegenerateVariance, "reference intensities are constant");
  }
  const double slope = sxy / sxx;
  const double offset = my - slope * mx;

  std::vector<double> e(n);
  for (std::size_t i = 0; i < n; ++i) {
    e[i] = cur[i] - (slope * ref[i] + offset);
  }
  const double med = detail::median_of(e);
  std::vector<double> dev(n);
  for (std::size_t i = 0; i < n; ++i) {
    dev[i] = std::abs(e[i] - med);
  }
  const double mad = detail::median_of(dev);
  const double threshold = std::max(mad_factor * mad, 1e-9 * (1.0 + scale));

  std::vector<bool> inlier(n);
  for (std::size_t i = 0; i < n; ++i) {
    inlier[i] = dev[i] <= threshold;
  }
  return inlier;
}

/// Fills ref_intensity for every pyramid level of `ref` by projecting the
/// back-projected point with the identity warp (the same arithmetic the
/// tracker uses, so self-tracking residuals vanish exactly).
inline void attach_reference_intensities(const Frame& ref, const CameraModel& cam,
                                         std::span<PointSample> points) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (auto& pt : points) {
    pt.ref_intensity.assign(ref.pyramid.size(), nan);
    if (!(pt.depth > 0.0)) {
      continue;
    }
    const Eigen::Vector3d x = backproject(cam, pt.pixel, pt.depth);
    for (std::size_t l = 0; l < ref.pyramid.size(); ++l) {
      const CameraModel cl = cam.at_level(static_cast<int>(l));
      const Eigen::Vector2d q(cl.fx * x.x() / x.z() + cl.cx, cl.fy * x.y() / x.z() + cl.cy);
      if (auto s = try_sample_bilinear(ref.pyramid[l].intensity, q)) {
        pt.ref_intensity[l] = s->value;
      }
    }
  }
}

/// Warp of a reference point into the current frame:
///   Y = pre * exp(x) * post * X.
/// The camera (left increment on T_c) uses pre = I, post = T_c; an object
/// uses pre = T_c, post = T_o.
struct WarpModel {
  SE3Pose pre;
  SE3Pose post;
};

struct WarpedSample {
  bool valid = false;
  double ref = 0.0;
  double cur = 0.0;
  double residual = 0.0;
  Eigen::Matrix<double, 1, 6> jacobian = Eigen::Matrix<double, 1, 6>::Zero();
  Eigen::Vector2d projection = Eigen::Vector2d::Zero();
};

/// Residual ref - cur and its derivative w.r.t. the tangent increment for
/// one point at one pyramid level.
inline WarpedSample warp_point(const PointSample& pt, const IntensityImage& cur,
                               const CameraModel& cam, int level, const WarpModel& warp,
                               bool with_jacobian) {
  WarpedSample out;
  if (!(pt.depth > 0.0) || static_cast<int>(pt.ref_intensity.size()) <= level ||
      std::isnan(pt.ref_intensity[static_cast<std::size_t>(level)])) {
    return out;
  }
  const CameraModel cl = cam.at_level(level);
  const Eigen::Vector3d x = backproject(cam, pt.pixel, pt.depth);
  const Eigen::Vector3d z = warp.post * x;
  const Eigen::Vector3d y = warp.pre * z;
  if (!(y.z() > 0.0)) {
    return out;
  }
  const double inv_z = 1.0 / y.z();
  out.projection = {cl.fx * y.x() * inv_z + cl.cx, cl.fy * y.y() * inv_z + cl.cy};
  const auto s = try_sample_bilinear(cur, out.projection);
  if (!s) {
    return out;
  }
  out.valid = true;
  out.ref = pt.ref_intensity[static_cast<std::size_t>(level)];
  out.cur = s->value;
  out.residual = out.ref - out.cur;
  if (with_jacobian) {
    Eigen::Matrix<double, 2, 3> dproj;
    dproj << cl.fx * inv_z, 0.0, -cl.fx * y.x() * inv_z * inv_z,  //
        0.0, cl.fy * inv_z, -cl.fy * y.y() * inv_z * inv_z;
    Eigen::Matrix<double, 3, 6> dpoint;
    dpoint.leftCols<3>() = warp.pre.rotation();
    dpoint.rightCols<3>() = -warp.pre.rotation() * skew(z);
    out.jacobian = -s->gradient.transpose() * dproj * dpoint;
  }
  return out;
}

/// Level-0 residuals and Jacobian rows of the camera cost. Invalid points
/// (behind the camera, outside the image) are dropped.
inline std::vector<ResidualRow> camera_residuals(const Frame& ref, const Frame& cur,
                                                 std::span<const PointSample> points,
                                                 const SE3Pose& camera_motion,
                                                 const CameraModel& cam, const SolverConfig& config) {
  std::vector<PointSample> prepared(points.begin(), points.end());
  if (!ref.pyramid.empty()) {
    attach_reference_intensities(ref, cam, prepared);
  }
  const WarpModel warp{SE3Pose::identity(), camera_motion};
  const IntensityImage& img = cur.pyramid.empty() ? cur.intensity : cur.pyramid[0].intensity;
  std::vector<ResidualRow> rows;
  for (const auto& pt : prepared) {
    const WarpedSample s = warp_point(pt, img, cam, 0, warp, true);
    if (s.valid) {
      rows.push_back({s.residual, s.jacobian});
    }
  }
  if (static_cast<int>(rows.size()) < config.min_valid_points) {
    throw Error(ErrorCode::TooFewValidPoints,
                std::to_string(rows.size()) + " valid points, need " +
                    std::to_string(config.min_valid_points));
  }
  return rows;
}

struct TrackResult {
  SE3Pose pose;
  NormalEquations normal_eq;
  double pearson = 0.0;
  std::vector<bool> inlier_mask;
  bool converged = false;
  // Mean Huber cost after every accepted iteration, one list per level
  // (coarsest first).
  std::vector<std::vector<double>> cost_history;
};

namespace detail {

inline double mean_cost_at(std::span<const PointSample> points, const std::vector<int>& subset,
                           const IntensityImage& img, const CameraModel& cam, int level,
                           const WarpModel& warp, double delta, int* valid_out) {
  double cost = 0.0;
  int valid = 0;
  for (int idx : subset) {
    const WarpedSample s = warp_point(points[static_cast<std::size_t>(idx)], img, cam, level, warp, false);
    if (s.valid) {
      cost += huber_cost(s.residual, delta);
      ++valid;
    }
  }
  *valid_out = valid;
  return valid > 0 ? cost / valid : std::numeric_limits<double>::infinity();
}

/// Indices of points that warp validly at `level`, with relative outlier
/// flags applied when there are enough of them.
inline std::vector<int> level_inliers(std::span<const PointSample> points, const IntensityImage& img,
                                      const CameraModel& cam, int level, const WarpModel& warp,
                                      const SolverConfig& config, std::vector<WarpedSample>* samples) {
  std::vector<int> valid_idx;
  std::vector<double> ref, cur;
  samples->assign(points.size(), WarpedSample{});
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!points[i].active) {
      continue;
    }
    (*samples)[i] = warp_point(points[i], img, cam, level, warp, level == 0);
    if ((*samples)[i].valid) {
      valid_idx.push_back(static_cast<int>(i));
      ref.push_back((*samples)[i].ref);
      cur.push_back((*samples)[i].cur);
    }
  }
  if (static_cast<int>(valid_idx.size()) < std::max(config.min_valid_points, 3)) {
    return valid_idx;
  }
  std::vector<bool> keep;
  try {
    keep = reject_outliers_relative(ref, cur, config.outlier_mad_factor);
  } catch (const Error&) {
    return valid_idx;
  }
  std::vector<int> inliers;
  for (std::size_t k = 0; k < valid_idx.size(); ++k) {
    if (keep[k]) {
      inliers.push_back(valid_idx[k]);
    }
  }
  return inliers;
}

/// Coarse-to-fine Gauss-Newton on `warp.post` with step-halving line search.
inline TrackResult track_coarse_to_fine(const Frame& cur, std::span<const PointSample> points,
                                        const CameraModel& cam, WarpModel warp,
                                        const SolverConfig& config) {
  config.validate();
  if (cur.pyramid.empty()) {
    throw Error(ErrorCode::DimensionMismatch, "current frame has no pyramid");
  }
  int levels = std::min(config.pyramid_levels, cur.levels());
  for (const auto& pt : points) {
    levels = std::min(levels, static_cast<int>(pt.ref_intensity.size()));
  }
  levels = std::max(levels, 1);

  TrackResult result;
  const int min_rows = std::max(config.min_valid_points, 6);
  std::vector<WarpedSample> samples;

  for (int level = levels - 1; level >= 0; --level) {
    const IntensityImage& img = cur.pyramid[static_cast<std::size_t>(level)].intensity;
    std::vector<double> history;
    const std::vector<int> subset = level_inliers(points, img, cam, level, warp, config, &samples);
    if (static_cast<int>(subset.size()) < min_rows) {
      if (level == 0) {
        throw Error(ErrorCode::TooFewValidPoints,
                    std::to_string(subset.size()) + " valid points at the finest level");
      }
      result.cost_history.push_back(history);
      continue;
    }

    for (int it = 0; it < config.max_iterations; ++it) {
      std::vector<ResidualRow> rows;
      rows.reserve(subset.size());
      for (int idx : subset) {
        const WarpedSample s =
            warp_point(points[static_cast<std::size_t>(idx)], img, cam, level, warp, true);
        if (s.valid) {
          rows.push_back({s.residual, s.jacobian});
        }
      }
      if (static_cast<int>(rows.size()) < min_rows) {
        if (level == 0) {
          throw Error(ErrorCode::TooFewValidPoints, "points left the image during tracking");
        }
        break;
      }
      NormalEquations ne;
      try {
        ne = gauss_newton_step(rows, config);
      } catch (const Error& e) {
        if (level == 0 || e.code() != ErrorCode::SingularSystem) {
          throw;
        }
        break;
      }
      if (history.empty()) {
        history.push_back(ne.mean_cost);
      }
      int valid0 = 0;
      const double cost0 =
          mean_cost_at(points, subset, img, cam, level, warp, config.huber_delta, &valid0);

      TangentVector step = ne.increment;
      bool accepted = false;
      WarpModel candidate = warp;
      double cost1 = cost0;
      for (int h = 0; h <= config.max_step_halvings; ++h) {
        candidate.post = se3_left_update(warp.post, step);
        int valid1 = 0;
        cost1 = mean_cost_at(points, subset, img, cam, level, candidate, config.huber_delta, &valid1);
        if (valid1 >= min_rows && cost1 <= cost0) {
          accepted = true;
          break;
        }
        step *= 0.5;
      }
      if (!accepted) {
        result.converged = true;
        break;
      }
      warp = candidate;
      history.push_back(cost1);
      if (step.norm() < config.convergence_eps) {
        result.converged = true;
        break;
      }
    }
    result.cost_history.push_back(history);
  }

  // Final statistics at the finest level and the final pose.
  const IntensityImage& img0 = cur.pyramid[0].intensity;
  const std::vector<int> inliers = level_inliers(points, img0, cam, 0, warp, config, &samples);
  if (static_cast<int>(inliers.size()) < min_rows) {
    throw Error(ErrorCode::TooFewValidPoints,
                std::to_string(inliers.size()) + " valid points at the finest level");
  }
  std::vector<ResidualRow> rows;
  std::vector<double> ref, cur_vals;
  result.inlier_mask.assign(points.size(), false);
  for (int idx : inliers) {
    const WarpedSample& s = samples[static_cast<std::size_t>(idx)];
    rows.push_back({s.residual, s.jacobian});
    ref.push_back(s.ref);
    cur_vals.push_back(s.cur);
    result.inlier_mask[static_cast<std::size_t>(idx)] = true;
  }
  result.normal_eq = gauss_newton_step(rows, config);
  try {
    result.pearson = pearson_quality(ref, cur_vals);
  } catch (const Error&) {
    throw Error(ErrorCode::TrackingLost, "tracked intensities have no variance");
  }
  result.pose = warp.post;
  if (result.pearson < config.min_pearson) {
    throw Error(ErrorCode::TrackingLost,
                "pearson quality " + std::to_string(result.pearson) + " below minimum");
  }
  return result;
}

}  // namespace detail

namespace detail {

/// Copies `points` and attaches reference intensities where missing.
inline std::vector<PointSample> with_reference(const Frame& ref, std::span<const PointSample> points,
                                               const CameraModel& cam) {
  std::vector<PointSample> out(points.begin(), points.end());
  const bool missing = std::any_of(out.begin(), out.end(), [&](const PointSample& p) {
    return p.ref_intensity.size() < ref.pyramid.size();
  });
  if (missing && !ref.pyramid.empty()) {
    attach_reference_intensities(ref, cam, out);
  }
  return out;
}

}  // namespace detail

/// Estimates the reference-to-current camera motion T_c from static points.
/// `init` is usually the constant-velocity prediction.
inline TrackResult track_camera(const Frame& ref, const Frame& cur,
                                std::span<const PointSample> static_points, const SE3Pose& init,
                                const CameraModel& cam, const SolverConfig& config) {
  if (!init.is_finite()) {
    throw Error(ErrorCode::TrackingLost, "non-finite initial camera pose");
  }
  const auto points = detail::with_reference(ref, static_points, cam);
  return detail::track_coarse_to_fine(cur, points, cam, {SE3Pose::identity(), init}, config);
}

/// Estimates the motion T_o of one object with T_c held fixed; the
/// increment is inserted between T_c and T_o.
inline TrackResult track_object(const Frame& ref, const Frame& cur,
                                std::span<const PointSample> object_points,
                                const SE3Pose& camera_motion, const SE3Pose& init,
                                const CameraModel& cam, const SolverConfig& config) {
  if (!init.is_finite() || !camera_motion.is_finite()) {
    throw Error(ErrorCode::TrackingLost, "non-finite pose");
  }
  const auto points = detail::with_reference(ref, object_points, cam);
  return detail::track_coarse_to_fine(cur, points, cam, {camera_motion, init}, config);
}

}  // namespace dot

#endif  // DOT_PHOTO_TRACKER_HPP
