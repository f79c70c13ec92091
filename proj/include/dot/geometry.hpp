#ifndef DOT_GEOMETRY_HPP
#define DOT_GEOMETRY_HPP

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <cmath>
#include <vector>

#include "dot/errors.hpp"
#include "dot/image.hpp"

namespace dot {

using Vector6d = Eigen::Matrix<double, 6, 1>;
using Matrix6d = Eigen::Matrix<double, 6, 6>;

/// se(3) coordinates ordered (translation part, rotation part).
using TangentVector = Vector6d;

inline Eigen::Matrix3d skew(const Eigen::Vector3d& v) {
  Eigen::Matrix3d s;
  // clang-format off
  s <<    0.0, -v.z(),  v.y(),
        v.z(),    0.0, -v.x(),
       -v.y(),  v.x(),    0.0;
  // clang-format on
  return s;
}

/// 4x4 matrix form of a tangent vector.
inline Eigen::Matrix4d hat(const TangentVector& x) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Zero();
  m.topLeftCorner<3, 3>() = skew(x.tail<3>());
  m.topRightCorner<3, 1>() = x.head<3>();
  return m;
}

/// Rigid transformation. Rotation kept as an orthonormal matrix.
class SE3Pose {
 public:
  SE3Pose() : rotation_(Eigen::Matrix3d::Identity()), translation_(Eigen::Vector3d::Zero()) {}
  SE3Pose(const Eigen::Matrix3d& rotation, const Eigen::Vector3d& translation)
      : rotation_(rotation), translation_(translation) {}

  static SE3Pose identity() { return {}; }

  static SE3Pose from_matrix(const Eigen::Matrix4d& m) {
    return {m.topLeftCorner<3, 3>(), m.topRightCorner<3, 1>()};
  }

  static SE3Pose from_quaternion(const Eigen::Quaterniond& q, const Eigen::Vector3d& t) {
    return {q.normalized().toRotationMatrix(), t};
  }

  const Eigen::Matrix3d& rotation() const noexcept { return rotation_; }
  const Eigen::Vector3d& translation() const noexcept { return translation_; }

  Eigen::Quaterniond quaternion() const { return Eigen::Quaterniond(rotation_).normalized(); }

  Eigen::Matrix4d matrix() const {
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    m.topLeftCorner<3, 3>() = rotation_;
    m.topRightCorner<3, 1>() = translation_;
    return m;
  }

  SE3Pose inverse() const {
    const Eigen::Matrix3d rt = rotation_.transpose();
    return {rt, -rt * translation_};
  }

  SE3Pose operator*(const SE3Pose& other) const {
    return {rotation_ * other.rotation_, rotation_ * other.translation_ + translation_};
  }

  Eigen::Vector3d operator*(const Eigen::Vector3d& p) const { return rotation_ * p + translation_; }

  /// Ad(T) such that exp(Ad(T) x) = T exp(x) T^-1.
  Matrix6d adjoint() const {
    Matrix6d ad = Matrix6d::Zero();
    ad.topLeftCorner<3, 3>() = rotation_;
    ad.topRightCorner<3, 3>() = skew(translation_) * rotation_;
    ad.bottomRightCorner<3, 3>() = rotation_;
    return ad;
  }

  bool is_finite() const { return rotation_.allFinite() && translation_.allFinite(); }

  /// Projects the rotation back onto SO(3).
  SE3Pose normalized() const {
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(rotation_, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Matrix3d r = svd.matrixU() * svd.matrixV().transpose();
    if (r.determinant() < 0.0) {
      Eigen::Matrix3d u = svd.matrixU();
      u.col(2) *= -1.0;
      r = u * svd.matrixV().transpose();
    }
    return {r, translation_};
  }

 private:
  Eigen::Matrix3d rotation_;
  Eigen::Vector3d translation_;
};

inline constexpr double kSmallAngle = 1e-8;

inline SE3Pose se3_exp(const TangentVector& x) {
  const Eigen::Vector3d rho = x.head<3>();
  const Eigen::Vector3d omega = x.tail<3>();
  const double theta = omega.norm();
  const Eigen::Matrix3d w = skew(omega);
  const Eigen::Matrix3d w2 = w * w;
  const Eigen::Matrix3d id = Eigen::Matrix3d::Identity();

  if (theta < kSmallAngle) {
    const Eigen::Matrix3d r = id + w + 0.5 * w2;
    const Eigen::Matrix3d v = id + 0.5 * w + w2 / 6.0;
    return {r, v * rho};
  }
  const double half_sin = std::sin(0.5 * theta);
  const double a = std::sin(theta) / theta;
  const double b = 2.0 * half_sin * half_sin / (theta * theta);  // (1 - cos) / theta^2
  const double c = (theta - std::sin(theta)) / (theta * theta * theta);
  const Eigen::Matrix3d r = id + a * w + b * w2;
  const Eigen::Matrix3d v = id + b * w + c * w2;
  return {r, v * rho};
}

inline TangentVector se3_log(const SE3Pose& pose) {
  const Eigen::AngleAxisd aa(pose.rotation());
  const double theta = aa.angle();
  const Eigen::Vector3d omega = theta * aa.axis();
  const Eigen::Matrix3d w = skew(omega);

  // V^-1 = I - W/2 + k W^2 with k = (1 - (theta/2) cot(theta/2)) / theta^2.
  double k;
  if (theta < 1e-2) {
    const double t2 = theta * theta;
    k = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0;
  } else {
    const double half = 0.5 * theta;
    k = (1.0 - half * std::cos(half) / std::sin(half)) / (theta * theta);
  }
  const Eigen::Matrix3d v_inv = Eigen::Matrix3d::Identity() - 0.5 * w + k * w * w;

  TangentVector x;
  x.head<3>() = v_inv * pose.translation();
  x.tail<3>() = omega;
  return x;
}

/// exp(x) * pose.
inline SE3Pose se3_left_update(const SE3Pose& pose, const TangentVector& x) {
  return se3_exp(x) * pose;
}

/// Pinhole model without distortion.
struct CameraModel {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;

  /// Intrinsics of pyramid level `level` (pixel centres follow the 2x2 box
  /// filter: p_L = (p_0 + 0.5) / 2^L - 0.5).
  CameraModel at_level(int level) const {
    const double s = std::ldexp(1.0, -level);
    CameraModel c;
    c.fx = fx * s;
    c.fy = fy * s;
    c.cx = (cx + 0.5) * s - 0.5;
    c.cy = (cy + 0.5) * s - 0.5;
    c.width = (width + (1 << level) - 1) >> level;
    c.height = (height + (1 << level) - 1) >> level;
    return c;
  }
};

inline Eigen::Vector2d project(const CameraModel& cam, const Eigen::Vector3d& x) {
  if (!(x.z() > 0.0)) {
    throw Error(ErrorCode::NonPositiveDepth, "cannot project a point with z <= 0");
  }
  return {cam.fx * x.x() / x.z() + cam.cx, cam.fy * x.y() / x.z() + cam.cy};
}

inline Eigen::Vector3d backproject(const CameraModel& cam, const Eigen::Vector2d& p, double z) {
  if (!(z > 0.0)) {
    throw Error(ErrorCode::NonPositiveDepth, "cannot back-project with z <= 0");
  }
  return {(p.x() - cam.cx) * z / cam.fx, (p.y() - cam.cy) * z / cam.fy, z};
}

/// Maps a level-0 pixel coordinate onto pyramid level `level`.
inline Eigen::Vector2d pixel_at_level(const Eigen::Vector2d& p, int level) {
  const double s = std::ldexp(1.0, -level);
  return ((p.array() + 0.5) * s - 0.5).matrix();
}

struct PyramidLevel {
  IntensityImage intensity;
  DepthImage depth;
};

/// Grayscale intensity plus metric depth. Non-positive depth marks invalid
/// pixels. pyramid[0] mirrors the full-resolution images once built.
struct Frame {
  IntensityImage intensity;
  DepthImage depth;
  double timestamp = 0.0;
  std::vector<PyramidLevel> pyramid;

  int levels() const noexcept { return static_cast<int>(pyramid.size()); }
};

inline constexpr int kMinPyramidSide = 8;

namespace detail {

inline PyramidLevel downsample(const PyramidLevel& parent) {
  const int w = (parent.intensity.width() + 1) / 2;
  const int h = (parent.intensity.height() + 1) / 2;
  PyramidLevel child{IntensityImage(w, h), DepthImage(w, h)};
  const int pw = parent.intensity.width();
  const int ph = parent.intensity.height();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int xs[2] = {2 * x, std::min(2 * x + 1, pw - 1)};
      const int ys[2] = {2 * y, std::min(2 * y + 1, ph - 1)};
      double sum = 0.0;
      double nearest = 0.0;
      for (int j = 0; j < 2; ++j) {
        for (int i = 0; i < 2; ++i) {
          sum += parent.intensity(xs[i], ys[j]);
          const double d = parent.depth(xs[i], ys[j]);
          if (d > 0.0 && (nearest <= 0.0 || d < nearest)) {
            nearest = d;
          }
        }
      }
      child.intensity(x, y) = 0.25 * sum;
      child.depth(x, y) = nearest;
    }
  }
  return child;
}

}  // namespace detail

/// Box-filtered 2x pyramid. Depth takes the nearest valid sample of each
/// 2x2 block so no depth is ever invented across a discontinuity.
inline Frame build_pyramid(Frame frame, int levels) {
  if (levels < 1) {
    throw Error(ErrorCode::ImageTooSmall, "pyramid needs at least one level");
  }
  if (frame.depth.width() != frame.intensity.width() ||
      frame.depth.height() != frame.intensity.height()) {
    throw Error(ErrorCode::DimensionMismatch, "depth and intensity sizes differ");
  }
  const int last = levels - 1;
  const int w_last = (frame.intensity.width() + (1 << last) - 1) >> last;
  const int h_last = (frame.intensity.height() + (1 << last) - 1) >> last;
  if (w_last < kMinPyramidSide || h_last < kMinPyramidSide) {
    throw Error(ErrorCode::ImageTooSmall, "coarsest pyramid level would be below 8x8");
  }
  frame.pyramid.clear();
  frame.pyramid.reserve(static_cast<std::size_t>(levels));
  frame.pyramid.push_back({frame.intensity, frame.depth});
  for (int l = 1; l < levels; ++l) {
    frame.pyramid.push_back(detail::downsample(frame.pyramid.back()));
  }
  return frame;
}

}  // namespace dot

#endif  // DOT_GEOMETRY_HPP
