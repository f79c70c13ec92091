#ifndef DOT_MOTION_HPP
#define DOT_MOTION_HPP

#include <cmath>
#include <limits>
#include <span>
#include <string_view>
#include <vector>

#include "dot/errors.hpp"
#include "dot/geometry.hpp"
#include "dot/photo_tracker.hpp"

namespace dot {

enum class MotionState { InMotion, Static, NotObserved };

inline std::string_view to_string(MotionState s) {
  switch (s) {
    case MotionState::InMotion: return "in_motion";
    case MotionState::Static: return "static";
    case MotionState::NotObserved: return "not_observed";
  }
  return "unknown";
}

/// Parameters of the adaptive disparity threshold and of the
/// observability floor. Entropies are in nats and refer to the
/// information-form entropy reported as NormalEquations::observability.
struct MotionThresholds {
  double h_min = 37.701;
  double delta_base = 2.5;
  double delta_slope = 0.0;
  int hysteresis_frames = 2;

  void validate() const {
    if (!(delta_base > 0.0) || !(delta_slope >= 0.0) || hysteresis_frames < 0 ||
        !std::isfinite(h_min)) {
      throw Error(ErrorCode::ConfigError, "invalid motion thresholds");
    }
  }
};

/// Median pixel distance between the static-hypothesis projection
/// Pi(T_c X) and the object-motion projection Pi(T_c T_o X).
inline double dynamic_disparity(std::span<const PointSample> points, const SE3Pose& camera_motion,
                                const SE3Pose& object_motion, const CameraModel& cam) {
  const SE3Pose moved = camera_motion * object_motion;
  std::vector<double> d;
  d.reserve(points.size());
  for (const auto& pt : points) {
    if (!pt.active || !(pt.depth > 0.0)) continue;
    const Eigen::Vector3d x = backproject(cam, pt.pixel, pt.depth);
    const Eigen::Vector3d a = camera_motion * x;
    const Eigen::Vector3d b = moved * x;
    if (!(a.z() > 0.0) || !(b.z() > 0.0)) continue;
    d.push_back((project(cam, a) - project(cam, b)).norm());
  }
  if (d.empty()) {
    throw Error(ErrorCode::NoValidProjections, "no point projects under both hypotheses");
  }
  return detail::median_of(std::move(d));
}

/// Shifted-linear threshold: delta_base below h_min, growing with slope
/// delta_slope above it.
inline double adaptive_threshold(double entropy, const MotionThresholds& th) {
  if (!(entropy > th.h_min)) return th.delta_base;
  return th.delta_base + th.delta_slope * (entropy - th.h_min);
}

/// Three-state verdict. A NotObserved verdict keeps an established
/// previous state (age >= hysteresis_frames).
inline MotionState classify(double disparity, double entropy, const MotionThresholds& th,
                            MotionState prev_state = MotionState::NotObserved, int prev_age = 0) {
  MotionState verdict;
  if (disparity > adaptive_threshold(entropy, th)) {
    verdict = MotionState::InMotion;
  } else if (entropy > th.h_min) {
    verdict = MotionState::Static;
  } else {
    verdict = MotionState::NotObserved;
  }
  if (verdict == MotionState::NotObserved && prev_state != MotionState::NotObserved &&
      prev_age >= th.hysteresis_frames) {
    return prev_state;
  }
  return verdict;
}

/// Verdict for an object whose motion could not be estimated at all
/// (singular system, lost track): equivalent to zero disparity at
/// -infinite entropy.
inline MotionState classify_unobservable(const MotionThresholds& th, MotionState prev_state,
                                         int prev_age) {
  return classify(0.0, -std::numeric_limits<double>::infinity(), th, prev_state, prev_age);
}

/// Per-track state with the number of frames since it last changed.
struct StateMemory {
  MotionState state = MotionState::NotObserved;
  int age = 0;

  void update(MotionState next) {
    if (next == state) {
      ++age;
    } else {
      state = next;
      age = 0;
    }
  }
};

}  // namespace dot

#endif  // DOT_MOTION_HPP
