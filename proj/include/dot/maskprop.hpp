#ifndef DOT_MASKPROP_HPP
#define DOT_MASKPROP_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <vector>

#include "dot/errors.hpp"
#include "dot/geometry.hpp"
#include "dot/image.hpp"
#include "dot/instances.hpp"
#include "dot/motion.hpp"

namespace dot {

/// Track ids sorted near to far by median depth; ties (and tracks without a
/// depth yet, which go last) are ordered by id.
inline std::vector<int> depth_order(std::span<const ObjectTrack* const> tracks) {
  std::vector<std::pair<double, int>> keyed;
  keyed.reserve(tracks.size());
  for (const ObjectTrack* t : tracks) {
    const double d = t->median_depth > 0.0 ? t->median_depth : std::numeric_limits<double>::infinity();
    keyed.emplace_back(d, t->id);
  }
  std::sort(keyed.begin(), keyed.end());
  std::vector<int> ids;
  ids.reserve(keyed.size());
  for (const auto& [d, id] : keyed) ids.push_back(id);
  return ids;
}

inline std::vector<int> depth_order(const Registry& registry) {
  std::vector<const ObjectTrack*> ptrs;
  for (const auto& [id, t] : registry.tracks) ptrs.push_back(&t);
  return depth_order(std::span<const ObjectTrack* const>(ptrs));
}

/// Forward-warps a reference label mask into the current frame one region
/// at a time through a z-buffer. Objects are expected near to far so that
/// each object's written region can invalidate the points of the objects
/// processed after it.
class MaskPropagator {
 public:
  MaskPropagator(const LabelMask& reference, const DepthImage& reference_depth,
                 const SE3Pose& camera_motion, const CameraModel& cam, int frame_index)
      : camera_motion_(camera_motion),
        cam_(cam),
        frame_index_(frame_index),
        zbuffer_(reference.labels.width(), reference.labels.height(),
                 std::numeric_limits<double>::infinity()),
        labels_(reference.labels.width(), reference.labels.height(), 0),
        written_(reference.labels.width(), reference.labels.height(), kUnwritten) {
    if (reference_depth.width() != reference.labels.width() ||
        reference_depth.height() != reference.labels.height()) {
      throw Error(ErrorCode::DimensionMismatch, "reference depth and mask sizes differ");
    }
    for (int y = 0; y < reference.labels.height(); ++y) {
      for (int x = 0; x < reference.labels.width(); ++x) {
        const double z = reference_depth(x, y);
        if (!(z > 0.0)) continue;
        regions_[reference.labels(x, y)].push_back(
            backproject(cam, {static_cast<double>(x), static_cast<double>(y)}, z));
      }
    }
  }

  /// Static scene via T_c alone.
  void warp_background() { splat(0, camera_motion_, false); }

  /// Region `id` via T_c * T_o. Returns the number of pixels written.
  int warp_object(int id, const SE3Pose& object_motion) {
    return splat(static_cast<std::uint16_t>(id), camera_motion_ * object_motion, true);
  }

  /// Deactivates points of an object (moving with `object_motion`) that land
  /// behind a region already written by another object. Returns the count.
  int invalidate_occluded(std::span<PointSample> points, const SE3Pose& object_motion,
                          double relative_margin = 0.02) const {
    const SE3Pose warp = camera_motion_ * object_motion;
    int count = 0;
    for (auto& pt : points) {
      if (!pt.active || !(pt.depth > 0.0)) continue;
      const Eigen::Vector3d y = warp * backproject(cam_, pt.pixel, pt.depth);
      if (!(y.z() > 0.0)) continue;
      const Eigen::Vector2d q = project(cam_, y);
      const int u = static_cast<int>(std::lround(q.x()));
      const int v = static_cast<int>(std::lround(q.y()));
      if (!labels_.contains(u, v)) continue;
      const std::uint16_t owner = written_(u, v);
      if (owner == kUnwritten || owner == kBackgroundWrite || owner == pt.owner) continue;
      if (zbuffer_(u, v) < y.z() * (1.0 - relative_margin)) {
        pt.active = false;
        ++count;
      }
    }
    return count;
  }

  /// Final propagated mask: z-buffered labels with 1-pixel closing applied
  /// to every object region. Closing only claims pixels that received nothing
  /// or received background lying behind the object.
  LabelMask finish(std::span<const int> near_to_far) const {
    LabelMask out;
    out.labels = labels_;
    out.source = MaskSource::Propagated;
    out.frame_index = frame_index_;
    const int w = labels_.width(), h = labels_.height();
    Image<std::uint8_t> filled(w, h, 0);
    for (int id : near_to_far) {
      Image<std::uint8_t> region(w, h, 0);
      bool any = false;
      for (std::size_t i = 0; i < labels_.size(); ++i) {
        if (labels_[i] == id) {
          region[i] = 1;
          any = true;
        }
      }
      if (!any) continue;
      const Image<std::uint8_t> closed = erode3(dilate3(region));
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          if (!closed(x, y) || region(x, y) || filled(x, y)) continue;
          const std::uint16_t writer = written_(x, y);
          if (writer != kUnwritten && writer != kBackgroundWrite) continue;
          // Only fill where the object is in front of whatever showed through.
          double nearest = std::numeric_limits<double>::infinity();
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx)
              if (region.contains(x + dx, y + dy) && region(x + dx, y + dy))
                nearest = std::min(nearest, zbuffer_(x + dx, y + dy));
          if (nearest < zbuffer_(x, y)) {
            out.labels(x, y) = static_cast<std::uint16_t>(id);
            filled(x, y) = 1;
          }
        }
      }
    }
    return out;
  }

  const LabelImage& raw_labels() const noexcept { return labels_; }
  const Image<double>& zbuffer() const noexcept { return zbuffer_; }

 private:
  static constexpr std::uint16_t kUnwritten = 0xffff;
  static constexpr std::uint16_t kBackgroundWrite = 0xfffe;

  int splat(std::uint16_t label, const SE3Pose& warp, bool is_object) {
    auto it = regions_.find(label);
    if (it == regions_.end()) return 0;
    int written = 0;
    for (const Eigen::Vector3d& x : it->second) {
      const Eigen::Vector3d y = warp * x;
      if (!(y.z() > 0.0)) continue;
      const Eigen::Vector2d q = project(cam_, y);
      const long u = std::lround(q.x());
      const long v = std::lround(q.y());
      if (u < 0 || v < 0 || u >= labels_.width() || v >= labels_.height()) continue;
      const int ui = static_cast<int>(u), vi = static_cast<int>(v);
      if (y.z() < zbuffer_(ui, vi)) {
        zbuffer_(ui, vi) = y.z();
        labels_(ui, vi) = label;
        written_(ui, vi) = is_object ? label : kBackgroundWrite;
        ++written;
      }
    }
    return written;
  }

  static Image<std::uint8_t> dilate3(const Image<std::uint8_t>& in) {
    Image<std::uint8_t> out(in.width(), in.height(), 0);
    for (int y = 0; y < in.height(); ++y) {
      for (int x = 0; x < in.width(); ++x) {
        std::uint8_t v = 0;
        for (int dy = -1; dy <= 1 && !v; ++dy)
          for (int dx = -1; dx <= 1 && !v; ++dx)
            if (in.contains(x + dx, y + dy) && in(x + dx, y + dy)) v = 1;
        out(x, y) = v;
      }
    }
    return out;
  }

  // Outside the image counts as set, so regions touching the border do not
  // shrink.
  static Image<std::uint8_t> erode3(const Image<std::uint8_t>& in) {
    Image<std::uint8_t> out(in.width(), in.height(), 0);
    for (int y = 0; y < in.height(); ++y) {
      for (int x = 0; x < in.width(); ++x) {
        std::uint8_t v = 1;
        for (int dy = -1; dy <= 1 && v; ++dy)
          for (int dx = -1; dx <= 1 && v; ++dx)
            if (in.contains(x + dx, y + dy) && !in(x + dx, y + dy)) v = 0;
        out(x, y) = v;
      }
    }
    return out;
  }

  SE3Pose camera_motion_;
  CameraModel cam_;
  int frame_index_;
  Image<double> zbuffer_;
  LabelImage labels_;
  LabelImage written_;
  std::map<std::uint16_t, std::vector<Eigen::Vector3d>> regions_;
};

/// One-shot propagation of `reference` with the current T_c and each
/// track's T_o, near to far. Points of farther tracks covered by nearer
/// ones are deactivated in the registry.
inline LabelMask propagate_mask(const LabelMask& reference, const DepthImage& reference_depth,
                                Registry& registry, const SE3Pose& camera_motion,
                                const CameraModel& cam, int frame_index) {
  MaskPropagator prop(reference, reference_depth, camera_motion, cam, frame_index);
  prop.warp_background();
  const std::vector<int> order = depth_order(registry);
  for (int id : order) {
    ObjectTrack& t = registry.tracks.at(id);
    t.occluded_points = prop.invalidate_occluded(t.points, t.pose);
    prop.warp_object(id, t.pose);
  }
  return prop.finish(order);
}

/// {0, 128, 255} mask for a downstream SLAM system: background and static
/// objects 0, objects in motion 255, unobservable ones 128.
inline ByteImage emit_output_mask(const LabelMask& mask, const Registry& registry) {
  ByteImage out(mask.labels.width(), mask.labels.height(), 0);
  std::map<std::uint16_t, std::uint8_t> value;
  for (auto id : mask.instance_ids()) {
    const ObjectTrack* t = registry.find(id);
    if (t == nullptr || t->classified_frame != mask.frame_index) {
      throw Error(ErrorCode::UnclassifiedTrack,
                  "track " + std::to_string(id) + " has no state for frame " +
                      std::to_string(mask.frame_index));
    }
    switch (t->state) {
      case MotionState::InMotion: value[id] = 255; break;
      case MotionState::NotObserved: value[id] = 128; break;
      case MotionState::Static: value[id] = 0; break;
    }
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto l = mask.labels[i];
    if (l != 0) out[i] = value[l];
  }
  return out;
}

/// Grows nonzero regions by `radius` pixels (square structuring element),
/// keeping the larger value where regions meet.
inline ByteImage dilate_output_mask(const ByteImage& mask, int radius) {
  if (radius <= 0) return mask;
  ByteImage out = mask;
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) {
      std::uint8_t v = mask(x, y);
      for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx)
          if (mask.contains(x + dx, y + dy)) v = std::max(v, mask(x + dx, y + dy));
      out(x, y) = v;
    }
  }
  return out;
}

}  // namespace dot

#endif  // DOT_MASKPROP_HPP
