#ifndef DOT_INSTANCES_HPP
#define DOT_INSTANCES_HPP

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "dot/errors.hpp"
#include "dot/geometry.hpp"
#include "dot/image.hpp"
#include "dot/image_io.hpp"
#include "dot/motion.hpp"
#include "dot/photo_tracker.hpp"

namespace dot {

enum class MaskSource { Network, Propagated };

/// Per-pixel instance ids, 0 = background.
struct LabelMask {
  LabelImage labels;
  MaskSource source = MaskSource::Network;
  int frame_index = 0;

  std::vector<std::uint16_t> instance_ids() const {
    std::set<std::uint16_t> ids;
    for (auto v : labels.data()) {
      if (v != 0) ids.insert(v);
    }
    return {ids.begin(), ids.end()};
  }

  std::size_t pixel_count(std::uint16_t id) const {
    return static_cast<std::size_t>(std::count(labels.data().begin(), labels.data().end(), id));
  }
};

/// A potentially dynamic object followed across frames.
struct ObjectTrack {
  int id = 0;
  // T_o: motion from the reference frame to the current one, expressed in
  // the reference camera frame. Identity at birth and after re-anchoring.
  SE3Pose pose;
  // Constant-velocity memory: per-frame step of T_o (reference coordinates).
  TangentVector velocity = TangentVector::Zero();
  std::vector<PointSample> points;
  MotionState state = MotionState::NotObserved;
  int state_age = 0;
  int last_seen = -1;
  double median_depth = 0.0;
  int missed_detections = 0;
  int born_frame = 0;
  int classified_frame = -1;
  // World-frame displacement accumulated since birth, and its value at the
  // current reference frame.
  SE3Pose world_motion;
  SE3Pose world_motion_at_ref;
  // Diagnostics of the latest classification.
  double last_disparity = 0.0;
  double last_entropy = 0.0;
  double last_threshold = 0.0;
  int occluded_points = 0;
  bool tracked = false;
};

struct Registry {
  std::map<int, ObjectTrack> tracks;
  int next_id = 1;
  std::vector<PointSample> background;

  ObjectTrack& spawn(int frame_index) {
    ObjectTrack t;
    t.id = next_id++;
    t.born_frame = frame_index;
    t.last_seen = frame_index;
    return tracks.emplace(t.id, std::move(t)).first->second;
  }

  ObjectTrack* find(int id) {
    auto it = tracks.find(id);
    return it == tracks.end() ? nullptr : &it->second;
  }
  const ObjectTrack* find(int id) const {
    auto it = tracks.find(id);
    return it == tracks.end() ? nullptr : &it->second;
  }
};

struct SamplingConfig {
  int background_cap = 800;
  int object_cap = 200;
  int cell_size = 4;
  double min_gradient = 2.0;
  int min_instance_pixels = 100;
  int border = 2;

  void validate() const {
    if (background_cap <= 0 || object_cap <= 0 || cell_size <= 0 || min_gradient < 0.0 ||
        min_instance_pixels < 0 || border < 1) {
      throw Error(ErrorCode::ConfigError, "invalid sampling parameters");
    }
  }
};

/// Zeroes every instance with fewer than `min_pixels` pixels.
inline void drop_small_instances(LabelImage& labels, int min_pixels) {
  std::unordered_map<std::uint16_t, int> counts;
  for (auto v : labels.data()) {
    if (v != 0) ++counts[v];
  }
  for (auto& v : labels.data()) {
    if (v != 0 && counts[v] < min_pixels) v = 0;
  }
}

/// Reads a 16-bit label PNG produced by the segmentation stage.
inline LabelMask load_mask(const std::filesystem::path& path, int frame_index, int expected_width,
                           int expected_height, int min_instance_pixels = 100) {
  LabelMask mask;
  mask.labels = read_png_u16(path);
  if (mask.labels.width() != expected_width || mask.labels.height() != expected_height) {
    throw Error(ErrorCode::DimensionMismatch,
                path.string() + " is " + std::to_string(mask.labels.width()) + "x" +
                    std::to_string(mask.labels.height()) + ", frame is " +
                    std::to_string(expected_width) + "x" + std::to_string(expected_height));
  }
  drop_small_instances(mask.labels, min_instance_pixels);
  mask.source = MaskSource::Network;
  mask.frame_index = frame_index;
  return mask;
}

struct Association {
  std::map<std::uint16_t, int> net_to_track;
  std::vector<int> births;
  std::vector<int> unmatched_tracks;
};

/// Pixel-count IoU between every (a, b) pair of nonzero labels that overlap.
inline std::map<std::pair<std::uint16_t, std::uint16_t>, double> pairwise_iou(const LabelImage& a,
                                                                              const LabelImage& b) {
  std::map<std::pair<std::uint16_t, std::uint16_t>, std::size_t> inter;
  std::unordered_map<std::uint16_t, std::size_t> area_a, area_b;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto la = a[i], lb = b[i];
    if (la != 0) ++area_a[la];
    if (lb != 0) ++area_b[lb];
    if (la != 0 && lb != 0) ++inter[{la, lb}];
  }
  std::map<std::pair<std::uint16_t, std::uint16_t>, double> iou;
  for (const auto& [key, n] : inter) {
    const double uni = static_cast<double>(area_a[key.first] + area_b[key.second] - n);
    iou[key] = static_cast<double>(n) / uni;
  }
  return iou;
}

/// Greedy one-to-one matching of network instances to propagated tracks by
/// descending IoU. Unmatched network instances spawn new tracks; unmatched
/// tracks accumulate a missed-detection count.
inline Association associate(const LabelMask& net_mask, const LabelMask& propagated_mask,
                             Registry& registry, double iou_threshold = 0.3) {
  if (net_mask.labels.width() != propagated_mask.labels.width() ||
      net_mask.labels.height() != propagated_mask.labels.height()) {
    throw Error(ErrorCode::DimensionMismatch, "network and propagated masks differ in size");
  }
  const auto iou = pairwise_iou(net_mask.labels, propagated_mask.labels);
  std::vector<std::tuple<double, std::uint16_t, std::uint16_t>> candidates;
  for (const auto& [key, v] : iou) {
    if (v >= iou_threshold && registry.find(key.second) != nullptr) {
      candidates.emplace_back(v, key.first, key.second);
    }
  }
  std::sort(candidates.begin(), candidates.end(), [](const auto& l, const auto& r) {
    if (std::get<0>(l) != std::get<0>(r)) return std::get<0>(l) > std::get<0>(r);
    if (std::get<1>(l) != std::get<1>(r)) return std::get<1>(l) < std::get<1>(r);
    return std::get<2>(l) < std::get<2>(r);
  });

  Association out;
  std::set<int> used_tracks;
  for (const auto& [v, net_id, track_id] : candidates) {
    if (out.net_to_track.count(net_id) || used_tracks.count(track_id)) continue;
    out.net_to_track[net_id] = track_id;
    used_tracks.insert(track_id);
  }
  for (auto net_id : net_mask.instance_ids()) {
    if (out.net_to_track.count(net_id)) continue;
    ObjectTrack& t = registry.spawn(net_mask.frame_index);
    out.net_to_track[net_id] = t.id;
    out.births.push_back(t.id);
    used_tracks.insert(t.id);
  }
  for (auto& [id, track] : registry.tracks) {
    if (used_tracks.count(id)) {
      track.missed_detections = 0;
      track.last_seen = net_mask.frame_index;
    } else {
      ++track.missed_detections;
      out.unmatched_tracks.push_back(id);
    }
  }
  return out;
}

/// Reference labels after association: network instances renamed to track
/// ids, plus the propagated regions of tracks the network missed (gap fill).
inline LabelMask compose_reference_mask(const LabelMask& net_mask, const LabelMask& propagated_mask,
                                        const Association& assoc) {
  LabelMask out;
  out.labels = LabelImage(net_mask.labels.width(), net_mask.labels.height(), 0);
  out.source = MaskSource::Network;
  out.frame_index = net_mask.frame_index;
  const std::set<int> keep(assoc.unmatched_tracks.begin(), assoc.unmatched_tracks.end());
  for (std::size_t i = 0; i < out.labels.size(); ++i) {
    const auto n = net_mask.labels[i];
    if (n != 0) {
      out.labels[i] = static_cast<std::uint16_t>(assoc.net_to_track.at(n));
    } else if (const auto p = propagated_mask.labels[i]; p != 0 && keep.count(p)) {
      out.labels[i] = p;
    }
  }
  return out;
}

struct PointCandidate {
  int x = 0;
  int y = 0;
  double magnitude = 0.0;
  Eigen::Vector2d gradient = Eigen::Vector2d::Zero();
};

/// Gradient-driven selection: at most one pixel per cell and region (the
/// strongest), then the strongest cells up to the region's cap. Pixels on
/// region boundaries, near the image border or without depth are skipped.
inline std::map<int, std::vector<PointCandidate>> select_points(const Frame& frame,
                                                                const LabelImage& labels,
                                                                const SamplingConfig& cfg) {
  const IntensityImage& img = frame.intensity;
  const int w = img.width(), h = img.height();
  const int cells_x = (w + cfg.cell_size - 1) / cfg.cell_size;
  // best[(label, cell)] -> candidate
  std::map<std::pair<int, int>, PointCandidate> best;
  for (int y = cfg.border; y < h - cfg.border; ++y) {
    for (int x = cfg.border; x < w - cfg.border; ++x) {
      if (!(frame.depth(x, y) > 0.0)) continue;
      const int label = labels(x, y);
      bool interior = true;
      for (int dy = -1; dy <= 1 && interior; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          if (labels(x + dx, y + dy) != label) {
            interior = false;
            break;
          }
        }
      }
      if (!interior) continue;
      const Eigen::Vector2d g = pixel_gradient(img, x, y);
      const double m = g.norm();
      if (!(m > cfg.min_gradient)) continue;
      const int cell = (y / cfg.cell_size) * cells_x + x / cfg.cell_size;
      auto [it, inserted] = best.try_emplace({label, cell}, PointCandidate{x, y, m, g});
      if (!inserted && m > it->second.magnitude) {
        it->second = PointCandidate{x, y, m, g};
      }
    }
  }
  std::map<int, std::vector<PointCandidate>> per_label;
  for (const auto& [key, c] : best) {
    per_label[key.first].push_back(c);
  }
  for (auto& [label, list] : per_label) {
    std::sort(list.begin(), list.end(), [](const PointCandidate& a, const PointCandidate& b) {
      if (a.magnitude != b.magnitude) return a.magnitude > b.magnitude;
      if (a.y != b.y) return a.y < b.y;
      return a.x < b.x;
    });
    const std::size_t cap =
        static_cast<std::size_t>(label == kBackground ? cfg.background_cap : cfg.object_cap);
    if (list.size() > cap) list.resize(cap);
  }
  return per_label;
}

namespace detail {

inline double median_depth_of(const std::vector<PointSample>& pts) {
  if (pts.empty()) return 0.0;
  std::vector<double> d;
  d.reserve(pts.size());
  for (const auto& p : pts) d.push_back(p.depth);
  return median_of(std::move(d));
}

}  // namespace detail

/// Re-anchors the background points and every labelled track's points in
/// `frame` (which must carry its pyramid). Returns the ids of tracks left
/// with fewer than `min_valid_points` points.
inline std::vector<int> resample_points(const Frame& frame, const LabelMask& mask, Registry& registry,
                                        const CameraModel& cam, const SamplingConfig& cfg,
                                        int min_valid_points) {
  cfg.validate();
  auto selected = select_points(frame, mask.labels, cfg);
  auto to_samples = [&](int owner) {
    std::vector<PointSample> pts;
    if (auto it = selected.find(owner); it != selected.end()) {
      for (const auto& c : it->second) {
        PointSample p;
        p.pixel = {static_cast<double>(c.x), static_cast<double>(c.y)};
        p.depth = frame.depth(c.x, c.y);
        p.gradient = c.gradient;
        p.owner = owner;
        pts.push_back(std::move(p));
      }
    }
    attach_reference_intensities(frame, cam, pts);
    return pts;
  };
  registry.background = to_samples(kBackground);

  std::vector<int> too_few;
  const auto present = mask.instance_ids();
  const std::set<int> present_ids(present.begin(), present.end());
  for (auto& [id, track] : registry.tracks) {
    if (!present_ids.count(id)) {
      track.points.clear();
      continue;
    }
    track.points = to_samples(id);
    if (!track.points.empty()) {
      track.median_depth = detail::median_depth_of(track.points);
    }
    if (static_cast<int>(track.points.size()) < min_valid_points) {
      too_few.push_back(id);
    }
  }
  return too_few;
}

}  // namespace dot

#endif  // DOT_INSTANCES_HPP
