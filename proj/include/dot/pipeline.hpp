#ifndef DOT_PIPELINE_HPP
#define DOT_PIPELINE_HPP

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "dot/errors.hpp"
#include "dot/geometry.hpp"
#include "dot/harness.hpp"
#include "dot/image_io.hpp"
#include "dot/instances.hpp"
#include "dot/maskprop.hpp"
#include "dot/motion.hpp"
#include "dot/photo_tracker.hpp"
#include "dot/trajectory_io.hpp"

namespace dot {

// ---------------------------------------------------------------------------
// Configuration

struct PipelineConfig {
  std::filesystem::path dataset;
  // Network masks; defaults to <dataset>/gt_masks.
  std::filesystem::path masks;
  // 0 takes the cadence listed in the dataset manifest.
  int mask_every = 0;
  // Network frames withheld from the pipeline.
  std::vector<int> drop_masks;
  SolverConfig solver;
  SamplingConfig sampling;
  MotionThresholds thresholds;
  double iou_threshold = 0.3;
  int retire_after = 3;
  double occlusion_margin = 0.02;
  std::uint64_t seed = 0;
  // Relative random perturbation of thresholds and sampling per seed.
  double jitter = 0.0;
  int dilate = 0;

  void validate() const {
    solver.validate();
    sampling.validate();
    thresholds.validate();
    if (mask_every < 0 || retire_after < 0 || dilate < 0 || !(iou_threshold > 0.0 && iou_threshold <= 1.0) ||
        !(jitter >= 0.0 && jitter < 1.0) || !(occlusion_margin >= 0.0)) {
      throw Error(ErrorCode::ConfigError, "invalid pipeline parameters");
    }
  }
};

namespace detail {

inline void check_keys(const nlohmann::json& j, const std::string& section, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw Error(ErrorCode::ConfigError, section + " must be an object");
  for (const auto& [k, v] : j.items()) {
    if (std::none_of(keys.begin(), keys.end(), [&](const char* allowed) { return k == allowed; })) {
      throw Error(ErrorCode::ConfigError, "unknown key " + section + "." + k);
    }
  }
}

template <typename T>
void read_key(const nlohmann::json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

}  // namespace detail

/// Relative paths are resolved against `base_dir`.
inline PipelineConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {}) {
  PipelineConfig c;
  try {
    detail::check_keys(j, "config", {"dataset", "masks", "solver", "sampling", "motion", "association", "output",
                                     "seed", "jitter"});
    if (!j.contains("dataset")) throw Error(ErrorCode::ConfigError, "config has no dataset");
    auto resolve = [&](const std::string& p) {
      const std::filesystem::path path(p);
      return path.is_absolute() || base_dir.empty() ? path : base_dir / path;
    };
    c.dataset = resolve(j.at("dataset").get<std::string>());
    if (j.contains("masks")) {
      const auto& m = j["masks"];
      detail::check_keys(m, "masks", {"dir", "every", "drop"});
      if (m.contains("dir")) c.masks = resolve(m["dir"].get<std::string>());
      detail::read_key(m, "every", c.mask_every);
      detail::read_key(m, "drop", c.drop_masks);
    }
    if (j.contains("solver")) {
      const auto& s = j["solver"];
      detail::check_keys(s, "solver", {"huber_delta", "max_iterations", "convergence_eps", "pyramid_levels",
                                       "min_valid_points", "outlier_mad_factor", "residual_sigma", "min_pearson",
                                       "max_step_halvings", "max_condition"});
      detail::read_key(s, "huber_delta", c.solver.huber_delta);
      detail::read_key(s, "max_iterations", c.solver.max_iterations);
      detail::read_key(s, "convergence_eps", c.solver.convergence_eps);
      detail::read_key(s, "pyramid_levels", c.solver.pyramid_levels);
      detail::read_key(s, "min_valid_points", c.solver.min_valid_points);
      detail::read_key(s, "outlier_mad_factor", c.solver.outlier_mad_factor);
      detail::read_key(s, "residual_sigma", c.solver.residual_sigma);
      detail::read_key(s, "min_pearson", c.solver.min_pearson);
      detail::read_key(s, "max_step_halvings", c.solver.max_step_halvings);
      detail::read_key(s, "max_condition", c.solver.max_condition);
    }
    if (j.contains("sampling")) {
      const auto& s = j["sampling"];
      detail::check_keys(s, "sampling", {"background_cap", "object_cap", "cell_size", "min_gradient",
                                         "min_instance_pixels", "border"});
      detail::read_key(s, "background_cap", c.sampling.background_cap);
      detail::read_key(s, "object_cap", c.sampling.object_cap);
      detail::read_key(s, "cell_size", c.sampling.cell_size);
      detail::read_key(s, "min_gradient", c.sampling.min_gradient);
      detail::read_key(s, "min_instance_pixels", c.sampling.min_instance_pixels);
      detail::read_key(s, "border", c.sampling.border);
    }
    if (j.contains("motion")) {
      const auto& s = j["motion"];
      detail::check_keys(s, "motion", {"h_min", "delta_base", "delta_slope", "hysteresis_frames"});
      detail::read_key(s, "h_min", c.thresholds.h_min);
      detail::read_key(s, "delta_base", c.thresholds.delta_base);
      detail::read_key(s, "delta_slope", c.thresholds.delta_slope);
      detail::read_key(s, "hysteresis_frames", c.thresholds.hysteresis_frames);
    }
    if (j.contains("association")) {
      const auto& s = j["association"];
      detail::check_keys(s, "association", {"iou_threshold", "retire_after", "occlusion_margin"});
      detail::read_key(s, "iou_threshold", c.iou_threshold);
      detail::read_key(s, "retire_after", c.retire_after);
      detail::read_key(s, "occlusion_margin", c.occlusion_margin);
    }
    if (j.contains("output")) {
      detail::check_keys(j["output"], "output", {"dilate"});
      detail::read_key(j["output"], "dilate", c.dilate);
    }
    detail::read_key(j, "seed", c.seed);
    detail::read_key(j, "jitter", c.jitter);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("bad config: ") + e.what());
  }
  c.validate();
  return c;
}

inline PipelineConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ConfigError, "cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, path.string() + ": " + e.what());
  }
  return config_from_json(j, path.parent_path());
}

inline nlohmann::json to_json(const PipelineConfig& c) {
  return {{"dataset", c.dataset.string()},
          {"masks", {{"dir", c.masks.string()}, {"every", c.mask_every}, {"drop", c.drop_masks}}},
          {"solver",
           {{"huber_delta", c.solver.huber_delta},
            {"max_iterations", c.solver.max_iterations},
            {"convergence_eps", c.solver.convergence_eps},
            {"pyramid_levels", c.solver.pyramid_levels},
            {"min_valid_points", c.solver.min_valid_points},
            {"outlier_mad_factor", c.solver.outlier_mad_factor},
            {"residual_sigma", c.solver.residual_sigma},
            {"min_pearson", c.solver.min_pearson},
            {"max_step_halvings", c.solver.max_step_halvings},
            {"max_condition", c.solver.max_condition}}},
          {"sampling",
           {{"background_cap", c.sampling.background_cap},
            {"object_cap", c.sampling.object_cap},
            {"cell_size", c.sampling.cell_size},
            {"min_gradient", c.sampling.min_gradient},
            {"min_instance_pixels", c.sampling.min_instance_pixels},
            {"border", c.sampling.border}}},
          {"motion",
           {{"h_min", c.thresholds.h_min},
            {"delta_base", c.thresholds.delta_base},
            {"delta_slope", c.thresholds.delta_slope},
            {"hysteresis_frames", c.thresholds.hysteresis_frames}}},
          {"association",
           {{"iou_threshold", c.iou_threshold},
            {"retire_after", c.retire_after},
            {"occlusion_margin", c.occlusion_margin}}},
          {"output", {{"dilate", c.dilate}}},
          {"seed", c.seed},
          {"jitter", c.jitter}};
}

/// Seed-dependent perturbation used by repeated trials; identity when
/// jitter is 0.
inline PipelineConfig apply_jitter(PipelineConfig c) {
  if (!(c.jitter > 0.0)) return c;
  std::mt19937_64 rng(detail::splitmix64(c.seed));
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  c.thresholds.delta_base *= 1.0 + c.jitter * u(rng);
  c.thresholds.delta_slope *= 1.0 + c.jitter * u(rng);
  c.thresholds.h_min += c.jitter * u(rng);
  c.sampling.min_gradient *= 1.0 + c.jitter * u(rng);
  return c;
}

// ---------------------------------------------------------------------------
// Per-frame processing

struct StateRecord {
  int frame = 0;
  int object_id = 0;
  double disparity = 0.0;
  double entropy = 0.0;
  double threshold = 0.0;
  MotionState state = MotionState::NotObserved;
  // False for births and for objects whose motion could not be estimated.
  bool estimable = false;
  bool birth = false;
};

struct FrameOutput {
  int index = 0;
  bool network = false;
  LabelMask labels;
  ByteImage mask;
  SE3Pose camera_pose;  // camera-to-world, world = first camera
  std::map<int, SE3Pose> object_poses;
  std::vector<StateRecord> states;
};

/// Stateful frame-by-frame driver. Poses are tracked against the latest
/// frame that carried a network mask (the reference); between network
/// frames, masks are propagated from the reference.
class Pipeline {
 public:
  Pipeline(const CameraModel& cam, PipelineConfig config) : cam_(cam), cfg_(std::move(config)) {
    cfg_.validate();
  }

  /// Frames must arrive in order. `network` is the externally segmented
  /// mask for this frame, if any. Throws on camera tracking failure.
  FrameOutput process(Frame frame, int index, const std::optional<LabelMask>& network) {
    Frame cur = build_pyramid(std::move(frame), cfg_.solver.pyramid_levels);
    FrameOutput out;
    out.index = index;
    out.network = network.has_value();

    if (!started_) {
      LabelMask empty{LabelImage(cam_.width, cam_.height, 0), MaskSource::Propagated, index};
      LabelMask net = network ? *network : LabelMask{LabelImage(cam_.width, cam_.height, 0), MaskSource::Network, index};
      net.frame_index = index;
      out.labels = anchor(std::move(cur), index, net, empty, &out);
      started_ = true;
      return finish_frame(std::move(out), index);
    }

    // Camera: static points against the reference, constant-velocity start.
    const SE3Pose init = se3_exp(camera_velocity_) * camera_motion_;
    const TrackResult cam_result =
        track_camera(reference_, cur, registry_.background, init, cam_, cfg_.solver);
    camera_velocity_ = se3_log(cam_result.pose * camera_motion_.inverse());
    camera_motion_ = cam_result.pose;
    camera_pose_ = reference_pose_ * camera_motion_.inverse();
    spdlog::debug("frame {}: camera pearson {:.4f}", index, cam_result.pearson);

    // Objects near to far, propagating as we go.
    MaskPropagator prop(reference_mask_, reference_.depth, camera_motion_, cam_, index);
    prop.warp_background();
    std::vector<const ObjectTrack*> live;
    for (const auto& [id, t] : registry_.tracks) {
      if (!t.points.empty()) live.push_back(&t);
    }
    const std::vector<int> order = depth_order(std::span<const ObjectTrack* const>(live));
    for (int id : order) {
      ObjectTrack& t = registry_.tracks.at(id);
      const SE3Pose predicted = se3_exp(t.velocity) * t.pose;
      for (auto& p : t.points) p.active = true;
      t.occluded_points = prop.invalidate_occluded(t.points, predicted, cfg_.occlusion_margin);
      StateRecord rec{index, id};
      try {
        const TrackResult r = track_object(reference_, cur, t.points, camera_motion_, predicted, cam_, cfg_.solver);
        t.velocity = se3_log(r.pose * t.pose.inverse());
        t.pose = r.pose;
        rec.disparity = dynamic_disparity(t.points, camera_motion_, t.pose, cam_);
        rec.entropy = r.normal_eq.observability;
        rec.threshold = adaptive_threshold(rec.entropy, cfg_.thresholds);
        rec.state = classify(rec.disparity, rec.entropy, cfg_.thresholds, t.state, t.state_age);
        rec.estimable = true;
        // An unobservable step says nothing about the object's velocity.
        if (rec.entropy < cfg_.thresholds.h_min) t.velocity = TangentVector::Zero();
      } catch (const Error& e) {
        if (!recoverable(e.code())) throw;
        spdlog::debug("frame {}: object {} not estimable ({})", index, id, e.what());
        t.pose = predicted;
        t.velocity = TangentVector::Zero();
        rec.entropy = -std::numeric_limits<double>::infinity();
        rec.threshold = cfg_.thresholds.delta_base;
        rec.state = classify_unobservable(cfg_.thresholds, t.state, t.state_age);
      }
      apply_state(t, rec);
      out.states.push_back(rec);
      t.world_motion = reference_pose_ * t.pose * reference_pose_.inverse() * t.world_motion_at_ref;
      prop.warp_object(id, t.pose);
      update_depth(t);
    }
    LabelMask propagated = prop.finish(order);
    const auto visible = propagated.instance_ids();
    for (auto& [id, t] : registry_.tracks) {
      t.tracked = std::find(visible.begin(), visible.end(), id) != visible.end();
    }

    if (network) {
      LabelMask net = *network;
      net.frame_index = index;
      out.labels = anchor(std::move(cur), index, net, propagated, &out);
    } else {
      out.labels = std::move(propagated);
    }
    return finish_frame(std::move(out), index);
  }

  const Registry& registry() const noexcept { return registry_; }
  Registry& registry() noexcept { return registry_; }
  const SE3Pose& camera_motion() const noexcept { return camera_motion_; }
  const PipelineConfig& config() const noexcept { return cfg_; }

  static bool recoverable(ErrorCode c) {
    return c == ErrorCode::TooFewValidPoints || c == ErrorCode::SingularSystem || c == ErrorCode::TrackingLost ||
           c == ErrorCode::NoValidProjections;
  }

 private:
  void apply_state(ObjectTrack& t, const StateRecord& rec) {
    StateMemory mem{t.state, t.state_age};
    mem.update(rec.state);
    t.state = mem.state;
    t.state_age = mem.age;
    t.classified_frame = rec.frame;
    t.last_disparity = rec.disparity;
    t.last_entropy = rec.entropy;
    t.last_threshold = rec.threshold;
  }

  void update_depth(ObjectTrack& t) const {
    const SE3Pose warp = camera_motion_ * t.pose;
    std::vector<double> z;
    for (const auto& p : t.points) {
      if (p.depth > 0.0) z.push_back((warp * backproject(cam_, p.pixel, p.depth)).z());
    }
    if (!z.empty()) t.median_depth = detail::median_of(std::move(z));
  }

  /// Path A: associate, make the current frame the reference and resample.
  LabelMask anchor(Frame cur, int index, const LabelMask& net, const LabelMask& propagated, FrameOutput* out) {
    const Association assoc = associate(net, propagated, registry_, cfg_.iou_threshold);
    LabelMask ref_mask = compose_reference_mask(net, propagated, assoc);
    for (int id : assoc.unmatched_tracks) {
      if (registry_.tracks.at(id).missed_detections > cfg_.retire_after) {
        registry_.tracks.erase(id);
        for (auto& v : ref_mask.labels.data()) {
          if (v == id) v = 0;
        }
        anchors_.erase(id);
      }
    }
    for (int id : assoc.births) {
      ObjectTrack& t = registry_.tracks.at(id);
      StateRecord rec{index, id};
      rec.birth = true;
      rec.threshold = cfg_.thresholds.delta_base;
      rec.entropy = -std::numeric_limits<double>::infinity();
      t.state = MotionState::NotObserved;
      t.state_age = 0;
      t.classified_frame = index;
      out->states.push_back(rec);
    }
    // Re-express every track relative to the new reference.
    for (auto& [id, t] : registry_.tracks) {
      t.velocity = camera_motion_.adjoint() * t.velocity;
      t.world_motion_at_ref = t.world_motion;
      t.pose = SE3Pose::identity();
    }
    reference_pose_ = camera_pose_;
    camera_motion_ = SE3Pose::identity();
    reference_ = std::move(cur);
    reference_mask_ = ref_mask;
    const auto too_few =
        resample_points(reference_, reference_mask_, registry_, cam_, cfg_.sampling, cfg_.solver.min_valid_points);
    if (!too_few.empty()) spdlog::debug("frame {}: {} tracks with too few points", index, too_few.size());
    for (int id : assoc.births) {
      const ObjectTrack& t = registry_.tracks.at(id);
      Eigen::Vector3d c = Eigen::Vector3d::Zero();
      for (const auto& p : t.points) c += backproject(cam_, p.pixel, p.depth);
      if (!t.points.empty()) c /= static_cast<double>(t.points.size());
      anchors_[id] = SE3Pose(reference_pose_.rotation(), reference_pose_ * c);
    }
    return ref_mask;
  }

  FrameOutput finish_frame(FrameOutput out, int index) {
    out.labels.frame_index = index;
    for (auto id : out.labels.instance_ids()) {
      ObjectTrack* t = registry_.find(id);
      if (t != nullptr && t->classified_frame != index) {
        StateRecord rec{index, id};
        rec.entropy = -std::numeric_limits<double>::infinity();
        rec.threshold = cfg_.thresholds.delta_base;
        rec.state = classify_unobservable(cfg_.thresholds, t->state, t->state_age);
        apply_state(*t, rec);
        out.states.push_back(rec);
      }
    }
    out.mask = dilate_output_mask(emit_output_mask(out.labels, registry_), cfg_.dilate);
    out.camera_pose = camera_pose_;
    for (const auto& [id, t] : registry_.tracks) {
      if (t.classified_frame == index && anchors_.count(id)) {
        out.object_poses[id] = t.world_motion * anchors_.at(id);
      }
    }
    return out;
  }

  CameraModel cam_;
  PipelineConfig cfg_;
  bool started_ = false;
  Registry registry_;
  Frame reference_;
  LabelMask reference_mask_;
  SE3Pose reference_pose_;
  SE3Pose camera_motion_;
  SE3Pose camera_pose_;
  TangentVector camera_velocity_ = TangentVector::Zero();
  std::map<int, SE3Pose> anchors_;
};

// ---------------------------------------------------------------------------
// Whole-sequence runs

struct PipelineResult {
  int frames_total = 0;
  int frames_processed = 0;
  bool tracking_lost = false;
  std::string failure;
  std::vector<int> network_frames;
  Trajectory camera;
  std::map<int, Trajectory> objects;
  std::vector<StateRecord> states;
  std::vector<LabelImage> labels;
  std::vector<ByteImage> masks;

  double tracked_fraction() const {
    return frames_total > 0 ? static_cast<double>(frames_processed) / frames_total : 0.0;
  }
};

inline std::vector<int> network_frames(const Dataset& data, const PipelineConfig& cfg) {
  std::vector<int> frames = cfg.mask_every > 0 ? mask_frames_for(data.frames, cfg.mask_every) : data.mask_frames;
  std::erase_if(frames, [&](int k) {
    return k < 0 || k >= data.frames ||
           std::find(cfg.drop_masks.begin(), cfg.drop_masks.end(), k) != cfg.drop_masks.end();
  });
  return frames;
}

/// Runs every frame of `data`. Camera tracking failure stops the run and is
/// reported in the result; everything up to that frame is kept.
inline PipelineResult run_pipeline(const Dataset& data, PipelineConfig cfg) {
  cfg = apply_jitter(std::move(cfg));
  const std::filesystem::path mask_dir = cfg.masks.empty() ? data.root / "gt_masks" : cfg.masks;
  PipelineResult res;
  res.frames_total = data.frames;
  res.network_frames = network_frames(data, cfg);
  if (!std::filesystem::is_directory(mask_dir) && !res.network_frames.empty()) {
    throw Error(ErrorCode::ConfigError, "mask directory " + mask_dir.string() + " does not exist");
  }
  const std::set<int> net_set(res.network_frames.begin(), res.network_frames.end());
  Pipeline pipe(data.cam, cfg);
  for (int i = 0; i < data.frames; ++i) {
    Frame f = data.load_frame(i);
    const double t = f.timestamp;
    std::optional<LabelMask> net;
    if (net_set.count(i)) {
      net = load_mask(mask_dir / (std::to_string(i) + ".png"), i, data.cam.width, data.cam.height,
                      cfg.sampling.min_instance_pixels);
    }
    FrameOutput out;
    try {
      out = pipe.process(std::move(f), i, net);
    } catch (const Error& e) {
      if (!Pipeline::recoverable(e.code())) throw;
      res.tracking_lost = true;
      res.failure = "frame " + std::to_string(i) + ": " + e.what();
      spdlog::error("tracking lost at {}", res.failure);
      break;
    }
    res.camera.push_back({t, out.camera_pose});
    for (const auto& [id, pose] : out.object_poses) res.objects[id].push_back({t, pose});
    res.states.insert(res.states.end(), out.states.begin(), out.states.end());
    res.labels.push_back(std::move(out.labels.labels));
    res.masks.push_back(std::move(out.mask));
    ++res.frames_processed;
  }
  return res;
}

inline nlohmann::json to_json(const StateRecord& r) {
  auto finite_or_null = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
  return {{"frame", r.frame},
          {"object_id", r.object_id},
          {"d_d", r.disparity},
          {"entropy", finite_or_null(r.entropy)},
          {"threshold", finite_or_null(r.threshold)},
          {"state", std::string(to_string(r.state))},
          {"estimable", r.estimable}};
}

/// masks/, labels/, states.jsonl, traj_camera.txt, traj_obj_<id>.txt and
/// summary.json under `out`.
inline void write_outputs(const PipelineResult& res, const PipelineConfig& cfg, const std::filesystem::path& out) {
  namespace fs = std::filesystem;
  fs::create_directories(out / "masks");
  fs::create_directories(out / "labels");
  for (std::size_t i = 0; i < res.masks.size(); ++i) {
    write_png(out / "masks" / (std::to_string(i) + ".png"), res.masks[i]);
    write_png(out / "labels" / (std::to_string(i) + ".png"), res.labels[i]);
  }
  {
    std::ofstream states(out / "states.jsonl");
    for (const auto& r : res.states) states << to_json(r).dump() << '\n';
  }
  write_tum(out / "traj_camera.txt", res.camera);
  for (const auto& [id, traj] : res.objects) {
    write_tum(out / ("traj_obj_" + std::to_string(id) + ".txt"), traj);
  }
  nlohmann::json summary = {{"frames_total", res.frames_total},
                            {"frames_processed", res.frames_processed},
                            {"tracked_fraction", res.tracked_fraction()},
                            {"tracking_lost", res.tracking_lost},
                            {"failure", res.failure},
                            {"network_frames", res.network_frames},
                            {"config", to_json(cfg)}};
  std::ofstream(out / "summary.json") << summary.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Ground-truth bookkeeping

/// Track id -> ground-truth object id by majority pixel overlap over the
/// whole run (0 when a track mostly covers background).
inline std::map<int, int> match_tracks_to_truth(const PipelineResult& res, const Dataset& data) {
  std::map<int, std::map<int, long>> votes;
  for (std::size_t i = 0; i < res.labels.size(); ++i) {
    const LabelImage gt = data.load_gt_mask(static_cast<int>(i));
    const LabelImage& est = res.labels[i];
    for (std::size_t p = 0; p < est.size(); ++p) {
      if (est[p] != 0) ++votes[est[p]][gt[p]];
    }
  }
  std::map<int, int> out;
  for (const auto& [track, counts] : votes) {
    int best = 0;
    long n = -1;
    for (const auto& [gt, c] : counts) {
      if (c > n) {
        best = gt;
        n = c;
      }
    }
    out[track] = best;
  }
  return out;
}

/// Classification opportunities of one run labelled with ground truth.
inline std::vector<CalibrationSample> calibration_samples(const PipelineResult& res, const Dataset& data,
                                                          int sequence) {
  const auto match = match_tracks_to_truth(res, data);
  std::map<int, ObjectInfo> info;
  for (const auto& o : data.objects) info[o.id] = o;
  // Visible ground-truth area per frame and object. Frames where an object
  // shows less than half of its largest visible area are not scored: its
  // motion there is neither clearly observable nor clearly not.
  std::vector<std::map<int, int>> area(static_cast<std::size_t>(data.frames));
  std::map<int, int> max_area;
  for (int k = 0; k < data.frames; ++k) {
    const LabelImage gt = data.load_gt_mask(k);
    auto& a = area[static_cast<std::size_t>(k)];
    for (const auto v : gt.data()) {
      if (v != 0) ++a[v];
    }
    for (const auto& [id, n] : a) max_area[id] = std::max(max_area[id], n);
  }
  std::vector<CalibrationSample> out;
  for (const auto& r : res.states) {
    if (r.birth) continue;
    const auto m = match.find(r.object_id);
    if (m == match.end() || m->second == 0 || !info.count(m->second)) continue;
    const ObjectInfo& o = info.at(m->second);
    const auto& a = area.at(static_cast<std::size_t>(r.frame));
    const auto vis = a.find(o.id);
    if (vis == a.end() || 2 * vis->second < max_area[o.id]) continue;
    CalibrationSample s;
    s.sequence = sequence;
    s.track = r.object_id;
    s.frame = r.frame;
    s.disparity = r.disparity;
    s.entropy = r.entropy;
    s.estimable = r.estimable;
    s.truth = o.degenerate ? GroundTruthMotion::Unobservable
                           : (o.moving ? GroundTruthMotion::Moving : GroundTruthMotion::Static);
    out.push_back(s);
  }
  return out;
}

/// Foreground IoU of two masks (nonzero pixels); 1 when both are empty.
inline double foreground_iou(const LabelImage& a, const LabelImage& b) {
  if (a.width() != b.width() || a.height() != b.height()) {
    throw Error(ErrorCode::DimensionMismatch, "masks differ in size");
  }
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool fa = a[i] != 0, fb = b[i] != 0;
    inter += fa && fb;
    uni += fa || fb;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

/// IoU of the region `id_a` in `a` with the region `id_b` in `b`.
inline double region_iou(const LabelImage& a, int id_a, const LabelImage& b, int id_b) {
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool fa = a[i] == id_a, fb = b[i] == id_b;
    inter += fa && fb;
    uni += fa || fb;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

}  // namespace dot

#endif  // DOT_PIPELINE_HPP
