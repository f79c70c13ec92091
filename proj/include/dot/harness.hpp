#ifndef DOT_HARNESS_HPP
#define DOT_HARNESS_HPP

#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dot/errors.hpp"
#include "dot/geometry.hpp"
#include "dot/image.hpp"
#include "dot/image_io.hpp"
#include "dot/motion.hpp"
#include "dot/trajectory_io.hpp"

namespace dot {

// ---------------------------------------------------------------------------
// Procedural texture

/// Smooth value noise (quintic fade) summed over three octaves. Octaves
/// whose lattice spacing falls below 12 pixel footprints fade out (gone
/// below 6), so renders stay smooth at pixel scale and bilinear
/// interpolation of them is accurate. Footprints are measured from the
/// first camera position, never the current one, so the texture does not
/// change with the viewpoint.
struct Texture {
  std::uint64_t seed = 1;
  double scale = 0.5;  // lattice spacing of the coarsest octave, meters
  double base = 128.0;
  double amplitude = 70.0;
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline double lattice_value(std::int64_t ix, std::int64_t iy, std::int64_t iz, std::uint64_t seed) {
  std::uint64_t h = splitmix64(seed ^ static_cast<std::uint64_t>(ix));
  h = splitmix64(h ^ static_cast<std::uint64_t>(iy));
  h = splitmix64(h ^ static_cast<std::uint64_t>(iz));
  return static_cast<double>(h >> 11) * (2.0 / 9007199254740992.0) - 1.0;
}

inline double fade(double t) { return t * t * t * (t * (t * 6.0 - 15.0) + 10.0); }

inline double value_noise(const Eigen::Vector3d& p, std::uint64_t seed) {
  const Eigen::Vector3d f = p.array().floor();
  const auto ix = static_cast<std::int64_t>(f.x()), iy = static_cast<std::int64_t>(f.y()),
             iz = static_cast<std::int64_t>(f.z());
  const double u = fade(p.x() - f.x()), v = fade(p.y() - f.y()), w = fade(p.z() - f.z());
  double acc = 0.0;
  for (int c = 0; c < 8; ++c) {
    const int dx = c & 1, dy = (c >> 1) & 1, dz = (c >> 2) & 1;
    const double weight = (dx ? u : 1 - u) * (dy ? v : 1 - v) * (dz ? w : 1 - w);
    acc += weight * lattice_value(ix + dx, iy + dy, iz + dz, seed);
  }
  return acc;
}

}  // namespace detail

/// Intensity of the solid texture at point `p` (meters, in the surface
/// owner's frame) for a pixel footprint of `footprint` meters. Being a
/// volume texture it is continuous across the faces of a body.
inline double shade(const Texture& tex, const Eigen::Vector3d& p, double footprint) {
  double value = 0.0;
  double spacing = tex.scale;
  double amp = 1.0;
  for (int octave = 0; octave < 3; ++octave) {
    const double ratio = spacing / std::max(footprint, 1e-9);
    const double weight = std::clamp((ratio - 6.0) / 6.0, 0.0, 1.0);
    if (weight > 0.0) {
      value += amp * weight * detail::value_noise(p / spacing, tex.seed + 7919ULL * octave);
    }
    spacing *= 0.5;
    amp *= 0.5;
  }
  return tex.base + tex.amplitude * value / 1.75;
}

// ---------------------------------------------------------------------------
// Scene description

/// Planar rectangle origin + s * edge_u + t * edge_v, s, t in [0, 1].
struct Quad {
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  Eigen::Vector3d edge_u = Eigen::Vector3d::UnitX();
  Eigen::Vector3d edge_v = Eigen::Vector3d::UnitY();
  Texture texture;
  std::uint16_t label = 0;
};

enum class ShapeKind { Cuboid, Plane };

struct ObjectSpec {
  ShapeKind shape = ShapeKind::Cuboid;
  Eigen::Vector3d size = {0.3, 0.25, 0.4};
  // Object-to-world pose per frame.
  std::vector<SE3Pose> trajectory;
  bool moving = false;
  // Motion that the image cannot reveal (used as a ground-truth class when
  // calibrating and checking the classifier).
  bool degenerate = false;
  Texture texture;
};

/// Axis-aligned room around the camera start; faces look inwards.
struct BackgroundSpec {
  double half_width = 1.35;
  double floor_y = 0.4;
  double ceiling_y = -0.85;
  double near_z = -0.7;
  double far_z = 3.7;
  Texture texture{101, 0.4, 120.0, 90.0};
};

struct SceneSpec {
  CameraModel cam{260.0, 260.0, 159.5, 119.5, 320, 240};
  int frames = 10;
  // Camera-to-world pose per frame (x right, y down, z forward).
  std::vector<SE3Pose> camera_trajectory;
  std::vector<ObjectSpec> objects;
  BackgroundSpec background;
  double noise_sigma = 0.0;
  int mask_every = 1;
  std::uint64_t seed = 0;
  double frame_interval = 0.1;

  void validate() const {
    auto fail = [](const std::string& m) { throw Error(ErrorCode::SpecInvalid, m); };
    if (frames < 1) fail("frames must be >= 1");
    if (mask_every < 1) fail("mask_every must be >= 1");
    if (cam.width < 8 || cam.height < 8 || !(cam.fx > 0) || !(cam.fy > 0)) fail("bad intrinsics");
    if (static_cast<int>(camera_trajectory.size()) != frames) fail("camera trajectory length");
    for (std::size_t i = 0; i < objects.size(); ++i) {
      if (static_cast<int>(objects[i].trajectory.size()) != frames) {
        fail("object " + std::to_string(i + 1) + " trajectory length");
      }
      if ((objects[i].size.array() <= 0.0).any()) fail("object size must be positive");
    }
    if (objects.size() > 0xfff0) fail("too many objects");
    if (!(noise_sigma >= 0.0)) fail("noise_sigma must be >= 0");
  }
};

/// Per-frame constant velocity: translation in world coordinates, rotation
/// about the body axes. Optional lateral sway a * sin(w k) along world x.
struct MotionSpec {
  Eigen::Vector3d linear = Eigen::Vector3d::Zero();
  Eigen::Vector3d angular = Eigen::Vector3d::Zero();
  double sway_amplitude = 0.0;
  double sway_frequency = 0.0;
};

inline std::vector<SE3Pose> make_trajectory(const SE3Pose& start, const MotionSpec& motion, int frames) {
  std::vector<SE3Pose> out;
  out.reserve(static_cast<std::size_t>(frames));
  for (int k = 0; k < frames; ++k) {
    TangentVector rot = TangentVector::Zero();
    rot.tail<3>() = motion.angular * k;
    const Eigen::Matrix3d r = start.rotation() * se3_exp(rot).rotation();
    Eigen::Vector3d t = start.translation() + motion.linear * k;
    t.x() += motion.sway_amplitude * std::sin(motion.sway_frequency * k);
    out.emplace_back(r, t);
  }
  return out;
}

inline std::vector<Quad> object_faces(const ObjectSpec& obj, std::uint16_t label) {
  const Eigen::Vector3d h = 0.5 * obj.size;
  std::vector<Quad> faces;
  auto face = [&](Eigen::Vector3d o, Eigen::Vector3d u, Eigen::Vector3d v) {
    faces.push_back({o, u, v, obj.texture, label});
  };
  if (obj.shape == ShapeKind::Plane) {
    face({-h.x(), -h.y(), 0.0}, {obj.size.x(), 0, 0}, {0, obj.size.y(), 0});
    return faces;
  }
  const double sx = obj.size.x(), sy = obj.size.y(), sz = obj.size.z();
  face({-h.x(), -h.y(), -h.z()}, {sx, 0, 0}, {0, sy, 0});  // front (-z)
  face({-h.x(), -h.y(), h.z()}, {sx, 0, 0}, {0, sy, 0});   // back (+z)
  face({-h.x(), -h.y(), -h.z()}, {0, 0, sz}, {0, sy, 0});  // left (-x)
  face({h.x(), -h.y(), -h.z()}, {0, 0, sz}, {0, sy, 0});   // right (+x)
  face({-h.x(), -h.y(), -h.z()}, {sx, 0, 0}, {0, 0, sz});  // top (-y)
  face({-h.x(), h.y(), -h.z()}, {sx, 0, 0}, {0, 0, sz});   // bottom (+y)
  return faces;
}

inline std::vector<Quad> background_faces(const BackgroundSpec& bg) {
  const double w = 2.0 * bg.half_width;
  const double hgt = bg.floor_y - bg.ceiling_y;
  const double d = bg.far_z - bg.near_z;
  std::vector<Quad> faces;
  auto face = [&](Eigen::Vector3d o, Eigen::Vector3d u, Eigen::Vector3d v) {
    faces.push_back({o, u, v, bg.texture, 0});
  };
  face({-bg.half_width, bg.ceiling_y, bg.far_z}, {w, 0, 0}, {0, hgt, 0});          // back wall
  face({-bg.half_width, bg.floor_y, bg.near_z}, {w, 0, 0}, {0, 0, d});             // floor
  face({-bg.half_width, bg.ceiling_y, bg.near_z}, {w, 0, 0}, {0, 0, d});           // ceiling
  face({-bg.half_width, bg.ceiling_y, bg.near_z}, {0, 0, d}, {0, hgt, 0});         // left
  face({bg.half_width, bg.ceiling_y, bg.near_z}, {0, 0, d}, {0, hgt, 0});          // right
  return faces;
}

// ---------------------------------------------------------------------------
// Rendering

struct RenderedFrame {
  IntensityImage intensity;  // integer-valued gray levels in [0, 255]
  DepthImage depth;          // meters, 0 where nothing was hit
  LabelImage labels;         // object index + 1, 0 for background
};

namespace detail {

struct WorldQuad {
  Eigen::Vector3d origin, edge_u, edge_v, normal;
  double inv_len_u2, inv_len_v2, len_u, len_v;
  const Quad* source;
  std::uint16_t label;
  // Fixed texture footprint for bodies; <= 0 means distance-based (room).
  double footprint;
};

struct Hit {
  double lambda = std::numeric_limits<double>::infinity();
  int quad = -1;
  double s = 0.0, t = 0.0;
};

inline Hit cast(const std::vector<WorldQuad>& quads, const Eigen::Vector3d& c, const Eigen::Vector3d& d) {
  Hit best;
  for (std::size_t i = 0; i < quads.size(); ++i) {
    const WorldQuad& q = quads[i];
    const double denom = q.normal.dot(d);
    if (std::abs(denom) < 1e-12) continue;
    const double lambda = q.normal.dot(q.origin - c) / denom;
    if (!(lambda > 1e-6) || lambda >= best.lambda) continue;
    const Eigen::Vector3d rel = c + lambda * d - q.origin;
    const double s = rel.dot(q.edge_u) * q.inv_len_u2;
    const double t = rel.dot(q.edge_v) * q.inv_len_v2;
    if (s < 0.0 || s > 1.0 || t < 0.0 || t > 1.0) continue;
    best = {lambda, static_cast<int>(i), s, t};
  }
  return best;
}

inline std::vector<WorldQuad> world_quads(const SceneSpec& spec, int frame,
                                          std::vector<std::vector<Quad>>* storage) {
  storage->clear();
  storage->push_back(background_faces(spec.background));
  for (std::size_t i = 0; i < spec.objects.size(); ++i) {
    storage->push_back(object_faces(spec.objects[i], static_cast<std::uint16_t>(i + 1)));
  }
  std::vector<WorldQuad> out;
  const Eigen::Vector3d c0 = spec.camera_trajectory.front().translation();
  for (std::size_t g = 0; g < storage->size(); ++g) {
    const SE3Pose pose = g == 0 ? SE3Pose::identity() : spec.objects[g - 1].trajectory[static_cast<std::size_t>(frame)];
    const double footprint =
        g == 0 ? 0.0 : (spec.objects[g - 1].trajectory.front().translation() - c0).norm() / spec.cam.fx;
    for (const Quad& q : (*storage)[g]) {
      WorldQuad w;
      w.origin = pose * q.origin;
      w.edge_u = pose.rotation() * q.edge_u;
      w.edge_v = pose.rotation() * q.edge_v;
      w.normal = w.edge_u.cross(w.edge_v).normalized();
      w.len_u = w.edge_u.norm();
      w.len_v = w.edge_v.norm();
      w.inv_len_u2 = 1.0 / (w.len_u * w.len_u);
      w.inv_len_v2 = 1.0 / (w.len_v * w.len_v);
      w.source = &q;
      w.label = q.label;
      w.footprint = footprint;
      out.push_back(w);
    }
  }
  return out;
}

}  // namespace detail

/// Ray-cast render of frame `k`: exact depth and labels from the pixel
/// centre ray, intensity averaged over 2x2 sub-samples, then optional
/// Gaussian noise and rounding to integer gray levels.
inline RenderedFrame render_frame(const SceneSpec& spec, int k) {
  spec.validate();
  if (k < 0 || k >= spec.frames) {
    throw Error(ErrorCode::SpecInvalid, "frame index out of range");
  }
  std::vector<std::vector<Quad>> storage;
  const auto quads = detail::world_quads(spec, k, &storage);
  const SE3Pose& twc = spec.camera_trajectory[static_cast<std::size_t>(k)];
  const CameraModel& cam = spec.cam;
  const Eigen::Vector3d c = twc.translation();
  const Eigen::Vector3d c0 = spec.camera_trajectory.front().translation();

  RenderedFrame out{IntensityImage(cam.width, cam.height), DepthImage(cam.width, cam.height),
                    LabelImage(cam.width, cam.height)};
  std::mt19937_64 rng(detail::splitmix64(spec.seed * 1000003ULL + static_cast<std::uint64_t>(k)));
  std::normal_distribution<double> noise(0.0, spec.noise_sigma > 0.0 ? spec.noise_sigma : 1.0);

  static constexpr double kSub[4][2] = {{-0.25, -0.25}, {0.25, -0.25}, {-0.25, 0.25}, {0.25, 0.25}};
  for (int v = 0; v < cam.height; ++v) {
    for (int u = 0; u < cam.width; ++u) {
      const Eigen::Vector3d dc((u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0);
      const detail::Hit centre = detail::cast(quads, c, twc.rotation() * dc);
      if (centre.quad >= 0) {
        out.depth(u, v) = centre.lambda;
        out.labels(u, v) = quads[static_cast<std::size_t>(centre.quad)].label;
      }
      double sum = 0.0;
      for (const auto& off : kSub) {
        const Eigen::Vector3d ds((u + off[0] - cam.cx) / cam.fx, (v + off[1] - cam.cy) / cam.fy, 1.0);
        const Eigen::Vector3d dw = twc.rotation() * ds;
        const detail::Hit hit = detail::cast(quads, c, dw);
        if (hit.quad < 0) continue;
        const detail::WorldQuad& q = quads[static_cast<std::size_t>(hit.quad)];
        const Quad& src = *q.source;
        const Eigen::Vector3d local = src.origin + hit.s * src.edge_u + hit.t * src.edge_v;
        const double footprint = q.footprint > 0.0 ? q.footprint : (local - c0).norm() / cam.fx;
        sum += shade(src.texture, local, footprint);
      }
      double value = 0.25 * sum;
      if (spec.noise_sigma > 0.0) value += noise(rng);
      out.intensity(u, v) = std::clamp(std::round(value), 0.0, 255.0);
    }
  }
  return out;
}

inline std::vector<RenderedFrame> render(const SceneSpec& spec) {
  spec.validate();
  std::vector<RenderedFrame> frames;
  frames.reserve(static_cast<std::size_t>(spec.frames));
  for (int k = 0; k < spec.frames; ++k) frames.push_back(render_frame(spec, k));
  return frames;
}

inline Frame to_frame(const RenderedFrame& r, double timestamp) {
  Frame f;
  f.intensity = r.intensity;
  f.depth = r.depth;
  f.timestamp = timestamp;
  return f;
}

/// Ground-truth reference-to-current motions between frames j and i:
/// camera T_c and, for object `o` (0-based), T_o in reference coordinates.
inline SE3Pose gt_camera_motion(const SceneSpec& spec, int j, int i) {
  return spec.camera_trajectory[static_cast<std::size_t>(i)].inverse() *
         spec.camera_trajectory[static_cast<std::size_t>(j)];
}

inline SE3Pose gt_object_motion(const SceneSpec& spec, std::size_t o, int j, int i) {
  const SE3Pose& twj = spec.camera_trajectory[static_cast<std::size_t>(j)];
  const auto& traj = spec.objects[o].trajectory;
  const SE3Pose world = traj[static_cast<std::size_t>(i)] * traj[static_cast<std::size_t>(j)].inverse();
  return twj.inverse() * world * twj;
}

// ---------------------------------------------------------------------------
// Scene presets (desk scale: bodies of a few decimetres at 1-3 m)

inline SceneSpec base_scene(int frames, std::uint64_t seed) {
  SceneSpec s;
  s.frames = frames;
  s.seed = seed;
  s.background.texture.seed = 101 + seed;
  return s;
}

inline ObjectSpec make_object(const Eigen::Vector3d& centre, const Eigen::Vector3d& size,
                              const MotionSpec& motion, int frames, std::uint64_t tex_seed) {
  ObjectSpec o;
  o.size = size;
  o.trajectory = make_trajectory(SE3Pose(Eigen::Matrix3d::Identity(), centre), motion, frames);
  o.moving = motion.linear.norm() > 0.0 || motion.angular.norm() > 0.0;
  o.texture = Texture{tex_seed, 0.17, 130.0, 95.0};
  return o;
}

/// Camera moving forward with a gentle lateral sway.
inline std::vector<SE3Pose> forward_camera(int frames, double speed = 0.013, double sway = 0.017) {
  MotionSpec m;
  m.linear = {0.0, 0.0, speed};
  m.sway_amplitude = sway;
  m.sway_frequency = 0.35;
  return make_trajectory(SE3Pose::identity(), m, frames);
}

/// Centre of a cuboid of `size` resting on the floor at (x, z).
inline Eigen::Vector3d on_floor(const BackgroundSpec& bg, double x, double z, const Eigen::Vector3d& size) {
  return {x, bg.floor_y - 0.5 * size.y(), z};
}

inline SceneSpec make_static_scene(int frames = 10, std::uint64_t seed = 0) {
  SceneSpec s = base_scene(frames, seed);
  s.camera_trajectory = forward_camera(frames);
  const Eigen::Vector3d size(0.3, 0.25, 0.35);
  const double xs[3] = {-0.45, 0.07, 0.5};
  const double zs[3] = {1.5, 1.85, 1.35};
  for (int i = 0; i < 3; ++i) {
    s.objects.push_back(make_object(on_floor(s.background, xs[i], zs[i], size), size, {}, frames,
                                    1000 + seed * 10 + static_cast<std::uint64_t>(i)));
  }
  return s;
}

inline SceneSpec make_parked_cars_scene(int frames = 30, std::uint64_t seed = 0) {
  SceneSpec s = base_scene(frames, seed);
  s.camera_trajectory = forward_camera(frames);
  s.mask_every = 4;
  const Eigen::Vector3d size(0.33, 0.24, 0.47);
  const double xs[4] = {-0.63, -0.57, 0.6, 0.53};
  const double zs[4] = {1.4, 2.2, 1.6, 2.4};
  for (int i = 0; i < 4; ++i) {
    s.objects.push_back(make_object(on_floor(s.background, xs[i], zs[i], size), size, {}, frames,
                                    2000 + seed * 10 + static_cast<std::uint64_t>(i)));
  }
  return s;
}

/// Three cuboids driving in convoy across the view, each at the same image
/// speed (about 3.2 px per frame at its starting depth), so that none
/// overtakes or occludes another.
inline SceneSpec make_all_moving_scene(int frames = 30, std::uint64_t seed = 0) {
  SceneSpec s = base_scene(frames, seed);
  s.camera_trajectory = forward_camera(frames);
  s.mask_every = 4;
  const Eigen::Vector3d size(0.33, 0.24, 0.47);
  const double zs[3] = {1.4, 1.75, 2.1};
  const double image_x[3] = {-110.0, -40.0, 10.0};
  const double image_speed = 3.2;
  for (int i = 0; i < 3; ++i) {
    MotionSpec m;
    m.linear = {image_speed * zs[i] / s.cam.fx, 0.0, 0.0};
    const double x = image_x[i] * zs[i] / s.cam.fx;
    s.objects.push_back(make_object(on_floor(s.background, x, zs[i], size), size, m, frames,
                                    3000 + seed * 10 + static_cast<std::uint64_t>(i)));
  }
  return s;
}

/// Near object passing in front of a far one moving the other way.
inline SceneSpec make_crossing_scene(int frames = 24, std::uint64_t seed = 0) {
  SceneSpec s = base_scene(frames, seed);
  s.camera_trajectory = forward_camera(frames, 0.007, 0.007);
  s.mask_every = 4;
  const Eigen::Vector3d near_size(0.27, 0.2, 0.27);
  const Eigen::Vector3d far_size(0.4, 0.33, 0.4);
  MotionSpec near_motion, far_motion;
  near_motion.linear = {0.023, 0.0, 0.0};
  far_motion.linear = {-0.02, 0.0, 0.0};
  s.objects.push_back(make_object(on_floor(s.background, -0.28, 1.2, near_size), near_size, near_motion,
                                  frames, 4000 + seed * 10));
  s.objects.push_back(make_object(on_floor(s.background, 0.37, 2.17, far_size), far_size, far_motion,
                                  frames, 4001 + seed * 10));
  return s;
}

/// Randomised calibration / evaluation scene: four cuboids in separate depth
/// lanes, each moving laterally with probability 1/2, plus optionally one
/// small, low-contrast far object riding along the optical axis at the
/// camera's speed, above the floor objects so that they never occlude it.
inline SceneSpec make_suite_scene(std::uint64_t seed, int frames = 16, double noise_sigma = 2.0,
                                  bool with_degenerate = true) {
  SceneSpec s = base_scene(frames, seed);
  const double speed = 0.013;
  s.camera_trajectory = forward_camera(frames, speed, 0.013);
  s.noise_sigma = noise_sigma;
  s.mask_every = 4;
  std::mt19937_64 rng(detail::splitmix64(seed + 17));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> lanes = {1.2, 1.53, 1.87, 2.2};
  std::shuffle(lanes.begin(), lanes.end(), rng);
  for (int i = 0; i < 4; ++i) {
    const Eigen::Vector3d size(0.27 + 0.13 * unit(rng), 0.2 + 0.1 * unit(rng), 0.23);
    const double z = lanes[static_cast<std::size_t>(i)];
    const double half_fov = 0.5 * s.cam.width / s.cam.fx * z;
    const double x = (unit(rng) * 2.0 - 1.0) * 0.55 * half_fov;
    MotionSpec m;
    if (unit(rng) < 0.5) {
      const double v = 0.02 + 0.015 * unit(rng);
      m.linear = {x > 0.0 ? -v : v, 0.0, 0.0};
    }
    s.objects.push_back(make_object(on_floor(s.background, x, z, size), size, m, frames,
                                    5000 + seed * 10 + static_cast<std::uint64_t>(i)));
  }
  if (with_degenerate) {
    const Eigen::Vector3d size(0.15, 0.15, 0.15);
    MotionSpec m;
    m.linear = {0.0, 0.0, speed};
    ObjectSpec o = make_object({0.0, -0.15, 2.87}, size, m, frames, 5900 + seed);
    o.texture.amplitude = 55.0;
    o.degenerate = true;
    s.objects.push_back(o);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Dataset files

inline constexpr double kDepthScale = 5000.0;

inline std::vector<int> mask_frames_for(int frames, int mask_every) {
  std::vector<int> out;
  for (int k = 0; k < frames; k += mask_every) out.push_back(k);
  return out;
}

inline nlohmann::json manifest_json(const SceneSpec& spec) {
  nlohmann::json j;
  j["width"] = spec.cam.width;
  j["height"] = spec.cam.height;
  j["fx"] = spec.cam.fx;
  j["fy"] = spec.cam.fy;
  j["cx"] = spec.cam.cx;
  j["cy"] = spec.cam.cy;
  j["frames"] = spec.frames;
  j["frame_interval"] = spec.frame_interval;
  j["mask_every"] = spec.mask_every;
  j["mask_frames"] = mask_frames_for(spec.frames, spec.mask_every);
  j["noise_sigma"] = spec.noise_sigma;
  j["depth_scale"] = kDepthScale;
  j["seed"] = spec.seed;
  nlohmann::json objs = nlohmann::json::array();
  for (std::size_t i = 0; i < spec.objects.size(); ++i) {
    objs.push_back({{"id", i + 1},
                    {"moving", spec.objects[i].moving},
                    {"degenerate", spec.objects[i].degenerate}});
  }
  j["objects"] = objs;
  return j;
}

inline LabelImage encode_depth(const DepthImage& depth) {
  LabelImage out(depth.width(), depth.height(), 0);
  for (std::size_t i = 0; i < depth.size(); ++i) {
    const double units = std::round(depth[i] * kDepthScale);
    out[i] = (depth[i] > 0.0 && units <= 65535.0) ? static_cast<std::uint16_t>(units) : 0;
  }
  return out;
}

inline DepthImage decode_depth(const LabelImage& raw, double scale = kDepthScale) {
  DepthImage out(raw.width(), raw.height(), 0.0);
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = raw[i] / scale;
  return out;
}

inline ByteImage to_bytes(const IntensityImage& img) {
  ByteImage out(img.width(), img.height(), 0);
  for (std::size_t i = 0; i < img.size(); ++i) {
    out[i] = static_cast<std::uint8_t>(std::clamp(std::round(img[i]), 0.0, 255.0));
  }
  return out;
}

/// Writes rgb/, depth/, gt_masks/, ground-truth trajectories and
/// manifest.json under `dir`.
inline void write_dataset(const SceneSpec& spec, const std::filesystem::path& dir) {
  spec.validate();
  namespace fs = std::filesystem;
  for (const char* sub : {"rgb", "depth", "gt_masks"}) fs::create_directories(dir / sub);
  Trajectory cam_traj;
  std::vector<Trajectory> obj_traj(spec.objects.size());
  for (int k = 0; k < spec.frames; ++k) {
    const RenderedFrame r = render_frame(spec, k);
    const std::string name = std::to_string(k) + ".png";
    write_png(dir / "rgb" / name, to_bytes(r.intensity));
    write_png(dir / "depth" / name, encode_depth(r.depth));
    write_png(dir / "gt_masks" / name, r.labels);
    const double t = k * spec.frame_interval;
    cam_traj.push_back({t, spec.camera_trajectory[static_cast<std::size_t>(k)]});
    for (std::size_t o = 0; o < spec.objects.size(); ++o) {
      obj_traj[o].push_back({t, spec.objects[o].trajectory[static_cast<std::size_t>(k)]});
    }
  }
  write_tum(dir / "gt_traj_camera.txt", cam_traj);
  for (std::size_t o = 0; o < spec.objects.size(); ++o) {
    write_tum(dir / ("gt_traj_obj_" + std::to_string(o + 1) + ".txt"), obj_traj[o]);
  }
  std::ofstream(dir / "manifest.json") << manifest_json(spec).dump(2) << '\n';
}

struct ObjectInfo {
  int id = 0;
  bool moving = false;
  bool degenerate = false;
};

/// A dataset directory as written by write_dataset.
struct Dataset {
  std::filesystem::path root;
  CameraModel cam;
  int frames = 0;
  double frame_interval = 0.1;
  double depth_scale = kDepthScale;
  int mask_every = 1;
  std::vector<int> mask_frames;
  std::vector<ObjectInfo> objects;

  static Dataset open(const std::filesystem::path& root) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(root)) {
      throw Error(ErrorCode::ConfigError, "dataset directory " + root.string() + " does not exist");
    }
    for (const char* sub : {"rgb", "depth"}) {
      if (!fs::is_directory(root / sub)) {
        throw Error(ErrorCode::ConfigError, "dataset is missing " + (root / sub).string());
      }
    }
    std::ifstream in(root / "manifest.json");
    if (!in) throw Error(ErrorCode::ConfigError, "dataset has no manifest.json");
    nlohmann::json j;
    try {
      in >> j;
      Dataset d;
      d.root = root;
      d.cam = {j.at("fx").get<double>(), j.at("fy").get<double>(), j.at("cx").get<double>(),
               j.at("cy").get<double>(), j.at("width").get<int>(), j.at("height").get<int>()};
      d.frames = j.at("frames").get<int>();
      d.frame_interval = j.value("frame_interval", 0.1);
      d.depth_scale = j.value("depth_scale", kDepthScale);
      d.mask_every = j.value("mask_every", 1);
      d.mask_frames = j.contains("mask_frames") ? j["mask_frames"].get<std::vector<int>>()
                                                : mask_frames_for(d.frames, d.mask_every);
      if (j.contains("objects")) {
        for (const auto& o : j["objects"]) {
          d.objects.push_back({o.at("id").get<int>(), o.value("moving", false), o.value("degenerate", false)});
        }
      }
      return d;
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::ConfigError, std::string("bad manifest: ") + e.what());
    }
  }

  std::filesystem::path file(const char* sub, int k) const {
    return root / sub / (std::to_string(k) + ".png");
  }

  Frame load_frame(int k) const {
    const ByteImage gray = read_png_u8(file("rgb", k));
    const LabelImage raw_depth = read_png_u16(file("depth", k));
    if (gray.width() != cam.width || gray.height() != cam.height || raw_depth.width() != cam.width ||
        raw_depth.height() != cam.height) {
      throw Error(ErrorCode::DimensionMismatch, "frame " + std::to_string(k) + " size differs from manifest");
    }
    Frame f;
    f.intensity = IntensityImage(gray.width(), gray.height());
    for (std::size_t i = 0; i < gray.size(); ++i) f.intensity[i] = gray[i];
    f.depth = decode_depth(raw_depth, depth_scale);
    f.timestamp = k * frame_interval;
    return f;
  }

  LabelImage load_gt_mask(int k) const { return read_png_u16(file("gt_masks", k)); }

  Trajectory gt_camera() const { return read_tum(root / "gt_traj_camera.txt"); }
  Trajectory gt_object(int id) const {
    return read_tum(root / ("gt_traj_obj_" + std::to_string(id) + ".txt"));
  }
};

// ---------------------------------------------------------------------------
// Scene spec files

namespace detail {

inline Eigen::Vector3d vec3(const nlohmann::json& j, const char* key, const Eigen::Vector3d& fallback) {
  if (!j.contains(key)) return fallback;
  const auto v = j.at(key).get<std::vector<double>>();
  if (v.size() != 3) throw Error(ErrorCode::SpecInvalid, std::string(key) + " needs 3 values");
  return {v[0], v[1], v[2]};
}

inline MotionSpec motion_from_json(const nlohmann::json& j) {
  MotionSpec m;
  if (j.is_null()) return m;
  m.linear = vec3(j, "linear", m.linear);
  m.angular = vec3(j, "angular", m.angular);
  m.sway_amplitude = j.value("sway_amplitude", 0.0);
  m.sway_frequency = j.value("sway_frequency", 0.0);
  return m;
}

inline SE3Pose pose_from_json(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 7) throw Error(ErrorCode::SpecInvalid, "explicit poses are [tx,ty,tz,qx,qy,qz,qw]");
  return SE3Pose::from_quaternion(Eigen::Quaterniond(v[6], v[3], v[4], v[5]), {v[0], v[1], v[2]});
}

}  // namespace detail

/// Scene spec file: either {"preset": name, "frames": n, "seed": s, ...}
/// or an explicit description with camera/objects motions.
inline SceneSpec scene_from_json(const nlohmann::json& j) {
  try {
    const int frames = j.value("frames", 10);
    const std::uint64_t seed = j.value("seed", std::uint64_t{0});
    SceneSpec s;
    if (j.contains("preset")) {
      const std::string p = j["preset"].get<std::string>();
      if (p == "static") s = make_static_scene(frames, seed);
      else if (p == "parked_cars") s = make_parked_cars_scene(frames, seed);
      else if (p == "all_moving") s = make_all_moving_scene(frames, seed);
      else if (p == "crossing") s = make_crossing_scene(frames, seed);
      else if (p == "suite") s = make_suite_scene(seed, frames, j.value("noise_sigma", 2.0), j.value("degenerate", true));
      else throw Error(ErrorCode::SpecInvalid, "unknown preset " + p);
    } else {
      s = base_scene(frames, seed);
      if (j.contains("camera")) {
        const auto& c = j["camera"];
        s.cam = {c.value("fx", s.cam.fx), c.value("fy", s.cam.fy), c.value("cx", s.cam.cx),
                 c.value("cy", s.cam.cy), c.value("width", s.cam.width), c.value("height", s.cam.height)};
      }
      if (j.contains("camera_trajectory")) {
        for (const auto& p : j["camera_trajectory"]) s.camera_trajectory.push_back(detail::pose_from_json(p));
      } else {
        s.camera_trajectory = make_trajectory(SE3Pose::identity(),
                                              detail::motion_from_json(j.value("camera_motion", nlohmann::json())),
                                              frames);
      }
      if (j.contains("background")) {
        const auto& b = j["background"];
        s.background.half_width = b.value("half_width", s.background.half_width);
        s.background.floor_y = b.value("floor_y", s.background.floor_y);
        s.background.ceiling_y = b.value("ceiling_y", s.background.ceiling_y);
        s.background.near_z = b.value("near_z", s.background.near_z);
        s.background.far_z = b.value("far_z", s.background.far_z);
        s.background.texture.scale = b.value("texture_scale", s.background.texture.scale);
      }
      std::uint64_t tex = 7000 + seed * 10;
      for (const auto& o : j.value("objects", nlohmann::json::array())) {
        const Eigen::Vector3d size = detail::vec3(o, "size", {0.3, 0.25, 0.4});
        const Eigen::Vector3d centre = detail::vec3(o, "position", {0.0, 0.0, 1.5});
        ObjectSpec obj;
        if (o.contains("trajectory")) {
          obj = make_object(centre, size, {}, frames, tex);
          obj.trajectory.clear();
          for (const auto& p : o["trajectory"]) obj.trajectory.push_back(detail::pose_from_json(p));
        } else {
          obj = make_object(centre, size, detail::motion_from_json(o.value("motion", nlohmann::json())), frames, tex);
        }
        obj.shape = o.value("shape", std::string("cuboid")) == "plane" ? ShapeKind::Plane : ShapeKind::Cuboid;
        obj.moving = o.value("moving", obj.moving);
        obj.degenerate = o.value("degenerate", false);
        obj.texture.seed = o.value("texture_seed", tex);
        obj.texture.scale = o.value("texture_scale", obj.texture.scale);
        s.objects.push_back(obj);
        ++tex;
      }
    }
    s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
    s.mask_every = j.value("mask_every", s.mask_every);
    s.frame_interval = j.value("frame_interval", s.frame_interval);
    s.validate();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::SpecInvalid, e.what());
  }
}

// ---------------------------------------------------------------------------
// Threshold calibration

enum class GroundTruthMotion { Moving = 0, Static = 1, Unobservable = 2 };

/// One classification opportunity: an object tracked into one frame.
struct CalibrationSample {
  int sequence = 0;
  int track = 0;
  int frame = 0;
  double disparity = 0.0;
  double entropy = 0.0;
  // False when the motion could not be estimated (singular, lost).
  bool estimable = true;
  GroundTruthMotion truth = GroundTruthMotion::Static;
};

/// Rows: truth (Moving, Static, Unobservable); columns: predicted
/// (InMotion, Static, NotObserved).
using Confusion = std::array<std::array<int, 3>, 3>;

struct CalibrationResult {
  MotionThresholds thresholds;
  double balanced_accuracy = 0.0;
  Confusion confusion{};
};

struct SweepGrid {
  std::vector<double> h_min;
  std::vector<double> delta_base = {0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 2.0, 2.5, 3.0, 4.0};
  std::vector<double> delta_slope = {0.0, 0.05, 0.1, 0.2, 0.35, 0.5, 1.0};
  int hysteresis_frames = 2;
};

inline int predicted_column(MotionState s) {
  switch (s) {
    case MotionState::InMotion: return 0;
    case MotionState::Static: return 1;
    case MotionState::NotObserved: return 2;
  }
  return 2;
}

/// Replays every track's samples in frame order through classify with
/// hysteresis, as the pipeline does, and tallies the verdicts.
inline Confusion evaluate_thresholds(std::span<const CalibrationSample> samples, const MotionThresholds& th) {
  std::vector<const CalibrationSample*> ordered;
  ordered.reserve(samples.size());
  for (const auto& s : samples) ordered.push_back(&s);
  std::stable_sort(ordered.begin(), ordered.end(), [](const auto* a, const auto* b) {
    return std::tie(a->sequence, a->track, a->frame) < std::tie(b->sequence, b->track, b->frame);
  });
  Confusion c{};
  StateMemory mem;
  std::pair<int, int> current{-1, -1};
  for (const auto* s : ordered) {
    if (std::pair{s->sequence, s->track} != current) {
      current = {s->sequence, s->track};
      mem = StateMemory{};
    }
    const MotionState verdict = s->estimable ? classify(s->disparity, s->entropy, th, mem.state, mem.age)
                                             : classify_unobservable(th, mem.state, mem.age);
    mem.update(verdict);
    ++c[static_cast<std::size_t>(s->truth)][static_cast<std::size_t>(predicted_column(verdict))];
  }
  return c;
}

/// Mean per-class recall over the ground-truth classes present.
inline double balanced_accuracy(const Confusion& c) {
  double sum = 0.0;
  int classes = 0;
  for (std::size_t t = 0; t < 3; ++t) {
    const int total = c[t][0] + c[t][1] + c[t][2];
    if (total == 0) continue;
    sum += static_cast<double>(c[t][t]) / total;
    ++classes;
  }
  return classes ? sum / classes : 0.0;
}

/// Candidate h_min values: midpoints between consecutive entropy quantiles.
inline std::vector<double> entropy_grid(std::span<const CalibrationSample> samples, int quantiles = 40) {
  std::vector<double> h;
  for (const auto& s : samples) {
    if (s.estimable && std::isfinite(s.entropy)) h.push_back(s.entropy);
  }
  if (h.empty()) return {0.0};
  std::sort(h.begin(), h.end());
  std::vector<double> grid = {h.front() - 1.0};
  for (int q = 1; q < quantiles; ++q) {
    const std::size_t i = static_cast<std::size_t>(static_cast<double>(q) / quantiles * (h.size() - 1));
    grid.push_back(0.5 * (h[i] + h[std::min(i + 1, h.size() - 1)]));
  }
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  return grid;
}

/// Exhaustive sweep maximising balanced accuracy. Grids are visited in
/// ascending order (h_min, delta_base, delta_slope) and a candidate only
/// replaces the incumbent when strictly better, so ties resolve to the
/// smallest values.
inline CalibrationResult calibrate_thresholds(std::span<const CalibrationSample> samples, SweepGrid grid) {
  if (grid.h_min.empty()) grid.h_min = entropy_grid(samples);
  for (auto* g : {&grid.h_min, &grid.delta_base, &grid.delta_slope}) std::sort(g->begin(), g->end());
  CalibrationResult best;
  bool first = true;
  for (double h : grid.h_min) {
    for (double base : grid.delta_base) {
      for (double slope : grid.delta_slope) {
        const MotionThresholds th{h, base, slope, grid.hysteresis_frames};
        const Confusion c = evaluate_thresholds(samples, th);
        const double ba = balanced_accuracy(c);
        if (first || ba > best.balanced_accuracy) {
          best = {th, ba, c};
          first = false;
        }
      }
    }
  }
  return best;
}

}  // namespace dot

#endif  // DOT_HARNESS_HPP
