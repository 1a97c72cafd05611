#pragma once

// Synthetic stereo scenes with known ground truth.
//
// World frame follows the camera convention (x right, y down, z forward).
// A stereo rig drives forward with a slow yaw; background points are static;
// each object is a box-shaped point cloud moving rigidly. Rendering produces
// label rasters, analytically exact flow fields, and object/background
// reconstructions with configurable noise, gauge and scale perturbation.

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "stereo_traj/errors.hpp"
#include "stereo_traj/flow.hpp"
#include "stereo_traj/geometry.hpp"
#include "stereo_traj/mask.hpp"
#include "stereo_traj/recon.hpp"
#include "stereo_traj/trajectory.hpp"

namespace stereo_traj {

enum class MotionFamily { linear, arc, piecewise };

inline const char* to_string(MotionFamily m) {
  switch (m) {
    case MotionFamily::linear: return "linear";
    case MotionFamily::arc: return "arc";
    case MotionFamily::piecewise: return "piecewise";
  }
  return "?";
}

inline MotionFamily motion_family_from_string(const std::string& s) {
  if (s == "linear") return MotionFamily::linear;
  if (s == "arc") return MotionFamily::arc;
  if (s == "piecewise") return MotionFamily::piecewise;
  throw ParseError("unknown motion family '" + s + "'");
}

/// Motion of one object. Positions are world coordinates of the object
/// origin (its point centroid) at frame 0.
struct ObjectMotionConfig {
  MotionFamily family = MotionFamily::linear;
  Eigen::Vector3d start{2.0, 0.5, 12.0};
  Eigen::Vector3d velocity{-0.15, 0.0, 0.4};  // per frame (linear, piecewise)
  double turn_angle = 0.5;                    // rad, applied halfway (piecewise)
  int turn_frames = 5;                        // heading catches up over this many frames
  double arc_radius = 8.0;
  double arc_rate = 0.04;                     // rad per frame
  Eigen::Vector3d size{1.8, 1.4, 4.2};        // box extents (x, y, z)
};

struct SceneConfig {
  int frames = 12;
  int width = 640;
  int height = 480;
  PinholeIntrinsics intrinsics{500.0, 500.0, 320.0, 240.0};
  double baseline = 0.5;
  double rig_speed = 0.4;      // forward distance per frame
  double rig_yaw_rate = 0.01;  // rad per frame
  int background_points = 120;
  int object_points = 40;
  std::vector<ObjectMotionConfig> objects{ObjectMotionConfig{}};
  int max_attempts = 200;
  double min_depth = 0.5;

  void validate() const {
    if (frames < 2) throw ParseError("scene needs at least 2 frames");
    if (object_points < 4) throw ParseError("scene needs at least 4 object points");
    if (background_points < 8) throw ParseError("scene needs at least 8 background points");
    if (objects.empty()) throw ParseError("scene needs at least one object");
    if (width <= 0 || height <= 0 || !intrinsics.valid() || !(baseline > 0.0)) {
      throw ParseError("invalid camera configuration");
    }
  }
};

struct SceneObject {
  std::vector<Point3> points;         // object frame, centroid at the origin
  Eigen::Vector3d box_center = Eigen::Vector3d::Zero();  // object frame
  Eigen::Vector3d box_half = Eigen::Vector3d::Ones();
  std::vector<RigidTransform> poses;  // object -> world, per frame

  Point3 world_point(int frame, std::size_t j) const { return poses[frame](points[j]); }
};

struct SceneGroundTruth {
  SceneConfig config;
  std::uint64_t seed = 0;
  std::vector<CameraPose> rig;  // left camera per frame
  std::vector<Point3> background;
  std::vector<SceneObject> objects;

  int frames() const { return config.frames; }
  const PinholeIntrinsics& intrinsics() const { return config.intrinsics; }
  RigModel rig_model() const { return RigModel(config.baseline); }

  CameraPose camera(int frame, Side side) const {
    return side == Side::left ? rig[frame] : rig_model().right_from_left(rig[frame]);
  }

  /// Pixel of a world point, or nothing if not visible.
  std::optional<Pixel> observe(int frame, Side side, const Point3& world) const {
    const Point3 pc = world_to_camera(camera(frame, side), world);
    if (pc.z() < config.min_depth) return std::nullopt;
    const Pixel px = project(config.intrinsics, pc);
    if (px.x() < 0.0 || px.y() < 0.0 || px.x() >= config.width || px.y() >= config.height) {
      return std::nullopt;
    }
    return px;
  }

  int stereo_views(const Point3& world_at_frame0, const SceneObject* object, std::size_t j) const {
    int n = 0;
    for (int f = 0; f < frames(); ++f) {
      const Point3 w = object ? object->world_point(f, j) : world_at_frame0;
      n += static_cast<int>(observe(f, Side::left, w).has_value() &&
                            observe(f, Side::right, w).has_value());
    }
    return n;
  }

  double object_path_length(std::size_t k = 0) const {
    double len = 0.0;
    for (int f = 1; f < frames(); ++f) {
      len += (objects[k].poses[f].translation - objects[k].poses[f - 1].translation).norm();
    }
    return len;
  }
};

// ---------------------------------------------------------------------------
// Generation

namespace detail {

inline Rotation yaw(double angle) { return Rotation::about_axis(Eigen::Vector3d::UnitY(), angle); }

// Piecewise motion: the path bends by turn_angle at frame frames/2 and the
// body heading follows over turn_frames frames. Snapping the heading in one
// frame moves the visible surface far more than the silhouette, which no
// flow-based tracker can follow.
inline RigidTransform object_pose_at(const ObjectMotionConfig& m, int frame, int frames) {
  const double i = frame;
  switch (m.family) {
    case MotionFamily::linear:
      return {Rotation(), m.start + m.velocity * i};
    case MotionFamily::arc: {
      // The start position lies on the arc at angle 0; the circle center sits
      // arc_radius to its left in the x-z plane.
      const Eigen::Vector3d center = m.start - Eigen::Vector3d(m.arc_radius, 0.0, 0.0);
      const double a = m.arc_rate * i;
      return {yaw(-a),
              center + m.arc_radius * Eigen::Vector3d(std::cos(a), 0.0, std::sin(a))};
    }
    case MotionFamily::piecewise: {
      const int knee = frames / 2;
      if (frame <= knee) return {Rotation(), m.start + m.velocity * i};
      const Rotation turn = yaw(m.turn_angle);
      const double progress = std::min(1.0, (frame - knee) / std::max(1.0, double(m.turn_frames)));
      return {yaw(m.turn_angle * progress),
              m.start + m.velocity * knee + (turn * m.velocity) * (frame - knee)};
    }
  }
  return {};
}

inline Point3 sample_on_box(std::mt19937_64& rng, const Eigen::Vector3d& half) {
  // Face chosen with probability proportional to its area.
  const double ax = half.y() * half.z(), ay = half.x() * half.z(), az = half.x() * half.y();
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_real_distribution<double> pick(0.0, 2.0 * (ax + ay + az));
  const double r = pick(rng);
  const double sign = u(rng) < 0.0 ? -1.0 : 1.0;
  Point3 p(u(rng) * half.x(), u(rng) * half.y(), u(rng) * half.z());
  if (r < 2.0 * ax) {
    p.x() = sign * half.x();
  } else if (r < 2.0 * (ax + ay)) {
    p.y() = sign * half.y();
  } else {
    p.z() = sign * half.z();
  }
  return p;
}

inline Rotation random_rotation(std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
  q.normalize();
  return Rotation::nearest(q.toRotationMatrix());
}

}  // namespace detail

inline SceneGroundTruth generate_scene(const SceneConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  SceneGroundTruth scene;
  scene.config = config;
  scene.seed = seed;

  Point3 c = Point3::Zero();
  for (int f = 0; f < config.frames; ++f) {
    const Rotation body = detail::yaw(config.rig_yaw_rate * f);
    scene.rig.push_back({body.transpose(), c});
    c += body * Eigen::Vector3d(0.0, 0.0, config.rig_speed);
  }

  for (const auto& m : config.objects) {
    SceneObject obj;
    obj.box_half = 0.5 * m.size;
    for (int f = 0; f < config.frames; ++f) {
      obj.poses.push_back(detail::object_pose_at(m, f, config.frames));
    }
    for (int j = 0; j < config.object_points; ++j) {
      obj.points.push_back(detail::sample_on_box(rng, obj.box_half));
    }
    // Resample points until every one is seen by at least two stereo pairs.
    for (std::size_t j = 0; j < obj.points.size(); ++j) {
      int attempts = 0;
      while (scene.stereo_views(Point3::Zero(), &obj, j) < 2) {
        if (++attempts > config.max_attempts) {
          throw InfeasibleScene("object point cannot be placed in view of 2 stereo pairs");
        }
        obj.points[j] = detail::sample_on_box(rng, obj.box_half);
      }
    }
    Point3 centroid = Point3::Zero();
    for (const auto& p : obj.points) centroid += p;
    centroid /= static_cast<double>(obj.points.size());
    for (auto& p : obj.points) p -= centroid;
    obj.box_center = -centroid;
    scene.objects.push_back(std::move(obj));
  }

  const double z_near = 4.0;
  const double z_far = scene.rig.back().center.z() + 40.0;
  std::uniform_real_distribution<double> ux(-20.0, 20.0), uy(-4.0, 2.0), uz(z_near, z_far);
  for (int k = 0; k < config.background_points; ++k) {
    int attempts = 0;
    Point3 p;
    do {
      if (++attempts > config.max_attempts) {
        throw InfeasibleScene("background point cannot be placed in view of 2 stereo pairs");
      }
      p = Point3(ux(rng), uy(rng), uz(rng));
    } while (scene.stereo_views(p, nullptr, 0) < 2);
    scene.background.push_back(p);
  }
  return scene;
}

// ---------------------------------------------------------------------------
// Rendering

struct NoiseConfig {
  double pixel_sigma = 0.0;        // px, per observation coordinate
  double pose_rot_sigma = 0.0;     // deg, per rotation axis
  double pose_trans_sigma = 0.0;   // fraction of reconstruction extent, per axis
  double point_sigma = 0.0;        // fraction of reconstruction extent, per axis
  double scale_min = 1.0;          // object scale drawn log-uniformly in [min, max]
  double scale_max = 1.0;
  int outlier_camera_count = 0;    // object cameras rotated by 90 degrees
  bool random_gauge = true;        // arbitrary rigid frame per reconstruction
  std::size_t target_object = 0;   // object reconstructed in the object recon

  void validate() const {
    if (pixel_sigma < 0 || pose_rot_sigma < 0 || pose_trans_sigma < 0 || point_sigma < 0 ||
        outlier_camera_count < 0 || !(scale_min > 0) || scale_max < scale_min) {
      throw ParseError("noise parameters must be non-negative with 0 < scale_min <= scale_max");
    }
  }
};

/// Similarity applied to a reconstruction: x' = scale * rotation * x + translation.
struct Similarity {
  double scale = 1.0;
  Rotation rotation;
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Point3 operator()(const Point3& p) const { return scale * (rotation * p) + translation; }
  CameraPose operator()(const CameraPose& pose) const {
    return {pose.rotation * rotation.transpose(), (*this)(pose.center)};
  }
};

struct RenderedReconstructions {
  Reconstruction object;
  Reconstruction background;
  Similarity object_gauge;      // true object frame -> object recon frame
  Similarity background_gauge;  // world -> background recon frame
  std::vector<int> outlier_cameras;
};

struct RenderedImages {
  std::vector<LabelImage> left;   // per frame
  std::vector<LabelImage> right;
  std::vector<FlowField> flow_ln;  // left(i) -> left(i+1), i < frames-1
  std::vector<FlowField> flow_lr;  // left(i) -> right(i)
};

namespace detail {

inline double extent(const std::vector<Point3>& pts) {
  Point3 mean = Point3::Zero();
  for (const auto& p : pts) mean += p;
  mean /= static_cast<double>(pts.size());
  double s = 0.0;
  for (const auto& p : pts) s += (p - mean).squaredNorm();
  return std::sqrt(s / static_cast<double>(pts.size()));
}

// Builds one reconstruction. `camera_in_frame(f, side)` is the true camera
// pose in the reconstruction's true frame; `point(j, f)` the true world
// position of point j at frame f (for observation), `anchor(j)` its position
// in the reconstruction frame.
template <typename CameraFn, typename WorldFn>
Reconstruction build_recon(const SceneGroundTruth& scene, ReconKind kind, std::size_t n_points,
                           CameraFn camera_in_frame, WorldFn world_at,
                           const std::vector<Point3>& anchor, const NoiseConfig& noise,
                           const Similarity& gauge, std::mt19937_64& rng,
                           std::vector<int>* outliers) {
  Reconstruction recon;
  recon.kind = kind;
  std::normal_distribution<double> pix(0.0, 1.0);

  std::vector<Point3> extent_pts = anchor;
  for (int f = 0; f < scene.frames(); ++f) {
    extent_pts.push_back(camera_in_frame(f, Side::left).center);
  }
  const double ext = extent(extent_pts);
  const double rot_sigma = noise.pose_rot_sigma * M_PI / 180.0;

  int next_id = 0;
  for (int f = 0; f < scene.frames(); ++f) {
    for (Side side : {Side::left, Side::right}) {
      CameraPose pose = camera_in_frame(f, side);
      if (rot_sigma > 0.0) {
        const Eigen::Vector3d w(pix(rng) * rot_sigma, pix(rng) * rot_sigma, pix(rng) * rot_sigma);
        pose.rotation = Rotation::exp(w) * pose.rotation;
      }
      if (noise.pose_trans_sigma > 0.0) {
        pose.center += ext * noise.pose_trans_sigma * Eigen::Vector3d(pix(rng), pix(rng), pix(rng));
      }
      recon.cameras.push_back({next_id++, f, side, gauge(pose), scene.intrinsics()});
    }
  }
  if (outliers && noise.outlier_camera_count > 0) {
    std::vector<int> ids(recon.cameras.size());
    std::iota(ids.begin(), ids.end(), 0);
    std::shuffle(ids.begin(), ids.end(), rng);
    for (int k = 0; k < std::min<int>(noise.outlier_camera_count, static_cast<int>(ids.size())); ++k) {
      auto& cam = recon.cameras[ids[k]];
      const Eigen::Vector3d axis(pix(rng), pix(rng), pix(rng));
      cam.pose.rotation = Rotation::about_axis(axis, 0.5 * M_PI) * cam.pose.rotation;
      outliers->push_back(ids[k]);
    }
    std::sort(outliers->begin(), outliers->end());
  }

  for (std::size_t j = 0; j < n_points; ++j) {
    PointRecord p;
    p.id = static_cast<int>(j);
    Point3 initial = anchor[j];
    if (noise.point_sigma > 0.0) {
      initial += ext * noise.point_sigma * Eigen::Vector3d(pix(rng), pix(rng), pix(rng));
    }
    p.position = gauge(initial);
    for (int f = 0; f < scene.frames(); ++f) {
      for (Side side : {Side::left, Side::right}) {
        const auto px = scene.observe(f, side, world_at(j, f));
        if (!px) continue;
        Pixel obs = *px;
        if (noise.pixel_sigma > 0.0) {
          obs += noise.pixel_sigma * Pixel(pix(rng), pix(rng));
        }
        p.observations.push_back({2 * f + (side == Side::left ? 0 : 1), obs});
      }
    }
    if (p.observations.size() >= 2) recon.points.push_back(std::move(p));
  }
  return recon;
}

}  // namespace detail

inline RenderedReconstructions render_reconstructions(const SceneGroundTruth& scene,
                                                      const NoiseConfig& noise,
                                                      std::uint64_t seed) {
  noise.validate();
  if (noise.target_object >= scene.objects.size()) throw ParseError("no such target object");
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  RenderedReconstructions out;

  const double log_lo = std::log(noise.scale_min), log_hi = std::log(noise.scale_max);
  std::uniform_real_distribution<double> uscale(log_lo, log_hi);
  const double s = log_hi > log_lo ? std::exp(uscale(rng)) : noise.scale_min;
  std::normal_distribution<double> n(0.0, 5.0);
  auto random_gauge = [&](double scale) {
    Similarity g;
    g.scale = scale;
    if (noise.random_gauge) {
      g.rotation = detail::random_rotation(rng);
      g.translation = Eigen::Vector3d(n(rng), n(rng), n(rng));
    }
    return g;
  };
  out.object_gauge = random_gauge(s);
  out.background_gauge = random_gauge(1.0);

  const SceneObject& obj = scene.objects[noise.target_object];
  out.object = detail::build_recon(
      scene, ReconKind::object, obj.points.size(),
      [&](int f, Side side) {
        // Camera seen from the object frame.
        const CameraPose cam = scene.camera(f, side);
        const RigidTransform& o = obj.poses[f];
        return CameraPose{cam.rotation * o.rotation,
                          o.rotation.transpose() * (cam.center - o.translation)};
      },
      [&](std::size_t j, int f) { return obj.world_point(f, j); }, obj.points, noise,
      out.object_gauge, rng, &out.outlier_cameras);

  out.background = detail::build_recon(
      scene, ReconKind::background, scene.background.size(),
      [&](int f, Side side) { return scene.camera(f, side); },
      [&](std::size_t j, int) { return scene.background[j]; }, scene.background, noise,
      out.background_gauge, rng, nullptr);
  return out;
}

namespace detail {

inline std::vector<Pixel> convex_hull(std::vector<Pixel> pts) {
  std::sort(pts.begin(), pts.end(), [](const Pixel& a, const Pixel& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  if (pts.size() < 3) return pts;
  auto cross = [](const Pixel& o, const Pixel& a, const Pixel& b) {
    return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
  };
  std::vector<Pixel> hull(2 * pts.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i > 0; --i) {
    while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i - 1]) <= 0) --k;
    hull[k++] = pts[i - 1];
  }
  hull.resize(k - 1);
  return hull;  // counter-clockwise in a y-up sense
}

inline void fill_convex(LabelImage& image, const std::vector<Pixel>& hull, std::uint16_t label) {
  if (hull.size() < 3) return;
  double min_x = 1e300, max_x = -1e300, min_y = 1e300, max_y = -1e300;
  for (const auto& p : hull) {
    min_x = std::min(min_x, p.x());
    max_x = std::max(max_x, p.x());
    min_y = std::min(min_y, p.y());
    max_y = std::max(max_y, p.y());
  }
  const int x0 = std::max(0, static_cast<int>(std::ceil(min_x)));
  const int x1 = std::min(image.width - 1, static_cast<int>(std::floor(max_x)));
  const int y0 = std::max(0, static_cast<int>(std::ceil(min_y)));
  const int y1 = std::min(image.height - 1, static_cast<int>(std::floor(max_y)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      bool inside = true;
      for (std::size_t i = 0; i < hull.size() && inside; ++i) {
        const Pixel& a = hull[i];
        const Pixel& b = hull[(i + 1) % hull.size()];
        inside = (b.x() - a.x()) * (y - a.y()) - (b.y() - a.y()) * (x - a.x()) >= 0.0;
      }
      if (inside) image.at(x, y) = label;
    }
  }
}

// Nearest intersection of a ray with an axis-aligned box (object frame).
inline std::optional<double> ray_box(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir,
                                     const Eigen::Vector3d& center, const Eigen::Vector3d& half) {
  double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    const double lo = center(a) - half(a) - origin(a);
    const double hi = center(a) + half(a) - origin(a);
    if (std::abs(dir(a)) < 1e-15) {
      if (lo > 0.0 || hi < 0.0) return std::nullopt;
      continue;
    }
    double ta = lo / dir(a), tb = hi / dir(a);
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return std::nullopt;
  }
  return t0;
}

}  // namespace detail

/// Label raster for one frame and side: convex hulls of the projected object
/// points, painted far to near so that nearer objects occlude.
inline LabelImage render_labels(const SceneGroundTruth& scene, int frame, Side side) {
  const CameraPose cam = scene.camera(frame, side);
  LabelImage image(scene.config.width, scene.config.height);
  std::vector<std::pair<double, std::size_t>> order;
  for (std::size_t k = 0; k < scene.objects.size(); ++k) {
    const Point3 pc = world_to_camera(cam, scene.objects[k].poses[frame].translation);
    order.emplace_back(pc.z(), k);
  }
  std::sort(order.begin(), order.end(), std::greater<>());
  for (const auto& [depth, k] : order) {
    const SceneObject& obj = scene.objects[k];
    std::vector<Pixel> pts;
    bool in_front = true;
    for (std::size_t j = 0; j < obj.points.size() && in_front; ++j) {
      const Point3 pc = world_to_camera(cam, obj.world_point(frame, j));
      in_front = pc.z() > scene.config.min_depth;
      if (in_front) pts.push_back(project(scene.intrinsics(), pc));
    }
    if (!in_front) continue;
    detail::fill_convex(image, detail::convex_hull(pts), static_cast<std::uint16_t>(k + 1));
  }
  return image;
}

/// Exact flow from (src_frame, src_side) to (dst_frame, dst_side). Object
/// pixels are ray-cast onto the object's box and moved with the object;
/// background pixels use a fronto-parallel plane at the median background
/// depth.
inline FlowField render_flow(const SceneGroundTruth& scene, const LabelImage& labels,
                             int src_frame, Side src_side, int dst_frame, Side dst_side) {
  FlowField flow(scene.config.width, scene.config.height);
  flow.between(src_frame, src_side, dst_frame, dst_side);
  const CameraPose src = scene.camera(src_frame, src_side);
  const CameraPose dst = scene.camera(dst_frame, dst_side);
  const PinholeIntrinsics& k = scene.intrinsics();

  std::vector<double> depths;
  for (const auto& p : scene.background) {
    const double z = world_to_camera(src, p).z();
    if (z > scene.config.min_depth) depths.push_back(z);
  }
  std::sort(depths.begin(), depths.end());
  const double bg_depth = depths.empty() ? 20.0 : depths[depths.size() / 2];

  auto store = [&](int x, int y, const Point3& world) {
    const Point3 pc = world_to_camera(dst, world);
    if (pc.z() <= kDepthEpsilon) return;
    const Pixel px = project(k, pc);
    flow.set(x, y, static_cast<float>(px.x() - x), static_cast<float>(px.y() - y));
  };
  for (int y = 0; y < flow.height; ++y) {
    for (int x = 0; x < flow.width; ++x) {
      const Eigen::Vector3d ray_cam = k.unproject(Pixel(x, y));
      const int label = labels.at(x, y);
      if (label == 0) {
        store(x, y, camera_to_world(src, ray_cam * bg_depth));
        continue;
      }
      const SceneObject& obj = scene.objects[label - 1];
      const RigidTransform& from = obj.poses[src_frame];
      const RigidTransform& to = obj.poses[dst_frame];
      const Eigen::Vector3d origin = from.rotation.transpose() * (src.center - from.translation);
      const Eigen::Vector3d dir =
          from.rotation.transpose() * (src.rotation.transpose() * ray_cam);
      Point3 p_obj;
      if (const auto t = detail::ray_box(origin, dir, obj.box_center, obj.box_half)) {
        p_obj = origin + *t * dir;
      } else {
        // Hull edge pixel grazing the box: use the object centroid depth.
        const double z = world_to_camera(src, from.translation).z();
        p_obj = from.rotation.transpose() * (camera_to_world(src, ray_cam * z) - from.translation);
      }
      store(x, y, to(p_obj));
    }
  }
  return flow;
}

inline RenderedImages render_images(const SceneGroundTruth& scene) {
  RenderedImages out;
  for (int f = 0; f < scene.frames(); ++f) {
    out.left.push_back(render_labels(scene, f, Side::left));
    out.right.push_back(render_labels(scene, f, Side::right));
  }
  for (int f = 0; f < scene.frames(); ++f) {
    if (f + 1 < scene.frames()) {
      out.flow_ln.push_back(render_flow(scene, out.left[f], f, Side::left, f + 1, Side::left));
    }
    out.flow_lr.push_back(render_flow(scene, out.left[f], f, Side::left, f, Side::right));
  }
  return out;
}

struct RenderedScene {
  RenderedReconstructions reconstructions;
  RenderedImages images;
};

inline RenderedScene render_observations(const SceneGroundTruth& scene, const NoiseConfig& noise,
                                         std::uint64_t seed) {
  return {render_reconstructions(scene, noise, seed), render_images(scene)};
}

// ---------------------------------------------------------------------------
// Scoring

struct TrajectoryScore {
  double rmse = 0.0;
  std::vector<std::pair<int, double>> per_frame;  // (frame, rmse)
  RigidTransform alignment;                       // estimate -> ground truth
  double path_length = 0.0;
  std::size_t matched_points = 0;

  double relative_rmse() const { return path_length > 0.0 ? rmse / path_length : 0.0; }
};

/// Rigidly aligns the estimate's background camera centers to ground truth
/// (no scale), then measures object point errors.
inline TrajectoryScore score_trajectory(const Trajectory& est, const SceneGroundTruth& scene,
                                        std::size_t object = 0) {
  if (est.frames.empty()) throw FrameMismatch("empty trajectory");
  if (object >= scene.objects.size()) throw FrameMismatch("no such object");
  const auto n = static_cast<Eigen::Index>(2 * est.frames.size());
  Eigen::Matrix3Xd src(3, n), dst(3, n);
  for (std::size_t i = 0; i < est.frames.size(); ++i) {
    const int f = est.frames[i].frame;
    if (f < 0 || f >= scene.frames()) {
      throw FrameMismatch("frame " + std::to_string(f) + " not in scene");
    }
    const auto c = static_cast<Eigen::Index>(2 * i);
    src.col(c) = est.frames[i].background_left_center;
    src.col(c + 1) = est.frames[i].background_right_center;
    dst.col(c) = scene.camera(f, Side::left).center;
    dst.col(c + 1) = scene.camera(f, Side::right).center;
  }
  const Eigen::Matrix4d t = Eigen::umeyama(src, dst, false);
  TrajectoryScore score;
  score.alignment = {Rotation::nearest(t.topLeftCorner<3, 3>()), t.topRightCorner<3, 1>()};
  score.path_length = scene.object_path_length(object);

  const SceneObject& obj = scene.objects[object];
  double total = 0.0;
  for (const auto& frame : est.frames) {
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& p : frame.points) {
      if (p.point_id < 0 || static_cast<std::size_t>(p.point_id) >= obj.points.size()) {
        throw FrameMismatch("unknown object point " + std::to_string(p.point_id));
      }
      const Point3 truth = obj.world_point(frame.frame, static_cast<std::size_t>(p.point_id));
      sum += (score.alignment(p.position) - truth).squaredNorm();
      ++count;
    }
    score.per_frame.emplace_back(frame.frame,
                                 count ? std::sqrt(sum / static_cast<double>(count)) : 0.0);
    total += sum;
    score.matched_points += count;
  }
  score.rmse = score.matched_points
                   ? std::sqrt(total / static_cast<double>(score.matched_points))
                   : 0.0;
  return score;
}

inline nlohmann::json to_json(const TrajectoryScore& s) {
  nlohmann::json per_frame = nlohmann::json::array();
  for (const auto& [f, e] : s.per_frame) per_frame.push_back({{"frame", f}, {"rmse", e}});
  const Eigen::Matrix3d& r = s.alignment.rotation.matrix();
  return {{"rmse", s.rmse},
          {"path_length", s.path_length},
          {"relative_rmse", s.relative_rmse()},
          {"matched_points", s.matched_points},
          {"per_frame", per_frame},
          {"alignment",
           {{"rotation", {r(0, 0), r(0, 1), r(0, 2), r(1, 0), r(1, 1), r(1, 2), r(2, 0), r(2, 1),
                          r(2, 2)}},
            {"translation",
             {s.alignment.translation.x(), s.alignment.translation.y(),
              s.alignment.translation.z()}}}}};
}

// ---------------------------------------------------------------------------
// Scene (de)serialization for the CLI

inline nlohmann::json to_json(const SceneGroundTruth& scene) {
  auto v3 = [](const Eigen::Vector3d& v) { return nlohmann::json{v.x(), v.y(), v.z()}; };
  auto m3 = [](const Eigen::Matrix3d& m) {
    nlohmann::json a = nlohmann::json::array();
    for (int i = 0; i < 3; ++i) {
      for (int k = 0; k < 3; ++k) a.push_back(m(i, k));
    }
    return a;
  };
  const SceneConfig& c = scene.config;
  nlohmann::json rig = nlohmann::json::array();
  for (const auto& p : scene.rig) rig.push_back({{"rotation", m3(p.rotation.matrix())}, {"center", v3(p.center)}});
  nlohmann::json bg = nlohmann::json::array();
  for (const auto& p : scene.background) bg.push_back(v3(p));
  nlohmann::json objects = nlohmann::json::array();
  for (const auto& o : scene.objects) {
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : o.points) pts.push_back(v3(p));
    nlohmann::json poses = nlohmann::json::array();
    for (const auto& t : o.poses) {
      poses.push_back({{"rotation", m3(t.rotation.matrix())}, {"translation", v3(t.translation)}});
    }
    objects.push_back({{"points", pts},
                       {"box_center", v3(o.box_center)},
                       {"box_half", v3(o.box_half)},
                       {"poses", poses}});
  }
  return {{"seed", scene.seed},
          {"frames", c.frames},
          {"width", c.width},
          {"height", c.height},
          {"intrinsics",
           {c.intrinsics.focal_x, c.intrinsics.focal_y, c.intrinsics.principal_x,
            c.intrinsics.principal_y}},
          {"baseline", c.baseline},
          {"min_depth", c.min_depth},
          {"rig", rig},
          {"background", bg},
          {"objects", objects}};
}

inline SceneGroundTruth scene_from_json(const nlohmann::json& j) {
  auto v3 = [](const nlohmann::json& a) {
    return Eigen::Vector3d(a.at(0).get<double>(), a.at(1).get<double>(), a.at(2).get<double>());
  };
  auto m3 = [](const nlohmann::json& a) {
    Eigen::Matrix3d m;
    for (int k = 0; k < 9; ++k) m(k / 3, k % 3) = a.at(k).get<double>();
    return Rotation::from_matrix(m, 1e-6);
  };
  SceneGroundTruth scene;
  try {
    SceneConfig& c = scene.config;
    scene.seed = j.at("seed").get<std::uint64_t>();
    c.frames = j.at("frames").get<int>();
    c.width = j.at("width").get<int>();
    c.height = j.at("height").get<int>();
    const auto& in = j.at("intrinsics");
    c.intrinsics = {in.at(0).get<double>(), in.at(1).get<double>(), in.at(2).get<double>(),
                    in.at(3).get<double>()};
    c.baseline = j.at("baseline").get<double>();
    c.min_depth = j.at("min_depth").get<double>();
    for (const auto& p : j.at("rig")) scene.rig.push_back({m3(p.at("rotation")), v3(p.at("center"))});
    for (const auto& p : j.at("background")) scene.background.push_back(v3(p));
    c.objects.clear();
    for (const auto& oj : j.at("objects")) {
      SceneObject o;
      for (const auto& p : oj.at("points")) o.points.push_back(v3(p));
      o.box_center = v3(oj.at("box_center"));
      o.box_half = v3(oj.at("box_half"));
      for (const auto& t : oj.at("poses")) {
        o.poses.push_back({m3(t.at("rotation")), v3(t.at("translation"))});
      }
      scene.objects.push_back(std::move(o));
      c.objects.emplace_back();
    }
    c.object_points = scene.objects.empty() ? 0 : static_cast<int>(scene.objects[0].points.size());
    c.background_points = static_cast<int>(scene.background.size());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("scene: ") + e.what());
  } catch (const InvalidRotation& e) {
    throw ParseError(std::string("scene: ") + e.what());
  }
  if (static_cast<int>(scene.rig.size()) != scene.config.frames) {
    throw ParseError("scene: rig pose count does not match frame count");
  }
  for (const auto& o : scene.objects) {
    if (static_cast<int>(o.poses.size()) != scene.config.frames) {
      throw ParseError("scene: object pose count does not match frame count");
    }
  }
  return scene;
}

}  // namespace stereo_traj
