#pragma once

// Object trajectory in the background frame.
//
// For each paired frame i, object points are moved into the left object
// camera, o_j^(i) = R_i^(o) (o_j^(o) - c_i^(o)), and from there into the
// background frame through the left background camera,
// o_{j,i}^(b) = c_i^(b) + R_i^(b)^T o_j^(i).

#include "json.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "stereo_traj/errors.hpp"
#include "stereo_traj/geometry.hpp"
#include "stereo_traj/recon.hpp"
#include "stereo_traj/stereo.hpp"

namespace stereo_traj {

inline constexpr double kScaleMismatchTolerance = 0.01;

/// p -> rotation * p + translation
struct RigidTransform {
  Rotation rotation;
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Point3 operator()(const Point3& p) const { return rotation * p + translation; }
};

struct TrajectoryPoint {
  int point_id = 0;
  Point3 position = Point3::Zero();
};

struct TrajectoryFrame {
  int frame = 0;
  std::vector<TrajectoryPoint> points;
  // Object frame -> background frame for this time step. Derived from the
  // two camera maps; not needed to produce the points themselves.
  RigidTransform object_pose;
  Point3 background_left_center = Point3::Zero();
  Point3 background_right_center = Point3::Zero();
};

struct Trajectory {
  std::vector<TrajectoryFrame> frames;

  std::size_t num_points() const {
    std::size_t n = 0;
    for (const auto& f : frames) n += f.points.size();
    return n;
  }
};

inline std::vector<std::pair<int, Point3>> object_points_in_camera(const Reconstruction& obj,
                                                                   int camera_id) {
  const CameraRecord* cam = obj.camera(camera_id);
  if (!cam) throw UnknownCamera("camera " + std::to_string(camera_id));
  std::vector<std::pair<int, Point3>> out;
  out.reserve(obj.points.size());
  for (const auto& p : obj.points) out.emplace_back(p.id, world_to_camera(cam->pose, p.position));
  return out;
}

inline Trajectory compose_trajectory(const Reconstruction& obj, const Reconstruction& bg,
                                     const std::vector<FramePair>& pairs,
                                     double scale_tolerance = kScaleMismatchTolerance) {
  if (pairs.empty()) throw NoCommonFrames("no frame pairs to compose");
  const double mo = median_baseline(obj);
  const double mb = median_baseline(bg);
  if (std::abs(mo / mb - 1.0) > scale_tolerance) {
    throw ScaleMismatch("object median baseline " + std::to_string(mo) +
                        " vs background " + std::to_string(mb) +
                        "; refine both to the same nominal baseline first");
  }
  Trajectory traj;
  for (const FramePair& pair : pairs) {
    const CameraRecord* bl = bg.camera(pair.background_left);
    const CameraRecord* br = bg.camera(pair.background_right);
    const CameraRecord* ol = obj.camera(pair.object_left);
    if (!bl || !br || !ol) throw UnknownCamera("frame " + std::to_string(pair.frame));
    TrajectoryFrame f;
    f.frame = pair.frame;
    for (const auto& [id, p_cam] : object_points_in_camera(obj, pair.object_left)) {
      f.points.push_back({id, camera_to_world(bl->pose, p_cam)});
    }
    const Rotation r = bl->pose.rotation.transpose() * ol->pose.rotation;
    f.object_pose = {r, bl->pose.center - r * ol->pose.center};
    f.background_left_center = bl->pose.center;
    f.background_right_center = br->pose.center;
    traj.frames.push_back(std::move(f));
  }
  return traj;
}

// ---------------------------------------------------------------------------
// Export

inline std::string trajectory_csv(const Trajectory& traj) {
  std::string out = "frame,point_id,x,y,z\n";
  char line[160];
  for (const auto& f : traj.frames) {
    for (const auto& p : f.points) {
      std::snprintf(line, sizeof(line), "%d,%d,%.9g,%.9g,%.9g\n", f.frame, p.point_id,
                    p.position.x(), p.position.y(), p.position.z());
      out += line;
    }
  }
  return out;
}

inline void write_trajectory_csv(const Trajectory& traj, const std::string& path) {
  if (traj.frames.empty()) throw IoError("refusing to write an empty trajectory");
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << trajectory_csv(traj);
  if (!out) throw IoError("failed writing " + path);
}

/// Reads the CSV layout back; object poses and camera centers are not stored.
inline Trajectory read_trajectory_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != "frame,point_id,x,y,z") {
    throw ParseError(path + ": missing CSV header");
  }
  Trajectory traj;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    int frame = 0, id = 0;
    double x = 0, y = 0, z = 0;
    if (std::sscanf(line.c_str(), "%d,%d,%lf,%lf,%lf", &frame, &id, &x, &y, &z) != 5) {
      throw ParseError(path + ":" + std::to_string(lineno) + ": malformed row");
    }
    if (traj.frames.empty() || traj.frames.back().frame != frame) {
      traj.frames.push_back({});
      traj.frames.back().frame = frame;
    }
    traj.frames.back().points.push_back({id, Point3(x, y, z)});
  }
  return traj;
}

/// Binary little-endian PLY, one vertex per (frame, point), colored from
/// blue (first frame) to green (last frame).
inline void write_trajectory_ply(const Trajectory& traj, const std::string& path) {
  if (traj.frames.empty()) throw IoError("refusing to write an empty trajectory");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << "ply\nformat binary_little_endian 1.0\n"
      << "element vertex " << traj.num_points() << '\n'
      << "property double x\nproperty double y\nproperty double z\n"
      << "property uchar red\nproperty uchar green\nproperty uchar blue\n"
      << "property int frame\nproperty int point_id\nend_header\n";
  auto put = [&out](const auto& value) {
    unsigned char bytes[sizeof(value)];
    std::memcpy(bytes, &value, sizeof(value));
    if constexpr (std::endian::native == std::endian::big) {
      std::reverse(bytes, bytes + sizeof(value));
    }
    out.write(reinterpret_cast<const char*>(bytes), sizeof(value));
  };
  const std::size_t n = traj.frames.size();
  for (std::size_t k = 0; k < n; ++k) {
    const double t = n > 1 ? static_cast<double>(k) / static_cast<double>(n - 1) : 0.0;
    const auto green = static_cast<std::uint8_t>(std::lround(255.0 * t));
    const auto blue = static_cast<std::uint8_t>(255 - green);
    for (const auto& p : traj.frames[k].points) {
      put(p.position.x());
      put(p.position.y());
      put(p.position.z());
      put(std::uint8_t{0});
      put(green);
      put(blue);
      put(static_cast<std::int32_t>(traj.frames[k].frame));
      put(static_cast<std::int32_t>(p.point_id));
    }
  }
  if (!out) throw IoError("failed writing " + path);
}

namespace detail {

inline nlohmann::json vec3(const Eigen::Vector3d& v) { return {v.x(), v.y(), v.z()}; }

inline Eigen::Vector3d vec3(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 3) throw ParseError("expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

}  // namespace detail

inline nlohmann::json to_json(const Trajectory& traj) {
  nlohmann::json frames = nlohmann::json::array();
  for (const auto& f : traj.frames) {
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : f.points) pts.push_back({p.point_id, p.position.x(), p.position.y(), p.position.z()});
    const Eigen::Matrix3d& r = f.object_pose.rotation.matrix();
    frames.push_back({{"frame", f.frame},
                      {"object_rotation", {r(0, 0), r(0, 1), r(0, 2), r(1, 0), r(1, 1), r(1, 2),
                                           r(2, 0), r(2, 1), r(2, 2)}},
                      {"object_translation", detail::vec3(f.object_pose.translation)},
                      {"background_left_center", detail::vec3(f.background_left_center)},
                      {"background_right_center", detail::vec3(f.background_right_center)},
                      {"points", pts}});
  }
  return {{"frames", frames}};
}

inline Trajectory trajectory_from_json(const nlohmann::json& j) {
  Trajectory traj;
  try {
    for (const auto& fj : j.at("frames")) {
      TrajectoryFrame f;
      f.frame = fj.at("frame").get<int>();
      const auto& r = fj.at("object_rotation");
      Eigen::Matrix3d m;
      for (int k = 0; k < 9; ++k) m(k / 3, k % 3) = r.at(k).get<double>();
      f.object_pose.rotation = Rotation::from_matrix(m, 1e-6);
      f.object_pose.translation = detail::vec3(fj.at("object_translation"));
      f.background_left_center = detail::vec3(fj.at("background_left_center"));
      f.background_right_center = detail::vec3(fj.at("background_right_center"));
      for (const auto& pj : fj.at("points")) {
        f.points.push_back({pj.at(0).get<int>(),
                            Point3(pj.at(1).get<double>(), pj.at(2).get<double>(),
                                   pj.at(3).get<double>())});
      }
      traj.frames.push_back(std::move(f));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("trajectory: ") + e.what());
  } catch (const InvalidRotation& e) {
    throw ParseError(std::string("trajectory: ") + e.what());
  }
  return traj;
}

inline void write_trajectory_json(const Trajectory& traj, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << to_json(traj).dump(1) << '\n';
  if (!out) throw IoError("failed writing " + path);
}

inline Trajectory read_trajectory_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  try {
    return trajectory_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": " + e.what());
  }
}

}  // namespace stereo_traj
