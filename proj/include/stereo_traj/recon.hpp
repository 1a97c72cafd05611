#pragma once

// Reconstruction data model (cameras + points + observations), its JSON
// file format, and object/background frame pairing.
//
// File layout (see docs/reconstruction.schema.json):
//   { "kind": "object" | "background",
//     "cameras": [ { "id", "frame", "side": "left"|"right",
//                    "rotation": [9 reals, row-major, world->camera],
//                    "center": [3 reals], "intrinsics": [fx, fy, cx, cy] } ],
//     "points": [ { "id", "xyz": [3 reals],
//                   "observations": [ [camera_id, x, y], ... ] } ] }

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "stereo_traj/errors.hpp"
#include "stereo_traj/geometry.hpp"
#include "stereo_traj/mask.hpp"

namespace stereo_traj {

enum class ReconKind { object, background };

inline const char* to_string(ReconKind k) {
  return k == ReconKind::object ? "object" : "background";
}

struct CameraRecord {
  int id = 0;
  int frame = 0;
  Side side = Side::left;
  CameraPose pose;
  PinholeIntrinsics intrinsics;
};

struct Observation {
  int camera_id = 0;
  Pixel pixel = Pixel::Zero();
};

struct PointRecord {
  int id = 0;
  Point3 position = Point3::Zero();
  std::vector<Observation> observations;
};

struct Reconstruction {
  ReconKind kind = ReconKind::object;
  std::vector<CameraRecord> cameras;
  std::vector<PointRecord> points;

  const CameraRecord* camera(int id) const {
    for (const auto& c : cameras) {
      if (c.id == id) return &c;
    }
    return nullptr;
  }

  const CameraRecord* camera_at(int frame, Side side) const {
    for (const auto& c : cameras) {
      if (c.frame == frame && c.side == side) return &c;
    }
    return nullptr;
  }

  /// camera id -> index into `cameras`
  std::unordered_map<int, std::size_t> camera_index() const {
    std::unordered_map<int, std::size_t> idx;
    for (std::size_t i = 0; i < cameras.size(); ++i) idx.emplace(cameras[i].id, i);
    return idx;
  }

  std::set<int> frames() const {
    std::set<int> f;
    for (const auto& c : cameras) f.insert(c.frame);
    return f;
  }
};

/// Checks every structural invariant; throws the documented error type.
inline void validate(const Reconstruction& recon) {
  if (recon.cameras.empty()) throw ParseError("reconstruction has no cameras");
  if (recon.points.empty()) throw ParseError("reconstruction has no points");
  std::set<int> ids;
  std::set<std::pair<int, Side>> slots;
  for (const auto& c : recon.cameras) {
    if (!ids.insert(c.id).second) {
      throw DuplicateCamera("camera id " + std::to_string(c.id) + " appears twice");
    }
    if (!slots.insert({c.frame, c.side}).second) {
      throw DuplicateCamera("frame " + std::to_string(c.frame) + " " + to_string(c.side) +
                            " registered twice");
    }
    if (!c.intrinsics.valid()) {
      throw ParseError("camera " + std::to_string(c.id) + " has invalid intrinsics");
    }
    if (!c.pose.center.allFinite()) {
      throw ParseError("camera " + std::to_string(c.id) + " has a non-finite center");
    }
  }
  std::set<int> point_ids;
  for (const auto& p : recon.points) {
    if (!point_ids.insert(p.id).second) {
      throw ParseError("point id " + std::to_string(p.id) + " appears twice");
    }
    if (!p.position.allFinite()) {
      throw ParseError("point " + std::to_string(p.id) + " has a non-finite position");
    }
    if (p.observations.size() < 2) {
      throw ParseError("point " + std::to_string(p.id) + " has fewer than 2 observations");
    }
    for (const auto& o : p.observations) {
      if (!ids.count(o.camera_id)) {
        throw DanglingReference("point " + std::to_string(p.id) + " references camera " +
                                std::to_string(o.camera_id));
      }
      if (!o.pixel.allFinite()) {
        throw ParseError("point " + std::to_string(p.id) + " has a non-finite observation");
      }
    }
  }
}

namespace detail {

inline double finite_number(const nlohmann::json& j, const std::string& what) {
  if (!j.is_number()) throw ParseError(what + " is not a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw ParseError(what + " is not finite");
  return v;
}

inline int integer(const nlohmann::json& j, const std::string& what) {
  if (!j.is_number_integer()) throw ParseError(what + " is not an integer");
  return j.get<int>();
}

inline const nlohmann::json& member(const nlohmann::json& j, const char* key,
                                    const std::string& where) {
  if (!j.is_object() || !j.contains(key)) {
    throw ParseError(where + ": missing '" + key + "'");
  }
  return j.at(key);
}

inline std::vector<double> reals(const nlohmann::json& j, std::size_t n,
                                 const std::string& what) {
  if (!j.is_array() || j.size() != n) {
    throw ParseError(what + " must be an array of " + std::to_string(n) + " numbers");
  }
  std::vector<double> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(finite_number(j[i], what));
  return out;
}

}  // namespace detail

inline nlohmann::json to_json(const Reconstruction& recon) {
  nlohmann::json cams = nlohmann::json::array();
  for (const auto& c : recon.cameras) {
    const Eigen::Matrix3d& r = c.pose.rotation.matrix();
    nlohmann::json rot = nlohmann::json::array();
    for (int i = 0; i < 3; ++i) {
      for (int k = 0; k < 3; ++k) rot.push_back(r(i, k));
    }
    cams.push_back({{"id", c.id},
                    {"frame", c.frame},
                    {"side", to_string(c.side)},
                    {"rotation", rot},
                    {"center", {c.pose.center.x(), c.pose.center.y(), c.pose.center.z()}},
                    {"intrinsics",
                     {c.intrinsics.focal_x, c.intrinsics.focal_y, c.intrinsics.principal_x,
                      c.intrinsics.principal_y}}});
  }
  nlohmann::json pts = nlohmann::json::array();
  for (const auto& p : recon.points) {
    nlohmann::json obs = nlohmann::json::array();
    for (const auto& o : p.observations) {
      obs.push_back({o.camera_id, o.pixel.x(), o.pixel.y()});
    }
    pts.push_back({{"id", p.id},
                   {"xyz", {p.position.x(), p.position.y(), p.position.z()}},
                   {"observations", obs}});
  }
  return {{"kind", to_string(recon.kind)}, {"cameras", cams}, {"points", pts}};
}

inline Reconstruction reconstruction_from_json(const nlohmann::json& j) {
  Reconstruction recon;
  const auto& kind = detail::member(j, "kind", "reconstruction");
  if (kind == "object") {
    recon.kind = ReconKind::object;
  } else if (kind == "background") {
    recon.kind = ReconKind::background;
  } else {
    throw ParseError("unknown reconstruction kind");
  }
  const auto& cams = detail::member(j, "cameras", "reconstruction");
  const auto& pts = detail::member(j, "points", "reconstruction");
  if (!cams.is_array() || !pts.is_array()) {
    throw ParseError("'cameras' and 'points' must be arrays");
  }
  for (std::size_t i = 0; i < cams.size(); ++i) {
    const auto& cj = cams[i];
    const std::string where = "cameras[" + std::to_string(i) + "]";
    CameraRecord c;
    c.id = detail::integer(detail::member(cj, "id", where), where + ".id");
    c.frame = detail::integer(detail::member(cj, "frame", where), where + ".frame");
    const auto& side = detail::member(cj, "side", where);
    if (!side.is_string()) throw ParseError(where + ".side is not a string");
    c.side = side_from_string(side.get<std::string>());
    const auto r = detail::reals(detail::member(cj, "rotation", where), 9, where + ".rotation");
    Eigen::Matrix3d m;
    m << r[0], r[1], r[2], r[3], r[4], r[5], r[6], r[7], r[8];
    try {
      c.pose.rotation = Rotation::from_matrix(m);
    } catch (const InvalidRotation&) {
      // Text exports often carry fewer digits; accept small drift.
      try {
        Rotation::from_matrix(m, 1e-6);
      } catch (const InvalidRotation& e) {
        throw ParseError(where + ".rotation: " + e.what());
      }
      c.pose.rotation = Rotation::nearest(m);
    }
    const auto ctr = detail::reals(detail::member(cj, "center", where), 3, where + ".center");
    c.pose.center = Point3(ctr[0], ctr[1], ctr[2]);
    const auto in = detail::reals(detail::member(cj, "intrinsics", where), 4,
                                  where + ".intrinsics");
    c.intrinsics = {in[0], in[1], in[2], in[3]};
    recon.cameras.push_back(c);
  }
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto& pj = pts[i];
    const std::string where = "points[" + std::to_string(i) + "]";
    PointRecord p;
    p.id = detail::integer(detail::member(pj, "id", where), where + ".id");
    const auto xyz = detail::reals(detail::member(pj, "xyz", where), 3, where + ".xyz");
    p.position = Point3(xyz[0], xyz[1], xyz[2]);
    const auto& obs = detail::member(pj, "observations", where);
    if (!obs.is_array()) throw ParseError(where + ".observations is not an array");
    for (std::size_t k = 0; k < obs.size(); ++k) {
      const std::string ow = where + ".observations[" + std::to_string(k) + "]";
      if (!obs[k].is_array() || obs[k].size() != 3) {
        throw ParseError(ow + " must be [camera_id, x, y]");
      }
      Observation o;
      o.camera_id = detail::integer(obs[k][0], ow + "[0]");
      o.pixel = Pixel(detail::finite_number(obs[k][1], ow + "[1]"),
                      detail::finite_number(obs[k][2], ow + "[2]"));
      p.observations.push_back(o);
    }
    recon.points.push_back(std::move(p));
  }
  validate(recon);
  return recon;
}

inline Reconstruction parse_reconstruction(std::string_view text,
                                           const std::string& source = "<memory>") {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(source + ": " + e.what());
  }
  try {
    return reconstruction_from_json(j);
  } catch (const ParseError& e) {
    throw ParseError(source + ": " + e.what());
  } catch (const DuplicateCamera& e) {
    throw DuplicateCamera(source + ": " + e.what());
  } catch (const DanglingReference& e) {
    throw DanglingReference(source + ": " + e.what());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(source + ": " + e.what());
  }
}

inline Reconstruction load_reconstruction(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_reconstruction(ss.str(), path);
}

inline void save_reconstruction(const Reconstruction& recon, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << to_json(recon).dump(1) << '\n';
  if (!out) throw IoError("failed writing " + path);
}

struct FramePair {
  int frame = 0;
  int object_left = 0;
  int object_right = 0;
  int background_left = 0;
  int background_right = 0;

  friend bool operator==(const FramePair&, const FramePair&) = default;
};

/// Frames registered on both sides in both reconstructions, sorted by frame.
inline std::vector<FramePair> pair_frames(const Reconstruction& obj,
                                          const Reconstruction& bg) {
  std::map<int, FramePair> by_frame;
  std::map<int, int> complete;
  auto visit = [&](const Reconstruction& r, bool is_obj) {
    for (const auto& c : r.cameras) {
      FramePair& fp = by_frame[c.frame];
      fp.frame = c.frame;
      int& slot = is_obj ? (c.side == Side::left ? fp.object_left : fp.object_right)
                         : (c.side == Side::left ? fp.background_left : fp.background_right);
      slot = c.id;
      ++complete[c.frame];
    }
  };
  visit(obj, true);
  visit(bg, false);
  std::vector<FramePair> out;
  for (const auto& [frame, fp] : by_frame) {
    // (frame, side) is unique per reconstruction, so 4 hits means all slots.
    if (complete[frame] == 4) out.push_back(fp);
  }
  if (out.empty()) throw NoCommonFrames("object and background share no stereo frame");
  return out;
}

}  // namespace stereo_traj
