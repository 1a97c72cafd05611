#pragma once

// Stereo feature pairing and baseline-based scale resolution.

#include <algorithm>
#include <cmath>
#include <map>
#include <utility>
#include <vector>

#include "stereo_traj/errors.hpp"
#include "stereo_traj/geometry.hpp"
#include "stereo_traj/recon.hpp"

namespace stereo_traj {

inline constexpr double kDefaultYTolerance = 3.0;

/// Left/right observation of one point in one rectified stereo frame. The
/// two y coordinates are replaced by their mean.
struct StereoObservation {
  int point_id = 0;
  int frame = 0;
  int left_camera = 0;
  int right_camera = 0;
  double u_left = 0.0;
  double u_right = 0.0;
  double v = 0.0;
};

struct MonoObservation {
  int point_id = 0;
  int camera_id = 0;
  Pixel pixel = Pixel::Zero();
};

struct FeaturePairing {
  std::vector<StereoObservation> stereo;
  std::vector<MonoObservation> mono;
};

/// Rectified rig: the right camera shares the left rotation and sits
/// `baseline` along the left camera's x axis.
struct RigModel {
  double baseline = 1.0;

  explicit RigModel(double b) : baseline(b) {
    if (!(b > 0.0) || !std::isfinite(b)) {
      throw NonPositiveScale("rig baseline must be positive");
    }
  }

  CameraPose right_from_left(const CameraPose& left) const {
    return {left.rotation, left.center + left.rotation.transpose() * offset()};
  }
  CameraPose left_from_right(const CameraPose& right) const {
    return {right.rotation, right.center - right.rotation.transpose() * offset()};
  }
  Eigen::Vector3d offset() const { return {baseline, 0.0, 0.0}; }
};

/// For every point and frame seen from both sides, pairs left and right
/// observations whose y coordinates differ by less than `y_tolerance`
/// pixels. Each observation is used at most once; the rest stay mono.
inline FeaturePairing pair_stereo_features(const Reconstruction& recon,
                                           double y_tolerance = kDefaultYTolerance) {
  FeaturePairing out;
  const auto index = recon.camera_index();
  for (const auto& point : recon.points) {
    // frame -> (left observations, right observations)
    std::map<int, std::pair<std::vector<const Observation*>, std::vector<const Observation*>>>
        by_frame;
    for (const auto& o : point.observations) {
      const CameraRecord& cam = recon.cameras[index.at(o.camera_id)];
      auto& slot = by_frame[cam.frame];
      (cam.side == Side::left ? slot.first : slot.second).push_back(&o);
    }
    for (const auto& [frame, sides] : by_frame) {
      const auto& [lefts, rights] = sides;
      std::vector<char> right_used(rights.size(), 0);
      for (const Observation* l : lefts) {
        int best = -1;
        double best_dy = y_tolerance;
        for (std::size_t k = 0; k < rights.size(); ++k) {
          if (right_used[k]) continue;
          const double dy = std::abs(l->pixel.y() - rights[k]->pixel.y());
          if (dy < best_dy) {
            best_dy = dy;
            best = static_cast<int>(k);
          }
        }
        if (best < 0) {
          out.mono.push_back({point.id, l->camera_id, l->pixel});
          continue;
        }
        right_used[best] = 1;
        const Observation* r = rights[best];
        out.stereo.push_back({point.id, frame, l->camera_id, r->camera_id, l->pixel.x(),
                              r->pixel.x(), 0.5 * (l->pixel.y() + r->pixel.y())});
      }
      for (std::size_t k = 0; k < rights.size(); ++k) {
        if (!right_used[k]) {
          out.mono.push_back({point.id, rights[k]->camera_id, rights[k]->pixel});
        }
      }
    }
  }
  return out;
}

/// (frame, |c_left - c_right|) for every frame with both cameras registered.
inline std::vector<std::pair<int, double>> stereo_baselines(const Reconstruction& recon) {
  std::map<int, std::pair<const CameraRecord*, const CameraRecord*>> by_frame;
  for (const auto& c : recon.cameras) {
    auto& slot = by_frame[c.frame];
    (c.side == Side::left ? slot.first : slot.second) = &c;
  }
  std::vector<std::pair<int, double>> out;
  for (const auto& [frame, cams] : by_frame) {
    if (cams.first && cams.second) {
      out.emplace_back(frame, (cams.first->pose.center - cams.second->pose.center).norm());
    }
  }
  return out;
}

inline double median(std::vector<double> values) {
  if (values.empty()) throw NoStereoFrames("median of an empty set");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

inline double median_baseline(const Reconstruction& recon) {
  std::vector<double> b;
  for (const auto& [frame, value] : stereo_baselines(recon)) b.push_back(value);
  if (b.empty()) throw NoStereoFrames("no frame has both stereo cameras");
  return median(std::move(b));
}

/// Factor that brings the median per-frame stereo baseline to
/// `nominal_baseline`. The median tolerates a minority of badly registered
/// cameras.
inline double estimate_scale(const Reconstruction& recon, double nominal_baseline) {
  if (!(nominal_baseline > 0.0) || !std::isfinite(nominal_baseline)) {
    throw NonPositiveScale("nominal baseline must be positive");
  }
  const double m = median_baseline(recon);
  if (!(m > 0.0)) throw NumericalFailure("median stereo baseline is zero");
  return nominal_baseline / m;
}

/// Multiplies all camera centers and point positions by s.
inline Reconstruction apply_scale(Reconstruction recon, double s) {
  if (!(s > 0.0) || !std::isfinite(s)) {
    throw NonPositiveScale("scale factor " + std::to_string(s));
  }
  for (auto& c : recon.cameras) c.pose.center *= s;
  for (auto& p : recon.points) p.position *= s;
  return recon;
}

}  // namespace stereo_traj
