#pragma once

// Stereo multi-object tracking on pixel level.
//
// Tracks live in the left image. Each step warps the current left masks into
// the next left frame with optical flow, scores the warped predictions
// against the next detections, and solves a maximum-weight assignment.
// A second, independent assignment attaches right-image detections to the
// tracks by warping left masks across the stereo pair.

#include <Eigen/Core>

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stereo_traj/assignment.hpp"
#include "stereo_traj/errors.hpp"
#include "stereo_traj/flow.hpp"
#include "stereo_traj/mask.hpp"
#include "stereo_traj/parallel.hpp"

namespace stereo_traj {

struct TrackingConfig {
  double min_overlap = 0.3;
  int max_lost = 2;
  std::size_t min_mask_area = 25;
  OverlapMeasure measure = OverlapMeasure::iou;
  unsigned threads = 1;
};

struct PredictionSet {
  std::vector<InstanceMask> masks;  // may be empty when the warp left the image
  std::vector<int> track_ids;
};

struct AffinityMatrix {
  Eigen::MatrixXd values;    // n_predictions x n_detections, entries in [0, 1]
  std::vector<int> row_ids;  // track ids
  std::vector<int> col_ids;  // detection indices
};

enum class TrackStatus { active, lost, terminated };

inline const char* to_string(TrackStatus s) {
  switch (s) {
    case TrackStatus::active: return "active";
    case TrackStatus::lost: return "lost";
    case TrackStatus::terminated: return "terminated";
  }
  return "?";
}

struct Track {
  int id = 0;
  int category = 0;
  std::map<int, InstanceMask> left;   // frame -> associated left detection
  std::map<int, InstanceMask> right;  // frame -> associated right detection
  TrackStatus status = TrackStatus::active;
  int lost_count = 0;
  // Mask carried forward into the next prediction: the latest detection, or
  // the coasting prediction while lost.
  std::optional<InstanceMask> carried;

  bool live() const { return status != TrackStatus::terminated; }
};

struct TrackerState {
  int frame = -1;
  int next_id = 1;
  std::vector<Track> tracks;

  const Track* find(int id) const {
    for (const auto& t : tracks) {
      if (t.id == id) return &t;
    }
    return nullptr;
  }

  std::size_t count(TrackStatus s) const {
    std::size_t n = 0;
    for (const auto& t : tracks) n += static_cast<std::size_t>(t.status == s);
    return n;
  }
};

inline AffinityMatrix build_affinity(const PredictionSet& preds,
                                     const std::vector<InstanceMask>& dets,
                                     const TrackingConfig& config = {}) {
  AffinityMatrix aff;
  aff.values = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(preds.masks.size()),
                                     static_cast<Eigen::Index>(dets.size()));
  aff.row_ids = preds.track_ids;
  for (std::size_t v = 0; v < dets.size(); ++v) aff.col_ids.push_back(static_cast<int>(v));
  const std::size_t nu = preds.masks.size();
  const std::size_t nv = dets.size();
  parallel_for(nu * nv, config.threads, [&](std::size_t k) {
    const std::size_t u = k / nv;
    const std::size_t v = k % nv;
    aff.values(static_cast<Eigen::Index>(u), static_cast<Eigen::Index>(v)) =
        overlap(preds.masks[u], dets[v], config.measure);
  });
  return aff;
}

inline std::vector<Match> assign(const AffinityMatrix& aff, double min_overlap) {
  return max_weight_matching(aff.values, min_overlap);
}

namespace detail {

inline void check_detections(const std::vector<InstanceMask>& dets, int frame, Side side) {
  for (const auto& d : dets) {
    if (d.frame_index() != frame || d.side() != side) {
      throw FrameOrderError("detection belongs to frame " + std::to_string(d.frame_index()) +
                            " " + to_string(d.side()) + ", expected " +
                            std::to_string(frame) + " " + to_string(side));
    }
  }
}

inline InstanceMask warp_or_empty(const InstanceMask& mask, const FlowField& flow) {
  try {
    return warp_mask(mask, flow);
  } catch (const EmptyPrediction&) {
    return InstanceMask(flow.target_frame, flow.target_side, mask.width(), mask.height(),
                        mask.instance_label());
  }
}

}  // namespace detail

/// Starts a tracker from the first frame's left detections.
inline TrackerState start_tracking(int frame, const std::vector<InstanceMask>& dets_left) {
  detail::check_detections(dets_left, frame, Side::left);
  TrackerState state;
  state.frame = frame;
  for (const auto& det : dets_left) {
    Track t;
    t.id = state.next_id++;
    t.left.emplace(frame, det);
    t.carried = det;
    state.tracks.push_back(std::move(t));
  }
  return state;
}

/// Advances the tracker from frame i to i+1 using left(i) -> left(i+1) flow.
inline TrackerState step_temporal(TrackerState state, const FlowField& flow_ln,
                                  const std::vector<InstanceMask>& dets_next_left,
                                  const TrackingConfig& config = {}) {
  const int next = state.frame + 1;
  if (flow_ln.source_frame != state.frame || flow_ln.source_side != Side::left ||
      flow_ln.target_frame != next || flow_ln.target_side != Side::left) {
    throw FrameOrderError("temporal flow must map left " + std::to_string(state.frame) +
                          " to left " + std::to_string(next));
  }
  detail::check_detections(dets_next_left, next, Side::left);

  PredictionSet preds;
  std::vector<std::size_t> track_index;
  for (std::size_t k = 0; k < state.tracks.size(); ++k) {
    Track& t = state.tracks[k];
    if (!t.live()) continue;
    if (t.carried) {
      preds.masks.push_back(detail::warp_or_empty(*t.carried, flow_ln));
    } else {
      preds.masks.emplace_back(next, Side::left, flow_ln.width, flow_ln.height, 0);
    }
    preds.track_ids.push_back(t.id);
    track_index.push_back(k);
  }

  const AffinityMatrix aff = build_affinity(preds, dets_next_left, config);
  const std::vector<Match> matches = assign(aff, config.min_overlap);

  std::vector<char> row_matched(preds.masks.size(), 0);
  std::vector<char> det_matched(dets_next_left.size(), 0);
  for (const auto& [row, col] : matches) {
    Track& t = state.tracks[track_index[row]];
    t.left.insert_or_assign(next, dets_next_left[col]);
    t.carried = dets_next_left[col];
    t.status = TrackStatus::active;
    t.lost_count = 0;
    row_matched[row] = 1;
    det_matched[col] = 1;
  }
  for (std::size_t row = 0; row < preds.masks.size(); ++row) {
    if (row_matched[row]) continue;
    Track& t = state.tracks[track_index[row]];
    ++t.lost_count;
    if (t.lost_count > config.max_lost) {
      t.status = TrackStatus::terminated;
      t.carried.reset();
    } else {
      t.status = TrackStatus::lost;
      if (preds.masks[row].empty()) {
        t.carried.reset();
      } else {
        t.carried = std::move(preds.masks[row]);
      }
    }
  }
  for (std::size_t col = 0; col < dets_next_left.size(); ++col) {
    if (det_matched[col]) continue;
    Track t;
    t.id = state.next_id++;
    t.left.emplace(next, dets_next_left[col]);
    t.carried = dets_next_left[col];
    state.tracks.push_back(std::move(t));
  }
  state.frame = next;
  return state;
}

/// Attaches right-image detections of the current frame to the left tracks
/// using left(i) -> right(i) flow. Unmatched right detections are discarded.
inline TrackerState associate_stereo(TrackerState state, const FlowField& flow_lr,
                                     const std::vector<InstanceMask>& dets_right,
                                     const TrackingConfig& config = {}) {
  const int frame = state.frame;
  if (flow_lr.source_frame != frame || flow_lr.source_side != Side::left ||
      flow_lr.target_frame != frame || flow_lr.target_side != Side::right) {
    throw FrameOrderError("stereo flow must map left " + std::to_string(frame) +
                          " to right " + std::to_string(frame));
  }
  detail::check_detections(dets_right, frame, Side::right);

  PredictionSet preds;
  std::vector<std::size_t> track_index;
  for (std::size_t k = 0; k < state.tracks.size(); ++k) {
    const Track& t = state.tracks[k];
    const auto it = t.left.find(frame);
    if (t.status != TrackStatus::active || it == t.left.end()) continue;
    preds.masks.push_back(detail::warp_or_empty(it->second, flow_lr));
    preds.track_ids.push_back(t.id);
    track_index.push_back(k);
  }
  const AffinityMatrix aff = build_affinity(preds, dets_right, config);
  for (const auto& [row, col] : assign(aff, config.min_overlap)) {
    state.tracks[track_index[row]].right.insert_or_assign(frame, dets_right[col]);
  }
  return state;
}

}  // namespace stereo_traj
