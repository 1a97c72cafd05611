#pragma once

// Nonlinear least-squares problem for rig-constrained refinement.
//
// Variables are one left-camera pose per frame (6-parameter local increments,
// see geometry.hpp `retract`) and one 3-vector per point. The right camera of
// a frame is never a variable: it is the left pose shifted by the rig
// baseline. The first frame's pose is held fixed to remove the gauge freedom.
//
// Residuals are measured minus predicted pixels:
//   stereo block (3): u_left - pi_x(L), u_right - pi_x(R), v - pi_y(L)
//   mono block (2):   x - pi_x(C),      y - pi_y(C)   with C the observing side

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <unordered_map>
#include <vector>

#include "stereo_traj/errors.hpp"
#include "stereo_traj/geometry.hpp"
#include "stereo_traj/parallel.hpp"
#include "stereo_traj/recon.hpp"
#include "stereo_traj/stereo.hpp"

namespace stereo_traj {

enum class BlockKind { stereo, mono };

struct ResidualBlock {
  BlockKind kind = BlockKind::stereo;
  int frame_slot = 0;
  int point_slot = 0;
  Side side = Side::left;  // mono blocks only
  Eigen::Vector3d measurement = Eigen::Vector3d::Zero();  // (u_l, u_r, v) or (x, y, 0)

  int dim() const { return kind == BlockKind::stereo ? 3 : 2; }
};

/// Poses and points of one iterate.
struct ProblemState {
  std::vector<CameraPose> poses;  // left camera per frame slot
  std::vector<Point3> points;
};

struct LeastSquaresProblem {
  RigModel rig{1.0};
  double huber_width = 2.0;  // pixels; <= 0 disables the robust loss
  std::vector<int> frames;   // frame index per slot, ascending
  std::vector<PinholeIntrinsics> left_intrinsics;
  std::vector<PinholeIntrinsics> right_intrinsics;
  std::vector<int> point_ids;
  std::vector<ResidualBlock> blocks;
  ProblemState initial;
  int anchor_slot = 0;

  std::size_t num_frames() const { return frames.size(); }
  std::size_t num_points() const { return point_ids.size(); }
  std::size_t num_pose_params() const { return 6 * frames.size(); }
  std::size_t num_free_pose_params() const { return 6 * (frames.size() - 1); }
  std::size_t num_point_params() const { return 3 * point_ids.size(); }
  std::size_t num_free_params() const { return num_free_pose_params() + num_point_params(); }
  std::size_t num_residuals() const {
    std::size_t n = 0;
    for (const auto& b : blocks) n += static_cast<std::size_t>(b.dim());
    return n;
  }
  std::size_t count(BlockKind k) const {
    return static_cast<std::size_t>(
        std::count_if(blocks.begin(), blocks.end(), [k](const auto& b) { return b.kind == k; }));
  }
  bool scale_constrained() const { return count(BlockKind::stereo) > 0; }

  /// Column offset of a free pose in the parameter vector, or -1 if anchored.
  int pose_column(int slot) const {
    if (slot == anchor_slot) return -1;
    return 6 * (slot < anchor_slot ? slot : slot - 1);
  }
  int point_column(int slot) const {
    return static_cast<int>(num_free_pose_params()) + 3 * slot;
  }
};

/// Applies a parameter increment laid out as [free poses | points].
inline ProblemState plus(const LeastSquaresProblem& problem, const ProblemState& state,
                         const Eigen::VectorXd& delta) {
  ProblemState out = state;
  for (std::size_t s = 0; s < state.poses.size(); ++s) {
    const int col = problem.pose_column(static_cast<int>(s));
    if (col < 0) continue;
    out.poses[s] = retract(state.poses[s], delta.segment<6>(col));
  }
  for (std::size_t p = 0; p < state.points.size(); ++p) {
    out.points[p] += delta.segment<3>(problem.point_column(static_cast<int>(p)));
  }
  return out;
}

/// Linearization of one residual block. Rows beyond dim() are zero.
struct BlockLinearization {
  bool valid = false;  // false when a point lies behind an involved camera
  Eigen::Vector3d residual = Eigen::Vector3d::Zero();
  Eigen::Matrix<double, 3, 6> d_pose = Eigen::Matrix<double, 3, 6>::Zero();
  Eigen::Matrix3d d_point = Eigen::Matrix3d::Zero();
};

namespace detail {

// Rows: d(pi_x, pi_y)/d(p_cam).
inline Eigen::Matrix<double, 2, 3> projection_jacobian(const PinholeIntrinsics& k,
                                                       const Point3& p) {
  const double iz = 1.0 / p.z();
  Eigen::Matrix<double, 2, 3> j;
  j << k.focal_x * iz, 0.0, -k.focal_x * p.x() * iz * iz,
       0.0, k.focal_y * iz, -k.focal_y * p.y() * iz * iz;
  return j;
}

// d(p_cam)/d(omega, v) for the left-multiplicative increment, and
// d(p_cam)/d(point). Both hold for left and right cameras since the right
// camera point differs from the left one by a constant.
inline Eigen::Matrix<double, 3, 6> camera_point_pose_jacobian(const Point3& p_left) {
  Eigen::Matrix<double, 3, 6> j;
  j.leftCols<3>() = -skew(p_left);
  j.rightCols<3>().setIdentity();
  return j;
}

}  // namespace detail

inline BlockLinearization linearize_block(const LeastSquaresProblem& problem,
                                          const ProblemState& state,
                                          const ResidualBlock& block) {
  BlockLinearization out;
  const CameraPose& pose = state.poses[block.frame_slot];
  const Point3& x = state.points[block.point_slot];
  const Point3 p_left = world_to_camera(pose, x);
  const Point3 p_right = p_left - problem.rig.offset();
  const PinholeIntrinsics& kl = problem.left_intrinsics[block.frame_slot];
  const PinholeIntrinsics& kr = problem.right_intrinsics[block.frame_slot];

  const Eigen::Matrix<double, 3, 6> dp_dpose = detail::camera_point_pose_jacobian(p_left);
  const Eigen::Matrix3d& dp_dx = pose.rotation.matrix();

  auto fill_row = [&](int row, double measured, const PinholeIntrinsics& k, const Point3& p,
                      int axis) {
    const Pixel predicted = project(k, p);
    const Eigen::Matrix<double, 1, 3> dpi = detail::projection_jacobian(k, p).row(axis);
    out.residual(row) = measured - predicted(axis);
    out.d_pose.row(row) = -dpi * dp_dpose;
    out.d_point.row(row) = -dpi * dp_dx;
  };

  if (block.kind == BlockKind::stereo) {
    if (!(p_left.z() > kDepthEpsilon) || !(p_right.z() > kDepthEpsilon)) return out;
    fill_row(0, block.measurement(0), kl, p_left, 0);
    fill_row(1, block.measurement(1), kr, p_right, 0);
    fill_row(2, block.measurement(2), kl, p_left, 1);
  } else {
    const bool left = block.side == Side::left;
    const Point3& p = left ? p_left : p_right;
    if (!(p.z() > kDepthEpsilon)) return out;
    const PinholeIntrinsics& k = left ? kl : kr;
    fill_row(0, block.measurement(0), k, p, 0);
    fill_row(1, block.measurement(1), k, p, 1);
  }
  out.valid = true;
  return out;
}

/// Robust block cost 0.5 * rho(|r|^2) with the Huber rho of width k, and the
/// IRLS weight rho'(|r|^2). With k <= 0 the cost is plain least squares.
struct RobustTerm {
  double cost = 0.0;
  double weight = 1.0;
};

inline RobustTerm huber(double squared_norm, double k) {
  if (k <= 0.0 || squared_norm <= k * k) return {0.5 * squared_norm, 1.0};
  const double norm = std::sqrt(squared_norm);
  return {0.5 * (2.0 * k * norm - k * k), k / norm};
}

struct Linearization {
  Eigen::VectorXd residuals;                  // stacked block residuals
  Eigen::SparseMatrix<double> jacobian;       // residuals x free parameters
  std::vector<std::size_t> excluded_blocks;   // indices of invalid blocks
};

inline void check_state(const LeastSquaresProblem& problem, const ProblemState& state) {
  if (state.poses.size() != problem.num_frames() ||
      state.points.size() != problem.num_points()) {
    throw NumericalFailure("state does not match problem dimensions");
  }
  for (const auto& p : state.poses) {
    if (!p.center.allFinite() || !p.rotation.matrix().allFinite()) {
      throw NumericalFailure("non-finite pose in state");
    }
  }
  for (const auto& x : state.points) {
    if (!x.allFinite()) throw NumericalFailure("non-finite point in state");
  }
}

/// Unweighted residual vector and analytic Jacobian w.r.t. the local
/// increments of the free variables. Invalid blocks contribute zero rows.
inline Linearization evaluate_residuals_and_jacobian(const LeastSquaresProblem& problem,
                                                     const ProblemState& state) {
  check_state(problem, state);
  Linearization out;
  out.residuals = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(problem.num_residuals()));
  std::vector<Eigen::Triplet<double>> triplets;
  Eigen::Index row = 0;
  for (std::size_t b = 0; b < problem.blocks.size(); ++b) {
    const ResidualBlock& block = problem.blocks[b];
    const BlockLinearization lin = linearize_block(problem, state, block);
    const int dim = block.dim();
    if (!lin.valid) {
      out.excluded_blocks.push_back(b);
      row += dim;
      continue;
    }
    const int pc = problem.pose_column(block.frame_slot);
    const int xc = problem.point_column(block.point_slot);
    for (int r = 0; r < dim; ++r) {
      out.residuals(row + r) = lin.residual(r);
      if (pc >= 0) {
        for (int c = 0; c < 6; ++c) triplets.emplace_back(row + r, pc + c, lin.d_pose(r, c));
      }
      for (int c = 0; c < 3; ++c) triplets.emplace_back(row + r, xc + c, lin.d_point(r, c));
    }
    row += dim;
  }
  out.jacobian.resize(static_cast<Eigen::Index>(problem.num_residuals()),
                      static_cast<Eigen::Index>(problem.num_free_params()));
  out.jacobian.setFromTriplets(triplets.begin(), triplets.end());
  if (!out.residuals.allFinite()) throw NumericalFailure("non-finite residual");
  for (const auto& t : triplets) {
    if (!std::isfinite(t.value())) throw NumericalFailure("non-finite Jacobian entry");
  }
  return out;
}

struct CostBreakdown {
  double robust = 0.0;     // sum of 0.5 * rho(|r_b|^2)
  double quadratic = 0.0;  // sum of 0.5 * |r_b|^2
  double stereo_sq = 0.0;  // sum of squared stereo residual components
  double mono_sq = 0.0;
  std::size_t stereo_rows = 0;
  std::size_t mono_rows = 0;
  std::size_t excluded = 0;

  double stereo_rms() const {
    return stereo_rows ? std::sqrt(stereo_sq / static_cast<double>(stereo_rows)) : 0.0;
  }
  double mono_rms() const {
    return mono_rows ? std::sqrt(mono_sq / static_cast<double>(mono_rows)) : 0.0;
  }
  double rms() const {
    const auto n = stereo_rows + mono_rows;
    return n ? std::sqrt((stereo_sq + mono_sq) / static_cast<double>(n)) : 0.0;
  }
};

inline CostBreakdown evaluate_cost(const LeastSquaresProblem& problem,
                                   const ProblemState& state) {
  CostBreakdown c;
  for (const auto& block : problem.blocks) {
    const BlockLinearization lin = linearize_block(problem, state, block);
    if (!lin.valid) {
      ++c.excluded;
      continue;
    }
    const double sq = lin.residual.squaredNorm();
    c.robust += huber(sq, problem.huber_width).cost;
    c.quadratic += 0.5 * sq;
    if (block.kind == BlockKind::stereo) {
      c.stereo_sq += sq;
      c.stereo_rows += 3;
    } else {
      c.mono_sq += sq;
      c.mono_rows += 2;
    }
  }
  return c;
}

namespace detail {

// Robust cost of the blocks of one frame slot under a candidate pose.
inline double frame_cost(const LeastSquaresProblem& problem, ProblemState& state, int slot,
                         const CameraPose& candidate,
                         const std::vector<std::size_t>& frame_blocks) {
  const CameraPose saved = state.poses[slot];
  state.poses[slot] = candidate;
  double cost = 0.0;
  for (std::size_t b : frame_blocks) {
    const BlockLinearization lin = linearize_block(problem, state, problem.blocks[b]);
    // Points behind the camera are strong evidence against the candidate.
    cost += lin.valid ? huber(lin.residual.squaredNorm(), problem.huber_width).cost : 1e12;
  }
  state.poses[slot] = saved;
  return cost;
}

}  // namespace detail

/// Builds the problem from a (scaled) reconstruction and its stereo pairing.
/// Each frame's rig pose starts from whichever registered camera (left, or
/// right shifted back by the baseline) explains that frame's observations
/// with lower robust cost.
inline LeastSquaresProblem build_problem(const Reconstruction& recon,
                                         const FeaturePairing& pairing, const RigModel& rig,
                                         double huber_width = 2.0) {
  LeastSquaresProblem problem;
  problem.rig = rig;
  problem.huber_width = huber_width;

  std::map<int, std::pair<const CameraRecord*, const CameraRecord*>> by_frame;
  for (const auto& c : recon.cameras) {
    auto& slot = by_frame[c.frame];
    (c.side == Side::left ? slot.first : slot.second) = &c;
  }
  std::unordered_map<int, int> frame_slot;
  std::vector<std::pair<std::optional<CameraPose>, std::optional<CameraPose>>> candidates;
  for (const auto& [frame, cams] : by_frame) {
    frame_slot.emplace(frame, static_cast<int>(problem.frames.size()));
    problem.frames.push_back(frame);
    const CameraRecord* l = cams.first;
    const CameraRecord* r = cams.second;
    problem.left_intrinsics.push_back(l ? l->intrinsics : r->intrinsics);
    problem.right_intrinsics.push_back(r ? r->intrinsics : l->intrinsics);
    candidates.emplace_back(l ? std::optional(l->pose) : std::nullopt,
                            r ? std::optional(rig.left_from_right(r->pose)) : std::nullopt);
  }

  std::unordered_map<int, int> point_slot;
  for (const auto& p : recon.points) {
    point_slot.emplace(p.id, static_cast<int>(problem.point_ids.size()));
    problem.point_ids.push_back(p.id);
    problem.initial.points.push_back(p.position);
  }

  const auto index = recon.camera_index();
  for (const auto& s : pairing.stereo) {
    ResidualBlock b;
    b.kind = BlockKind::stereo;
    b.frame_slot = frame_slot.at(s.frame);
    b.point_slot = point_slot.at(s.point_id);
    b.measurement = {s.u_left, s.u_right, s.v};
    problem.blocks.push_back(b);
  }
  for (const auto& m : pairing.mono) {
    const CameraRecord& cam = recon.cameras[index.at(m.camera_id)];
    ResidualBlock b;
    b.kind = BlockKind::mono;
    b.frame_slot = frame_slot.at(cam.frame);
    b.point_slot = point_slot.at(m.point_id);
    b.side = cam.side;
    b.measurement = {m.pixel.x(), m.pixel.y(), 0.0};
    problem.blocks.push_back(b);
  }
  if (problem.blocks.empty()) throw EmptyProblem("no observations to refine");

  std::vector<std::vector<std::size_t>> blocks_of_frame(problem.frames.size());
  for (std::size_t b = 0; b < problem.blocks.size(); ++b) {
    blocks_of_frame[problem.blocks[b].frame_slot].push_back(b);
  }
  for (const auto& [left, right] : candidates) {
    problem.initial.poses.push_back(left ? *left : *right);
  }
  for (std::size_t s = 0; s < candidates.size(); ++s) {
    const auto& [left, right] = candidates[s];
    if (!left || !right) continue;
    const int slot = static_cast<int>(s);
    const double cl = detail::frame_cost(problem, problem.initial, slot, *left, blocks_of_frame[s]);
    const double cr = detail::frame_cost(problem, problem.initial, slot, *right, blocks_of_frame[s]);
    problem.initial.poses[s] = cr < cl ? *right : *left;
  }
  problem.anchor_slot = 0;
  return problem;
}

/// Writes refined poses and points back: left cameras take the frame pose,
/// right cameras the rig-derived pose. Observations are left untouched.
inline Reconstruction apply_state(const LeastSquaresProblem& problem, const ProblemState& state,
                                  Reconstruction recon) {
  std::unordered_map<int, int> frame_slot;
  for (std::size_t s = 0; s < problem.frames.size(); ++s) {
    frame_slot.emplace(problem.frames[s], static_cast<int>(s));
  }
  for (auto& c : recon.cameras) {
    const CameraPose& left = state.poses[frame_slot.at(c.frame)];
    c.pose = c.side == Side::left ? left : problem.rig.right_from_left(left);
  }
  std::unordered_map<int, int> point_slot;
  for (std::size_t p = 0; p < problem.point_ids.size(); ++p) {
    point_slot.emplace(problem.point_ids[p], static_cast<int>(p));
  }
  for (auto& p : recon.points) p.position = state.points[point_slot.at(p.id)];
  return recon;
}

}  // namespace stereo_traj
