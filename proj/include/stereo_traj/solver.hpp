#pragma once

// Levenberg-Marquardt on the robust (Huber) cost with a Schur complement on
// the point variables.
//
// Each iteration reweights the blocks (IRLS), eliminates the 3x3 point
// blocks, solves the dense reduced pose system and back-substitutes the
// points. A step is accepted only if it strictly lowers the robust cost and
// does not drop further blocks behind a camera.

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <string>
#include <vector>

#include "stereo_traj/errors.hpp"
#include "stereo_traj/parallel.hpp"
#include "stereo_traj/problem.hpp"

namespace stereo_traj {

struct SolverConfig {
  int max_iterations = 100;
  double function_tolerance = 1e-9;   // relative cost decrease
  double gradient_tolerance = 1e-10;  // max-norm of J^T W r
  double initial_lambda = 1e-4;
  unsigned threads = 1;
  // Residuals below this many pixels RMS count as zero; at an exact solution
  // the cost is pure roundoff and no step can lower it.
  double zero_residual_px = 1e-9;
};

enum class Termination { gradient, function, zero_cost, max_iterations, stalled };

inline const char* to_string(Termination t) {
  switch (t) {
    case Termination::gradient: return "gradient_tolerance";
    case Termination::function: return "function_tolerance";
    case Termination::zero_cost: return "zero_cost";
    case Termination::max_iterations: return "max_iterations";
    case Termination::stalled: return "stalled";
  }
  return "?";
}

struct SolverReport {
  double initial_cost = 0.0;
  double final_cost = 0.0;
  int iterations = 0;
  int accepted_steps = 0;
  Termination termination = Termination::max_iterations;
  bool converged = false;  // false only when max_iterations hit with a large gradient
  double final_gradient = 0.0;
  std::vector<double> cost_history;  // initial cost, then each accepted cost
  CostBreakdown initial_breakdown;
  CostBreakdown final_breakdown;
  std::vector<std::size_t> excluded_blocks;
  double seconds = 0.0;
};

struct SolveResult {
  ProblemState state;
  SolverReport report;
};

namespace detail {

struct NormalEquations {
  std::size_t free_frames = 0;
  Eigen::MatrixXd pose_hessian;                           // 6F x 6F (free poses)
  Eigen::VectorXd pose_gradient;                          // 6F
  std::vector<Eigen::Matrix3d> point_hessian;             // per point
  std::vector<Eigen::Vector3d> point_gradient;            // per point
  // Per point: (free frame index, 6x3 coupling block).
  std::vector<std::vector<std::pair<int, Eigen::Matrix<double, 6, 3>>>> coupling;
  std::vector<std::size_t> excluded;

  double gradient_max_norm() const {
    double g = pose_gradient.size() ? pose_gradient.cwiseAbs().maxCoeff() : 0.0;
    for (const auto& v : point_gradient) g = std::max(g, v.cwiseAbs().maxCoeff());
    return g;
  }
};

inline NormalEquations build_normal_equations(const LeastSquaresProblem& problem,
                                              const ProblemState& state, unsigned threads) {
  std::vector<BlockLinearization> lins(problem.blocks.size());
  parallel_for(problem.blocks.size(), threads, [&](std::size_t b) {
    lins[b] = linearize_block(problem, state, problem.blocks[b]);
  });

  NormalEquations ne;
  ne.free_frames = problem.num_frames() - 1;
  const auto np = static_cast<Eigen::Index>(6 * ne.free_frames);
  ne.pose_hessian = Eigen::MatrixXd::Zero(np, np);
  ne.pose_gradient = Eigen::VectorXd::Zero(np);
  ne.point_hessian.assign(problem.num_points(), Eigen::Matrix3d::Zero());
  ne.point_gradient.assign(problem.num_points(), Eigen::Vector3d::Zero());
  ne.coupling.assign(problem.num_points(), {});

  for (std::size_t b = 0; b < problem.blocks.size(); ++b) {
    const ResidualBlock& block = problem.blocks[b];
    const BlockLinearization& lin = lins[b];
    if (!lin.valid) {
      ne.excluded.push_back(b);
      continue;
    }
    if (!lin.residual.allFinite() || !lin.d_pose.allFinite() || !lin.d_point.allFinite()) {
      throw NumericalFailure("non-finite residual or Jacobian in block " + std::to_string(b));
    }
    const double w = huber(lin.residual.squaredNorm(), problem.huber_width).weight;
    const int xp = block.point_slot;
    ne.point_hessian[xp] += w * lin.d_point.transpose() * lin.d_point;
    ne.point_gradient[xp] += w * lin.d_point.transpose() * lin.residual;
    const int pc = problem.pose_column(block.frame_slot);
    if (pc < 0) continue;
    ne.pose_hessian.block<6, 6>(pc, pc) += w * lin.d_pose.transpose() * lin.d_pose;
    ne.pose_gradient.segment<6>(pc) += w * lin.d_pose.transpose() * lin.residual;
    const Eigen::Matrix<double, 6, 3> c = w * lin.d_pose.transpose() * lin.d_point;
    auto& list = ne.coupling[xp];
    const int f = pc / 6;
    auto it = std::find_if(list.begin(), list.end(), [f](const auto& e) { return e.first == f; });
    if (it == list.end()) {
      list.emplace_back(f, c);
    } else {
      it->second += c;
    }
  }
  return ne;
}

// Solves (H + lambda D) delta = -g through the point Schur complement.
// Returns false if the reduced system is not positive definite.
inline bool solve_damped(const NormalEquations& ne, double lambda, Eigen::VectorXd& delta) {
  const auto np = ne.pose_hessian.rows();
  const std::size_t npts = ne.point_hessian.size();
  auto damp = [lambda](double d) { return lambda * std::clamp(d, 1e-6, 1e32); };

  Eigen::MatrixXd reduced = ne.pose_hessian;
  for (Eigen::Index i = 0; i < np; ++i) reduced(i, i) += damp(ne.pose_hessian(i, i));
  Eigen::VectorXd rhs = -ne.pose_gradient;

  std::vector<Eigen::Matrix3d> point_inverse(npts);
  std::vector<char> point_active(npts, 0);
  for (std::size_t p = 0; p < npts; ++p) {
    Eigen::Matrix3d h = ne.point_hessian[p];
    if (h.isZero(0.0)) continue;  // no valid observation this iteration
    for (int i = 0; i < 3; ++i) h(i, i) += damp(ne.point_hessian[p](i, i));
    const Eigen::LDLT<Eigen::Matrix3d> ldlt(h);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) return false;
    point_inverse[p] = ldlt.solve(Eigen::Matrix3d::Identity());
    point_active[p] = 1;
    const auto& list = ne.coupling[p];
    const Eigen::Vector3d hinv_g = point_inverse[p] * ne.point_gradient[p];
    for (const auto& [fa, ca] : list) {
      const Eigen::Matrix<double, 6, 3> ca_hinv = ca * point_inverse[p];
      rhs.segment<6>(6 * fa) += ca * hinv_g;
      for (const auto& [fb, cb] : list) {
        reduced.block<6, 6>(6 * fa, 6 * fb) -= ca_hinv * cb.transpose();
      }
    }
  }

  Eigen::VectorXd pose_delta = Eigen::VectorXd::Zero(np);
  if (np > 0) {
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(reduced);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) return false;
    pose_delta = ldlt.solve(rhs);
  }

  delta.resize(np + static_cast<Eigen::Index>(3 * npts));
  delta.head(np) = pose_delta;
  for (std::size_t p = 0; p < npts; ++p) {
    Eigen::Vector3d dx = Eigen::Vector3d::Zero();
    if (point_active[p]) {
      Eigen::Vector3d b = -ne.point_gradient[p];
      for (const auto& [f, c] : ne.coupling[p]) b -= c.transpose() * pose_delta.segment<6>(6 * f);
      dx = point_inverse[p] * b;
    }
    delta.segment<3>(np + static_cast<Eigen::Index>(3 * p)) = dx;
  }
  return delta.allFinite();
}

}  // namespace detail

/// Minimizes the robust cost of `problem` starting from `problem.initial`.
/// Returns the best iterate; when the iteration budget runs out with a
/// gradient above tolerance, `report.converged` is false.
inline SolveResult optimize(const LeastSquaresProblem& problem, const SolverConfig& config = {}) {
  const auto start = std::chrono::steady_clock::now();
  check_state(problem, problem.initial);
  SolveResult result{problem.initial, {}};
  SolverReport& report = result.report;

  report.initial_breakdown = evaluate_cost(problem, result.state);
  double cost = report.initial_breakdown.robust;
  std::size_t excluded = report.initial_breakdown.excluded;
  if (!std::isfinite(cost)) throw NumericalFailure("initial cost is not finite");
  report.initial_cost = cost;
  report.cost_history.push_back(cost);

  const double zero_floor = 0.5 * static_cast<double>(problem.num_residuals()) *
                            config.zero_residual_px * config.zero_residual_px;
  double lambda = config.initial_lambda;
  double nu = 2.0;
  bool done = false;
  detail::NormalEquations ne;
  bool need_linearization = true;

  while (!done) {
    if (need_linearization) {
      ne = detail::build_normal_equations(problem, result.state, config.threads);
      need_linearization = false;
      report.final_gradient = ne.gradient_max_norm();
      if (cost <= zero_floor) {
        report.termination = Termination::zero_cost;
        break;
      }
      if (report.final_gradient < config.gradient_tolerance) {
        report.termination = Termination::gradient;
        break;
      }
    }
    if (report.iterations >= config.max_iterations) {
      report.termination = Termination::max_iterations;
      break;
    }
    ++report.iterations;

    Eigen::VectorXd delta;
    if (!detail::solve_damped(ne, lambda, delta)) {
      lambda *= nu;
      nu *= 2.0;
      if (lambda > 1e16) {
        report.termination = Termination::stalled;
        break;
      }
      continue;
    }
    const ProblemState candidate = plus(problem, result.state, delta);
    const CostBreakdown trial = evaluate_cost(problem, candidate);
    const double new_cost = trial.robust;
    if (!std::isfinite(new_cost)) throw NumericalFailure("non-finite cost after step");

    // Excluded blocks cost nothing, so a step that pushes points behind a
    // camera could look like progress; such steps are rejected.
    if (new_cost < cost && trial.excluded <= excluded) {
      excluded = trial.excluded;
      const double relative_decrease = (cost - new_cost) / cost;
      result.state = candidate;
      cost = new_cost;
      report.cost_history.push_back(cost);
      ++report.accepted_steps;
      lambda = std::max(lambda / 3.0, 1e-12);
      nu = 2.0;
      need_linearization = true;
      if (relative_decrease < config.function_tolerance) {
        ne = detail::build_normal_equations(problem, result.state, config.threads);
        report.final_gradient = ne.gradient_max_norm();
        report.termination = Termination::function;
        done = true;
      }
    } else {
      lambda *= nu;
      nu *= 2.0;
      if (lambda > 1e16) {
        report.termination = Termination::stalled;
        done = true;
      }
    }
  }

  report.converged = !(report.termination == Termination::max_iterations &&
                       report.final_gradient >= config.gradient_tolerance);
  report.final_cost = cost;
  report.final_breakdown = evaluate_cost(problem, result.state);
  report.excluded_blocks = ne.excluded;
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace stereo_traj
