#pragma once

// Stereo refinement of one reconstruction: pair stereo features, rescale to
// the nominal rig baseline, then solve the rig-constrained problem.

#include "json.hpp"

#include <string>

#include "stereo_traj/problem.hpp"
#include "stereo_traj/recon.hpp"
#include "stereo_traj/solver.hpp"
#include "stereo_traj/stereo.hpp"

namespace stereo_traj {

struct RefineConfig {
  double y_tolerance = kDefaultYTolerance;
  double huber_width = 2.0;
  double nominal_baseline = 1.0;
  SolverConfig solver;
};

struct RefineReport {
  double applied_scale = 1.0;
  double median_baseline_before = 0.0;
  std::size_t stereo_observations = 0;
  std::size_t mono_observations = 0;
  bool scale_constrained = true;
  SolverReport solver;
};

struct RefineResult {
  Reconstruction reconstruction;
  RefineReport report;
};

inline RefineResult refine_reconstruction(const Reconstruction& recon,
                                          const RefineConfig& config = {}) {
  RefineResult out;
  RefineReport& report = out.report;
  const FeaturePairing pairing = pair_stereo_features(recon, config.y_tolerance);
  report.stereo_observations = pairing.stereo.size();
  report.mono_observations = pairing.mono.size();
  report.median_baseline_before = median_baseline(recon);
  report.applied_scale = estimate_scale(recon, config.nominal_baseline);
  const Reconstruction scaled = apply_scale(recon, report.applied_scale);

  const LeastSquaresProblem problem =
      build_problem(scaled, pairing, RigModel(config.nominal_baseline), config.huber_width);
  report.scale_constrained = problem.scale_constrained();
  SolveResult solved = optimize(problem, config.solver);
  report.solver = std::move(solved.report);
  out.reconstruction = apply_state(problem, solved.state, scaled);
  return out;
}

inline nlohmann::json to_json(const CostBreakdown& c) {
  return {{"robust_cost", c.robust},
          {"quadratic_cost", c.quadratic},
          {"stereo_rms_px", c.stereo_rms()},
          {"mono_rms_px", c.mono_rms()},
          {"rms_px", c.rms()},
          {"excluded_blocks", c.excluded}};
}

inline nlohmann::json to_json(const RefineReport& r) {
  const SolverReport& s = r.solver;
  return {{"applied_scale", r.applied_scale},
          {"median_baseline_before", r.median_baseline_before},
          {"stereo_observations", r.stereo_observations},
          {"mono_observations", r.mono_observations},
          {"scale_constrained", r.scale_constrained},
          {"initial_cost", s.initial_cost},
          {"final_cost", s.final_cost},
          {"iterations", s.iterations},
          {"accepted_steps", s.accepted_steps},
          {"termination", to_string(s.termination)},
          {"converged", s.converged},
          {"final_gradient_max_norm", s.final_gradient},
          {"cost_history", s.cost_history},
          {"initial", to_json(s.initial_breakdown)},
          {"final", to_json(s.final_breakdown)},
          {"excluded_block_indices", s.excluded_blocks}};
}

}  // namespace stereo_traj
