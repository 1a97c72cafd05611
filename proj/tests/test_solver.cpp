#include <gtest/gtest.h>

#include "stereo_traj/refine.hpp"
#include "stereo_traj/solver.hpp"
#include "stereo_traj/synth.hpp"

using namespace stereo_traj;

namespace {

SceneGroundTruth scene_for(std::uint64_t seed, int frames = 8) {
  SceneConfig cfg;
  cfg.frames = frames;
  cfg.background_points = 60;
  cfg.object_points = 20;
  return generate_scene(cfg, seed);
}

LeastSquaresProblem problem_for(const Reconstruction& r, double baseline) {
  return build_problem(r, pair_stereo_features(r), RigModel(baseline), 2.0);
}

void expect_monotone(const SolverReport& r) {
  ASSERT_FALSE(r.cost_history.empty());
  EXPECT_EQ(r.cost_history.front(), r.initial_cost);
  EXPECT_EQ(r.cost_history.back(), r.final_cost);
  EXPECT_EQ(r.cost_history.size(), static_cast<std::size_t>(r.accepted_steps) + 1);
  for (std::size_t i = 1; i < r.cost_history.size(); ++i) {
    EXPECT_LE(r.cost_history[i], r.cost_history[i - 1]) << "step " << i;
  }
}

}  // namespace

TEST(Solver, GroundTruthIsAFixedPoint) {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const SceneGroundTruth scene = scene_for(seed);
    const RenderedReconstructions r = render_reconstructions(scene, {}, seed);
    for (const Reconstruction* rec : {&r.object, &r.background}) {
      const SolveResult s = optimize(problem_for(*rec, median_baseline(*rec)));
      EXPECT_LE(s.report.iterations, 2);
      EXPECT_LE(s.report.final_cost, s.report.initial_cost);
      EXPECT_TRUE(s.report.converged);
    }
  }
}

TEST(Solver, NoisyRunsDescendMonotonically) {
  NoiseConfig n;
  n.pixel_sigma = 0.5;
  n.pose_rot_sigma = 1.0;
  n.pose_trans_sigma = 0.01;
  n.point_sigma = 0.01;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const SceneGroundTruth scene = scene_for(10 + seed);
    const RenderedReconstructions r = render_reconstructions(scene, n, seed);
    RefineConfig cfg;
    cfg.nominal_baseline = scene.config.baseline;
    const RefineResult out = refine_reconstruction(r.background, cfg);
    const SolverReport& rep = out.report.solver;
    expect_monotone(rep);
    EXPECT_TRUE(rep.converged);
    EXPECT_LT(rep.final_cost, rep.initial_cost);
    EXPECT_GT(rep.accepted_steps, 0);
    // Residuals end near the injected pixel noise.
    EXPECT_LT(rep.final_breakdown.stereo_rms(), 1.2 * n.pixel_sigma);
  }
}

TEST(Solver, NoiselessPerturbationIsUndone) {
  NoiseConfig n;
  n.pose_rot_sigma = 2.0;
  n.pose_trans_sigma = 0.02;
  n.point_sigma = 0.02;
  const SceneGroundTruth scene = scene_for(21);
  const RenderedReconstructions r = render_reconstructions(scene, n, 21);
  const RefineResult out = refine_reconstruction(r.object);
  expect_monotone(out.report.solver);
  EXPECT_LT(out.report.solver.final_breakdown.rms(), 1e-6);
}

TEST(Solver, BaselinesAreExactAfterRefinement) {
  NoiseConfig n;
  n.pixel_sigma = 0.5;
  n.pose_rot_sigma = 1.0;
  n.pose_trans_sigma = 0.01;
  n.scale_min = 0.2;
  n.scale_max = 5.0;
  const SceneGroundTruth scene = scene_for(30);
  const RenderedReconstructions r = render_reconstructions(scene, n, 30);
  for (double nominal : {1.0, 0.5, 3.0}) {
    RefineConfig cfg;
    cfg.nominal_baseline = nominal;
    const Reconstruction out = refine_reconstruction(r.object, cfg).reconstruction;
    for (const auto& [frame, b] : stereo_baselines(out)) {
      EXPECT_NEAR(b, nominal, 1e-12 * nominal) << "frame " << frame;
    }
  }
}

TEST(Solver, IterationBudgetIsAFlagNotAnError) {
  NoiseConfig n;
  n.pixel_sigma = 1.0;
  n.pose_rot_sigma = 3.0;
  n.pose_trans_sigma = 0.05;
  const SceneGroundTruth scene = scene_for(40);
  const RenderedReconstructions r = render_reconstructions(scene, n, 40);
  RefineConfig cfg;
  cfg.solver.max_iterations = 1;
  const RefineResult out = refine_reconstruction(r.background, cfg);
  EXPECT_EQ(out.report.solver.termination, Termination::max_iterations);
  EXPECT_FALSE(out.report.solver.converged);
  EXPECT_EQ(out.report.solver.iterations, 1);
  expect_monotone(out.report.solver);
  // Best iterate is still returned with the rig enforced.
  for (const auto& [frame, b] : stereo_baselines(out.reconstruction)) EXPECT_NEAR(b, 1.0, 1e-12);
}

TEST(Solver, ThreadCountDoesNotChangeTheResult) {
  NoiseConfig n;
  n.pixel_sigma = 0.5;
  n.pose_rot_sigma = 1.0;
  const SceneGroundTruth scene = scene_for(50);
  const RenderedReconstructions r = render_reconstructions(scene, n, 50);
  RefineConfig one, four;
  four.solver.threads = 4;
  const Reconstruction a = refine_reconstruction(r.background, one).reconstruction;
  const Reconstruction b = refine_reconstruction(r.background, four).reconstruction;
  EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
}

TEST(Solver, HuberLimitsAnOutlierCamera) {
  NoiseConfig n;
  n.pixel_sigma = 0.5;
  n.outlier_camera_count = 1;
  const SceneGroundTruth scene = scene_for(60, 10);
  const RenderedReconstructions r = render_reconstructions(scene, n, 60);
  ASSERT_EQ(r.outlier_cameras.size(), 1u);
  RefineConfig cfg;
  cfg.nominal_baseline = scene.config.baseline;
  const RefineResult out = refine_reconstruction(r.object, cfg);
  expect_monotone(out.report.solver);
  // The object keeps its true shape up to the known gauge scale.
  const auto& truth = scene.objects[0].points;
  const auto& pts = out.reconstruction.points;
  const double s = r.object_gauge.scale;
  double worst = 0.0;
  for (std::size_t i = 1; i < pts.size(); ++i) {
    const double est = (pts[i].position - pts[0].position).norm();
    const double ref = (truth[pts[i].id] - truth[pts[0].id]).norm();
    worst = std::max(worst, std::abs(est - ref) / ref);
  }
  EXPECT_LT(worst, 0.05) << "gauge scale " << s;
}
