#include <gtest/gtest.h>

#include <random>

#include "stereo_traj/problem.hpp"
#include "stereo_traj/synth.hpp"

using namespace stereo_traj;

namespace {

struct Fixture {
  SceneGroundTruth scene;
  RenderedReconstructions recons;
};

Fixture make(std::uint64_t seed, const NoiseConfig& noise = {}, int frames = 5) {
  SceneConfig cfg;
  cfg.frames = frames;
  cfg.background_points = 30;
  cfg.object_points = 12;
  Fixture f{generate_scene(cfg, seed), {}};
  f.recons = render_reconstructions(f.scene, noise, seed);
  return f;
}

LeastSquaresProblem problem_for(const Reconstruction& r, double baseline) {
  return build_problem(r, pair_stereo_features(r), RigModel(baseline), 2.0);
}

// Residual vector with excluded blocks zeroed, matching the analytic layout.
Eigen::VectorXd residuals(const LeastSquaresProblem& p, const ProblemState& s) {
  return evaluate_residuals_and_jacobian(p, s).residuals;
}

}  // namespace

TEST(Huber, QuadraticInsideLinearOutsideAndBounded) {
  EXPECT_DOUBLE_EQ(huber(1.0, 2.0).cost, 0.5);
  EXPECT_DOUBLE_EQ(huber(1.0, 2.0).weight, 1.0);
  EXPECT_DOUBLE_EQ(huber(16.0, 2.0).cost, 0.5 * (2 * 2 * 4 - 4));
  EXPECT_DOUBLE_EQ(huber(16.0, 2.0).weight, 0.5);
  // Continuity at the knee and rho <= quadratic everywhere.
  EXPECT_NEAR(huber(4.0 + 1e-12, 2.0).cost, huber(4.0, 2.0).cost, 1e-11);
  for (double sq = 0.0; sq < 1e4; sq = sq * 1.3 + 0.01) {
    EXPECT_LE(huber(sq, 2.0).cost, 0.5 * sq + 1e-12);
  }
  EXPECT_DOUBLE_EQ(huber(100.0, 0.0).cost, 50.0);
}

TEST(Problem, BlocksFollowPairing) {
  const Fixture f = make(1);
  const Reconstruction bg = apply_scale(f.recons.background, 1.0 / f.scene.config.baseline);
  const FeaturePairing fp = pair_stereo_features(bg);
  const LeastSquaresProblem p = build_problem(bg, fp, RigModel(1.0));
  EXPECT_EQ(p.count(BlockKind::stereo), fp.stereo.size());
  EXPECT_EQ(p.count(BlockKind::mono), fp.mono.size());
  EXPECT_EQ(p.num_residuals(), 3 * fp.stereo.size() + 2 * fp.mono.size());
  EXPECT_EQ(p.num_frames(), 5u);
  EXPECT_EQ(p.pose_column(0), -1);
  EXPECT_EQ(p.pose_column(1), 0);
  EXPECT_EQ(p.point_column(0), 24);
  EXPECT_TRUE(p.scale_constrained());
}

TEST(Problem, ZeroResidualAtGroundTruth) {
  NoiseConfig n;
  n.random_gauge = false;
  const Fixture f = make(2, n);
  const LeastSquaresProblem p = problem_for(f.recons.background, f.scene.config.baseline);
  const CostBreakdown c = evaluate_cost(p, p.initial);
  EXPECT_LT(c.rms(), 1e-9);
  EXPECT_EQ(c.excluded, 0u);
}

TEST(Problem, AnalyticJacobianMatchesCentralDifferences) {
  NoiseConfig n;
  n.pixel_sigma = 1.0;
  n.pose_rot_sigma = 0.5;
  n.pose_trans_sigma = 0.01;
  n.point_sigma = 0.01;
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const Fixture f = make(100 + seed, n, 3);
    const Reconstruction r = apply_scale(f.recons.object, 1.0 / median_baseline(f.recons.object));
    const LeastSquaresProblem p = problem_for(r, 1.0);
    const ProblemState& s = p.initial;
    const Eigen::MatrixXd analytic = evaluate_residuals_and_jacobian(p, s).jacobian;
    const double h = 1e-6;
    for (Eigen::Index k = 0; k < analytic.cols(); ++k) {
      Eigen::VectorXd d = Eigen::VectorXd::Zero(analytic.cols());
      d(k) = h;
      const Eigen::VectorXd numeric =
          (residuals(p, plus(p, s, d)) - residuals(p, plus(p, s, -d))) / (2 * h);
      for (Eigen::Index i = 0; i < analytic.rows(); ++i) {
        const double a = analytic(i, k), num = numeric(i);
        const double scale = std::max({std::abs(a), std::abs(num), 1.0});
        worst = std::max(worst, std::abs(a - num) / scale);
      }
    }
  }
  EXPECT_LT(worst, 1e-5);
}

TEST(Problem, PointBehindCameraIsExcludedNotFatal) {
  NoiseConfig n;
  n.random_gauge = false;
  const Fixture f = make(3, n);
  const LeastSquaresProblem p = problem_for(f.recons.background, f.scene.config.baseline);
  ProblemState s = p.initial;
  // Mirror one point behind frame 0.
  const CameraPose& c0 = s.poses[0];
  const Point3 pc = world_to_camera(c0, s.points[0]);
  s.points[0] = camera_to_world(c0, Point3(pc.x(), pc.y(), -pc.z()));
  const Linearization lin = evaluate_residuals_and_jacobian(p, s);
  EXPECT_FALSE(lin.excluded_blocks.empty());
  EXPECT_GT(evaluate_cost(p, s).excluded, 0u);
}

TEST(Problem, NonFiniteStateIsANumericalFailure) {
  const Fixture f = make(4);
  const LeastSquaresProblem p = problem_for(f.recons.background, f.scene.config.baseline);
  ProblemState s = p.initial;
  s.points[1].x() = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(evaluate_residuals_and_jacobian(p, s), NumericalFailure);
  s.points.pop_back();
  EXPECT_THROW(check_state(p, s), NumericalFailure);
}

TEST(Problem, PicksRightCameraWhenLeftIsCorrupted) {
  NoiseConfig n;
  n.random_gauge = false;
  const Fixture f = make(5, n);
  Reconstruction bg = f.recons.background;
  const CameraPose truth = bg.camera_at(2, Side::left)->pose;
  for (auto& c : bg.cameras) {
    if (c.frame == 2 && c.side == Side::left) {
      c.pose.rotation = Rotation::about_axis(Eigen::Vector3d(1, 2, 0), M_PI / 2) * c.pose.rotation;
    }
  }
  const LeastSquaresProblem p = problem_for(bg, f.scene.config.baseline);
  EXPECT_LT(p.initial.poses[2].rotation.angle_to(truth.rotation), 1e-9);
  EXPECT_LT((p.initial.poses[2].center - truth.center).norm(), 1e-9);
}

TEST(Problem, ApplyStateEnforcesRigAndKeepsObservations) {
  NoiseConfig n;
  n.pose_rot_sigma = 1.0;
  n.pose_trans_sigma = 0.02;
  const Fixture f = make(6, n);
  const Reconstruction& bg = f.recons.background;
  const LeastSquaresProblem p = problem_for(bg, 0.8);
  const Reconstruction out = apply_state(p, p.initial, bg);
  for (const auto& [frame, b] : stereo_baselines(out)) EXPECT_NEAR(b, 0.8, 1e-12);
  for (int fr : out.frames()) {
    EXPECT_EQ(out.camera_at(fr, Side::left)->pose.rotation,
              out.camera_at(fr, Side::right)->pose.rotation);
  }
  ASSERT_EQ(out.points.size(), bg.points.size());
  for (std::size_t i = 0; i < bg.points.size(); ++i) {
    ASSERT_EQ(out.points[i].observations.size(), bg.points[i].observations.size());
    for (std::size_t k = 0; k < bg.points[i].observations.size(); ++k) {
      EXPECT_EQ(out.points[i].observations[k].camera_id, bg.points[i].observations[k].camera_id);
      EXPECT_EQ(out.points[i].observations[k].pixel, bg.points[i].observations[k].pixel);
    }
  }
}

TEST(Problem, EmptyProblem) {
  Reconstruction r;
  r.cameras.push_back({0, 0, Side::left, {}, {500, 500, 320, 240}});
  EXPECT_THROW(build_problem(r, {}, RigModel(1.0)), EmptyProblem);
}
