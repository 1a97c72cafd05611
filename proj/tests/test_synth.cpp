#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "stereo_traj/flow.hpp"
#include "stereo_traj/stereo.hpp"
#include "stereo_traj/synth.hpp"
#include "stereo_traj/trajectory.hpp"

using namespace stereo_traj;

namespace {

SceneConfig small(MotionFamily family = MotionFamily::linear) {
  SceneConfig cfg;
  cfg.frames = 8;
  cfg.objects[0].family = family;
  return cfg;
}

}  // namespace

TEST(Synth, SameSeedSameOutput) {
  NoiseConfig n;
  n.pixel_sigma = 0.5;
  n.pose_rot_sigma = 1.0;
  n.scale_min = 0.1;
  n.scale_max = 10.0;
  n.outlier_camera_count = 1;
  const auto a = render_reconstructions(generate_scene(small(), 3), n, 3);
  const auto b = render_reconstructions(generate_scene(small(), 3), n, 3);
  EXPECT_EQ(to_json(a.object).dump(), to_json(b.object).dump());
  EXPECT_EQ(to_json(a.background).dump(), to_json(b.background).dump());
  EXPECT_EQ(a.outlier_cameras, b.outlier_cameras);
  const auto c = render_reconstructions(generate_scene(small(), 4), n, 4);
  EXPECT_NE(to_json(a.object).dump(), to_json(c.object).dump());
}

TEST(Synth, SceneJsonRoundTrip) {
  const SceneGroundTruth s = generate_scene(small(MotionFamily::piecewise), 5);
  const SceneGroundTruth back = scene_from_json(to_json(s));
  EXPECT_EQ(to_json(back).dump(), to_json(s).dump());
  EXPECT_EQ(back.frames(), s.frames());
}

TEST(Synth, MotionFamilies) {
  SceneConfig cfg = small(MotionFamily::arc);
  const SceneGroundTruth arc = generate_scene(cfg, 6);
  const ObjectMotionConfig& m = cfg.objects[0];
  const Eigen::Vector3d center = m.start - Eigen::Vector3d(m.arc_radius, 0, 0);
  for (const auto& pose : arc.objects[0].poses) {
    const Eigen::Vector3d d = pose.translation - center;
    EXPECT_NEAR(std::hypot(d.x(), d.z()), m.arc_radius, 1e-9);
    EXPECT_NEAR(d.y(), 0.0, 1e-12);
  }

  cfg = small(MotionFamily::piecewise);
  const SceneGroundTruth pw = generate_scene(cfg, 6);
  const auto& p = pw.objects[0].poses;
  const int knee = cfg.frames / 2;
  const Eigen::Vector3d before = p[knee].translation - p[knee - 1].translation;
  const Eigen::Vector3d after = p[knee + 1].translation - p[knee].translation;
  EXPECT_NEAR(before.norm(), after.norm(), 1e-12);
  EXPECT_NEAR(std::acos(before.dot(after) / before.squaredNorm()), cfg.objects[0].turn_angle,
              1e-9);
  // Heading follows gradually and settles on the new direction.
  const double step = cfg.objects[0].turn_angle / cfg.objects[0].turn_frames;
  for (std::size_t f = 1; f < p.size(); ++f) {
    EXPECT_LE(p[f].rotation.angle_to(p[f - 1].rotation), step + 1e-12);
  }
  EXPECT_NEAR(p.back().rotation.angle_to(p[knee].rotation),
              std::min(cfg.objects[0].turn_angle, step * (cfg.frames - 1 - knee)), 1e-9);

  cfg = small();
  cfg.objects[0].velocity.setZero();
  const SceneGroundTruth still = generate_scene(cfg, 6);
  EXPECT_NEAR(still.object_path_length(), 0.0, 1e-15);
}

TEST(Synth, NoiselessObservationsReproject) {
  NoiseConfig n;
  n.random_gauge = false;
  const SceneGroundTruth scene = generate_scene(small(), 7);
  const auto r = render_reconstructions(scene, n, 7);
  for (const Reconstruction* rec : {&r.object, &r.background}) {
    double worst = 0.0;
    for (const auto& p : rec->points) {
      for (const auto& o : p.observations) {
        const CameraRecord* cam = rec->camera(o.camera_id);
        ASSERT_TRUE(cam);
        EXPECT_EQ(o.camera_id, 2 * cam->frame + (cam->side == Side::left ? 0 : 1));
        const Pixel px = project(cam->intrinsics, world_to_camera(cam->pose, p.position));
        worst = std::max(worst, (px - o.pixel).norm());
      }
    }
    EXPECT_LT(worst, 1e-9);
  }
}

TEST(Synth, ObjectScaleShowsInBaselines) {
  NoiseConfig n;
  n.scale_min = n.scale_max = 3.0;
  const SceneGroundTruth scene = generate_scene(small(), 8);
  const auto r = render_reconstructions(scene, n, 8);
  EXPECT_DOUBLE_EQ(r.object_gauge.scale, 3.0);
  EXPECT_NEAR(median_baseline(r.object), 3.0 * scene.config.baseline, 1e-9);
  EXPECT_NEAR(estimate_scale(r.object, scene.config.baseline), 1.0 / 3.0, 1e-9);
  EXPECT_NEAR(median_baseline(r.background), scene.config.baseline, 1e-9);
}

TEST(Synth, PixelNoiseHasTheRequestedSpread) {
  NoiseConfig n;
  n.pixel_sigma = 0.5;
  n.random_gauge = false;
  const SceneGroundTruth scene = generate_scene(small(), 9);
  const auto r = render_reconstructions(scene, n, 9);
  double sum = 0.0, sq = 0.0;
  std::size_t count = 0;
  for (const auto& p : r.background.points) {
    for (const auto& o : p.observations) {
      const int f = o.camera_id / 2;
      const Side side = o.camera_id % 2 ? Side::right : Side::left;
      const auto truth = scene.observe(f, side, scene.background[p.id]);
      ASSERT_TRUE(truth);
      const Pixel d = o.pixel - *truth;
      sum += d.x() + d.y();
      sq += d.squaredNorm();
      count += 2;
    }
  }
  ASSERT_GT(count, 1000u);
  const double mean = sum / count;
  const double sd = std::sqrt(sq / count - mean * mean);
  EXPECT_NEAR(mean, 0.0, 0.05);
  EXPECT_GT(sd, 0.45);
  EXPECT_LT(sd, 0.55);
}

TEST(Synth, OutlierCamerasAreRotatedByNinetyDegrees) {
  NoiseConfig n;
  n.outlier_camera_count = 2;
  n.random_gauge = false;
  const SceneGroundTruth scene = generate_scene(small(), 10);
  const auto clean = render_reconstructions(scene, NoiseConfig{.random_gauge = false}, 10);
  const auto r = render_reconstructions(scene, n, 10);
  ASSERT_EQ(r.outlier_cameras.size(), 2u);
  for (std::size_t i = 0; i < r.object.cameras.size(); ++i) {
    const auto& a = r.object.cameras[i].pose;
    const auto& b = clean.object.cameras[i].pose;
    const bool outlier = std::count(r.outlier_cameras.begin(), r.outlier_cameras.end(),
                                    r.object.cameras[i].id);
    EXPECT_NEAR(a.rotation.angle_to(b.rotation), outlier ? M_PI / 2 : 0.0, 1e-9);
    EXPECT_LT((a.center - b.center).norm(), 1e-12);
  }
}

TEST(Synth, FlowCarriesMasksForward) {
  SceneConfig cfg = small();
  cfg.frames = 5;
  const SceneGroundTruth scene = generate_scene(cfg, 11);
  const RenderedImages img = render_images(scene);
  auto object_mask = [](const LabelImage& l, int f, Side side) {
    const auto all = extract_instances(l, f, side, 1);
    EXPECT_EQ(all.size(), 1u);
    return all.front();
  };
  // Hull edges differ slightly from the box silhouette the flow is cast on.
  for (int f = 0; f + 1 < cfg.frames; ++f) {
    const InstanceMask m = object_mask(img.left[f], f, Side::left);
    EXPECT_GT(m.area(), 500u);
    const InstanceMask next = object_mask(img.left[f + 1], f + 1, Side::left);
    EXPECT_GT(overlap(warp_mask(m, img.flow_ln[f]), next), 0.9) << "frame " << f;
    const InstanceMask right = object_mask(img.right[f], f, Side::right);
    EXPECT_GT(overlap(warp_mask(m, img.flow_lr[f]), right), 0.9) << "frame " << f;
  }
}

TEST(Score, InvariantToRigidGauge) {
  const SceneGroundTruth scene = generate_scene(small(), 12);
  const auto r = render_reconstructions(scene, {}, 12);
  Trajectory t = compose_trajectory(r.object, r.background, pair_frames(r.object, r.background));
  const TrajectoryScore s0 = score_trajectory(t, scene);
  // Perturb the estimate so the score is not trivially zero.
  for (auto& f : t.frames) {
    for (auto& p : f.points) p.position.x() += 0.01 * p.point_id;
  }
  const TrajectoryScore s1 = score_trajectory(t, scene);
  const Rotation g = Rotation::about_axis(Eigen::Vector3d(1, -2, 0.5), 2.0);
  const Eigen::Vector3d shift(4, -7, 30);
  for (auto& f : t.frames) {
    for (auto& p : f.points) p.position = g * p.position + shift;
    f.background_left_center = g * f.background_left_center + shift;
    f.background_right_center = g * f.background_right_center + shift;
  }
  const TrajectoryScore s2 = score_trajectory(t, scene);
  EXPECT_LT(s0.rmse, 1e-9);
  EXPECT_GT(s1.rmse, 1e-3);
  EXPECT_NEAR(s2.rmse, s1.rmse, 1e-9);
  EXPECT_NEAR(s1.relative_rmse(), s1.rmse / scene.object_path_length(), 1e-15);
}
