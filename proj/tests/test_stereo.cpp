#include <gtest/gtest.h>

#include <random>

#include "stereo_traj/stereo.hpp"

using namespace stereo_traj;

namespace {

const PinholeIntrinsics kK{500, 500, 320, 240};

// Frames 0..n-1, left/right per frame with the given baselines.
Reconstruction rig_recon(const std::vector<double>& baselines) {
  Reconstruction r;
  int id = 0;
  for (std::size_t f = 0; f < baselines.size(); ++f) {
    const CameraPose left{Rotation::exp(Eigen::Vector3d(0.0, 0.02 * f, 0.0)), Point3(0, 0, f)};
    r.cameras.push_back({id++, int(f), Side::left, left, kK});
    r.cameras.push_back({id++, int(f), Side::right, RigModel(baselines[f]).right_from_left(left), kK});
  }
  PointRecord p;
  p.id = 0;
  p.position = Point3(0, 0, 20);
  p.observations = {{0, Pixel(300, 200)}, {1, Pixel(280, 201)}};
  r.points.push_back(p);
  return r;
}

}  // namespace

TEST(RigModel, RightFromLeftIsRigid) {
  const RigModel rig(0.7);
  const CameraPose left{Rotation::exp(Eigen::Vector3d(0.1, -0.4, 0.3)), Point3(1, 2, 3)};
  const CameraPose right = rig.right_from_left(left);
  EXPECT_NEAR((right.center - left.center).norm(), 0.7, 1e-15);
  EXPECT_EQ(right.rotation, left.rotation);
  // A point in the left frame is shifted by -b along x in the right frame.
  const Point3 p(0.3, -1.0, 8.0);
  EXPECT_LT((world_to_camera(right, p) - (world_to_camera(left, p) - Point3(0.7, 0, 0))).norm(),
            1e-12);
  EXPECT_LT((rig.left_from_right(right).center - left.center).norm(), 1e-15);
  EXPECT_THROW(RigModel(0.0), NonPositiveScale);
  EXPECT_THROW(RigModel(-1.0), NonPositiveScale);
}

TEST(Pairing, PropertyOverRandomObservations) {
  // Random y differences straddling the tolerance; every emitted pair must
  // satisfy |dy| < 3 and v must be the mean of the two rows.
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> y(0.0, 480.0), dy(-6.0, 6.0), x(0.0, 640.0);
  Reconstruction r;
  r.cameras.push_back({0, 0, Side::left, {}, kK});
  r.cameras.push_back({1, 0, Side::right, {Rotation(), Point3(1, 0, 0)}, kK});
  std::size_t expected_pairs = 0;
  std::map<int, std::pair<double, double>> rows;
  for (int j = 0; j < 10000; ++j) {
    const double yl = y(rng);
    double yr = yl + dy(rng);
    if (j % 97 == 0) yr = yl + 3.0;  // exactly at the tolerance: not a pair
    PointRecord p;
    p.id = j;
    p.observations = {{0, Pixel(x(rng), yl)}, {1, Pixel(x(rng), yr)}};
    r.points.push_back(p);
    rows[j] = {yl, yr};
    expected_pairs += std::abs(yl - yr) < 3.0;
  }
  const FeaturePairing fp = pair_stereo_features(r, 3.0);
  EXPECT_EQ(fp.stereo.size(), expected_pairs);
  EXPECT_EQ(fp.stereo.size() * 2 + fp.mono.size(), 20000u);
  for (const auto& s : fp.stereo) {
    const auto [yl, yr] = rows.at(s.point_id);
    EXPECT_LT(std::abs(yl - yr), 3.0);
    EXPECT_EQ(s.v, 0.5 * (yl + yr));
    EXPECT_EQ(s.left_camera, 0);
    EXPECT_EQ(s.right_camera, 1);
  }
}

TEST(Pairing, ClosestRowWinsAndExtrasStayMono) {
  Reconstruction r;
  r.cameras.push_back({0, 0, Side::left, {}, kK});
  r.cameras.push_back({1, 0, Side::right, {Rotation(), Point3(1, 0, 0)}, kK});
  r.cameras.push_back({2, 1, Side::left, {Rotation(), Point3(0, 0, 1)}, kK});
  PointRecord p;
  p.id = 5;
  p.observations = {{0, Pixel(10, 100)}, {1, Pixel(5, 102.5)}, {1, Pixel(6, 100.5)},
                    {2, Pixel(9, 50)}};
  r.points.push_back(p);
  const FeaturePairing fp = pair_stereo_features(r);
  ASSERT_EQ(fp.stereo.size(), 1u);
  EXPECT_EQ(fp.stereo[0].u_right, 6.0);
  EXPECT_EQ(fp.stereo[0].v, 100.25);
  EXPECT_EQ(fp.mono.size(), 2u);
}

TEST(Scale, MedianBaselineOddAndEven) {
  EXPECT_DOUBLE_EQ(median_baseline(rig_recon({0.5, 0.9, 0.4})), 0.5);
  EXPECT_DOUBLE_EQ(median_baseline(rig_recon({0.5, 0.9, 0.4, 2.0})), 0.7);
  // A single wild frame does not move the median.
  EXPECT_DOUBLE_EQ(median_baseline(rig_recon({0.5, 0.5, 0.5, 50.0, 0.5})), 0.5);
}

TEST(Scale, EstimateAndApply) {
  const Reconstruction r = rig_recon({0.25, 0.25, 0.25});
  const double s = estimate_scale(r, 1.0);
  EXPECT_DOUBLE_EQ(s, 4.0);
  const Reconstruction scaled = apply_scale(r, s);
  for (const auto& [f, b] : stereo_baselines(scaled)) EXPECT_NEAR(b, 1.0, 1e-12);
  EXPECT_THROW(apply_scale(r, 0.0), NonPositiveScale);
  EXPECT_THROW(apply_scale(r, -2.0), NonPositiveScale);
  EXPECT_THROW(estimate_scale(r, 0.0), NonPositiveScale);
}

TEST(Scale, Homogeneity) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> b(0.1, 3.0), ls(std::log(0.1), std::log(10.0));
  for (int k = 0; k < 200; ++k) {
    const Reconstruction r = rig_recon({b(rng), b(rng), b(rng), b(rng), b(rng)});
    const double s = std::exp(ls(rng));
    const double lhs = estimate_scale(apply_scale(r, s), 1.3);
    const double rhs = estimate_scale(r, 1.3) / s;
    EXPECT_NEAR(lhs, rhs, 1e-12 * std::abs(rhs));
  }
}

TEST(Scale, NoStereoFrames) {
  Reconstruction r = rig_recon({0.5, 0.5});
  r.cameras.erase(r.cameras.begin() + 3);
  r.cameras.erase(r.cameras.begin() + 1);
  EXPECT_THROW(median_baseline(r), NoStereoFrames);
  EXPECT_THROW(estimate_scale(r, 1.0), NoStereoFrames);
}
