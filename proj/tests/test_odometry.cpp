#include <gtest/gtest.h>

#include <cmath>
#include <stdexcept>

#include "mlidar/config.hpp"
#include "mlidar/odometry.hpp"
#include "mlidar/sensor_sim.hpp"
#include "mlidar/simulation.hpp"
#include "test_util.hpp"

using namespace mlidar;

namespace {

PointCloudMap plain_room() {
  SceneSpec spec;
  spec.kind = SceneKind::box_room;
  spec.length = 4;
  spec.width = 4;
  spec.height = 2;
  spec.spacing = 0.05;
  return generate_synthetic_scene(spec);
}

PointCloudMap room_map() {
  SceneSpec spec;
  spec.kind = SceneKind::box_room;
  spec.length = 6;
  spec.width = 5;
  spec.height = 2.5;
  spec.spacing = 0.05;
  spec.room_clutter = 8;
  spec.seed = 3;
  return generate_synthetic_scene(spec);
}

// Two parallel walls y = ±1 along x, nothing else.
PointCloudMap parallel_walls() {
  PointCloudMap m;
  for (double x = 0.025; x < 20.0; x += 0.05) {
    for (double z = 0.025; z < 2.5; z += 0.05) {
      m.points.emplace_back(x, -1.0, z);
      m.points.emplace_back(x, 1.0, z);
    }
  }
  return m;
}

std::vector<Vec3> scan_at(const PointCloudMap& map, const Pose& pose, const FovModel& fov) {
  const RayCaster caster(map, 0.2, default_capture_radius(0.2));
  return simulate_scan(caster, pose, fov, 0.0).hit_points();
}

OdometryState state_from_scan(const std::vector<Vec3>& pts, const Pose& pose, const OdometryConfig& cfg) {
  OdometryState st;
  st.pose = pose;
  st.prev_pose = pose;
  st.updates = 1;
  update_local_map(st, pts, pose, cfg);
  return st;
}

}  // namespace

// ---------------------------------------------------------------------------
// Prediction

TEST(PredictPose, IdenticalPriors) {
  OdometryState st;
  st.pose = {rotation_z(0.3), Vec3(1, 2, 3)};
  st.prev_pose = st.pose;
  st.updates = 2;
  const Pose p = predict_pose(st);
  EXPECT_LT(test::max_abs(p.rotation - st.pose.rotation), 1e-15);
  EXPECT_LT((p.translation - st.pose.translation).norm(), 1e-15);
}

TEST(PredictPose, ConstantTranslation) {
  OdometryState st;
  st.prev_pose = Pose::identity();
  st.pose = {Mat3::Identity(), Vec3(1, 0, 0)};
  st.updates = 2;
  EXPECT_LT((predict_pose(st).translation - Vec3(2, 0, 0)).norm(), 1e-15);
}

TEST(PredictPose, ConstantYawRate) {
  OdometryState st;
  st.prev_pose = {rotation_z(0.2), Vec3::Zero()};
  st.pose = {rotation_z(0.2 + kPi / 8), Vec3::Zero()};
  st.updates = 2;
  EXPECT_LT(test::max_abs(predict_pose(st).rotation - rotation_z(0.2 + kPi / 4)), 1e-12);
}

TEST(PredictPose, FirstCallHoldsPose) {
  OdometryState st;
  st.pose = {rotation_z(1.0), Vec3(4, 5, 6)};
  st.updates = 1;
  EXPECT_EQ(predict_pose(st).translation, st.pose.translation);
}

// ---------------------------------------------------------------------------
// Registration

TEST(RegisterScan, FixedPointAtGroundTruth) {
  const auto map = plain_room();
  const Pose gt{rotation_z(0.4) * so3_exp(Vec3(0.02, -0.01, 0)), Vec3(2.1, 0.3, 1.1)};
  OdometryConfig cfg;
  const auto pts = scan_at(map, gt, fov_preset("dome"));
  const auto st = state_from_scan(pts, gt, cfg);
  const auto res = register_scan(pts, st, gt, cfg);
  EXPECT_LT((res.pose.translation - gt.translation).norm(), 1e-6);
  EXPECT_LT(so3_log(res.pose.rotation * gt.rotation.transpose()).norm(), 1e-6);
  EXPECT_LT(res.mean_abs_residual, 1e-6);
  EXPECT_GE(res.correspondences, cfg.min_correspondences);
}

TEST(RegisterScan, ConvergesFromPerturbation) {
  const auto map = room_map();
  const Pose gt{rotation_z(-0.7), Vec3(2.5, -0.4, 1.3)};
  OdometryConfig cfg;
  const auto pts = scan_at(map, gt, fov_preset("dome"));
  const auto st = state_from_scan(pts, gt, cfg);
  Rng rng(31);
  for (int k = 0; k < 10; ++k) {
    Pose init = gt;
    init.translation += test::random_unit(rng) * 0.05;
    const auto res = register_scan(pts, st, init, cfg);
    EXPECT_LT((res.pose.translation - gt.translation).norm(), 1e-3) << "trial " << k;
    ASSERT_FALSE(res.cost_history.empty());
    for (std::size_t i = 1; i < res.cost_history.size(); ++i) {
      EXPECT_LE(res.cost_history[i], res.cost_history[i - 1]);
    }
  }
}

TEST(RegisterScan, ParallelWallsKeepAlongWallOffset) {
  const auto map = parallel_walls();
  const Pose gt{Mat3::Identity(), Vec3(10, 0, 1.25)};
  OdometryConfig cfg;
  const auto pts = scan_at(map, gt, fov_preset("dome"));
  const auto st = state_from_scan(pts, gt, cfg);
  Pose init = gt;
  init.translation += Vec3(0.3, 0.1, 0.0);
  const auto res = register_scan(pts, st, init, cfg);
  // across the walls: corrected
  EXPECT_LT(std::abs(res.pose.translation.y() - gt.translation.y()), 1e-3);
  // along the walls: the normal matrix has no x component, the offset stays
  EXPECT_NEAR(res.pose.translation.x() - gt.translation.x(), 0.3, 1e-3);
}

TEST(RegisterScan, TooFewCorrespondencesIsDegenerate) {
  const auto map = room_map();
  const Pose gt{Mat3::Identity(), Vec3(3, 0, 1.2)};
  OdometryConfig cfg;
  const auto pts = scan_at(map, gt, fov_preset("dome"));
  const auto st = state_from_scan(pts, gt, cfg);
  Pose far = gt;
  far.translation += Vec3(0, 0, 50);
  EXPECT_THROW(register_scan(pts, st, far, cfg), DegenerateRegistration);
  const std::vector<Vec3> few(pts.begin(), pts.begin() + 5);
  EXPECT_THROW(register_scan(few, st, gt, cfg), std::invalid_argument);
  OdometryState empty;
  EXPECT_THROW(register_scan(pts, empty, gt, cfg), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Local map

TEST(LocalMap, FirstScanSizeIsDownsampledCount) {
  const auto map = room_map();
  const Pose pose{rotation_z(0.25), Vec3(3, 0.2, 1.1)};
  OdometryConfig cfg;
  const auto pts = scan_at(map, pose, fov_preset("spinning"));
  std::vector<Vec3> world;
  for (const auto& p : pts) world.push_back(pose.apply(p));
  OdometryState st;
  update_local_map(st, pts, pose, cfg);
  EXPECT_EQ(st.local_map.size(), voxel_downsample(world, cfg.map_voxel).size());
  EXPECT_EQ(st.tree.size(), st.local_map.size());
  ASSERT_TRUE(st.local_map.has_normals());
  std::size_t valid = 0;
  for (std::size_t i = 0; i < st.local_map.size(); ++i) {
    if (!st.local_map.normal_valid[i]) continue;
    ++valid;
    EXPECT_NEAR(st.local_map.normals[i].norm(), 1.0, 1e-9);
    // oriented towards the sensor
    EXPECT_GE(st.local_map.normals[i].dot(pose.translation - st.local_map.points[i]), 0.0);
  }
  EXPECT_GT(valid, st.local_map.size() / 2);
}

TEST(LocalMap, SameScanTwiceIsDeduplicated) {
  const auto map = room_map();
  const Pose pose{Mat3::Identity(), Vec3(3, 0, 1.2)};
  OdometryConfig cfg;
  const auto pts = scan_at(map, pose, fov_preset("spinning"));
  OdometryState st;
  update_local_map(st, pts, pose, cfg);
  const auto n = st.local_map.size();
  update_local_map(st, pts, pose, cfg);
  EXPECT_EQ(st.local_map.size(), n);
}

TEST(LocalMap, EvictsBeyondRadius) {
  SceneSpec spec;
  spec.length = 14;
  const auto map = generate_synthetic_scene(spec);
  OdometryConfig cfg;
  cfg.r_local = 5.0;
  OdometryState st;
  Pose pose{Mat3::Identity(), Vec3(1, 0, 1.2)};
  for (int k = 0; k <= 20; ++k) {
    pose.translation.x() = 1.0 + 0.5 * k;  // 10 m = 2 r_local
    update_local_map(st, scan_at(map, pose, fov_preset("spinning")), pose, cfg);
  }
  ASSERT_FALSE(st.local_map.empty());
  for (const auto& p : st.local_map.points) EXPECT_LE((p - pose.translation).norm(), cfg.r_local);
  // occupancy and tree agree with the surviving points
  EXPECT_EQ(st.occupancy.point_count(), st.local_map.size());
  EXPECT_EQ(st.tree.size(), st.local_map.size());
}

TEST(LocalMap, VoxelDownsampleKeepsFirst) {
  const std::vector<Vec3> pts{Vec3(0.01, 0, 0), Vec3(0.02, 0, 0), Vec3(0.15, 0, 0), Vec3(0.05, 0.05, 0.05)};
  const auto out = voxel_downsample(pts, 0.1);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0], pts[0]);
  EXPECT_EQ(out[1], pts[2]);
}

// ---------------------------------------------------------------------------
// Oracle

TEST(OraclePose, ZeroSigmaIsExact) {
  Rng rng(1);
  const Pose gt{rotation_z(1.1), Vec3(1, 2, 3)};
  const Pose p = oracle_pose(gt, 0.0, 0.0, rng);
  EXPECT_EQ(p.translation, gt.translation);
  EXPECT_EQ(p.rotation, gt.rotation);
  Rng fresh(1);
  EXPECT_EQ(rng.next(), fresh.next());  // no draws consumed
}

TEST(OraclePose, TranslationStd) {
  Rng rng(2);
  const Pose gt{rotation_z(0.5), Vec3(1, 2, 3)};
  double sum[3] = {0, 0, 0}, sq[3] = {0, 0, 0};
  const int n = 1000;
  for (int i = 0; i < n; ++i) {
    const Pose p = oracle_pose(gt, 0.01, 0.0, rng);
    EXPECT_EQ(p.rotation, gt.rotation);
    const Vec3 e = p.translation - gt.translation;
    for (int a = 0; a < 3; ++a) {
      sum[a] += e[a];
      sq[a] += e[a] * e[a];
    }
  }
  for (int a = 0; a < 3; ++a) {
    const double mean = sum[a] / n;
    const double sd = std::sqrt(sq[a] / n - mean * mean);
    EXPECT_NEAR(sd, 0.01, 0.2 * 0.01) << "axis " << a;
  }
}

TEST(OraclePose, RotationNoiseStd) {
  Rng rng(3);
  const Pose gt{rotation_z(0.5), Vec3::Zero()};
  double sq = 0.0;
  const int n = 1000;
  for (int i = 0; i < n; ++i) {
    const Pose p = oracle_pose(gt, 0.0, 0.02, rng);
    EXPECT_TRUE(is_rotation(p.rotation));
    EXPECT_EQ(p.translation, gt.translation);
    sq += so3_log(p.rotation * gt.rotation.transpose()).squaredNorm();
  }
  EXPECT_NEAR(std::sqrt(sq / (3 * n)), 0.02, 0.2 * 0.02);
  EXPECT_THROW(oracle_pose(gt, -1.0, 0.0, rng), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Driven odometry

TEST(LidarOdometry, ClosedRoomStaysWithinOneVoxel) {
  SimConfig cfg;
  cfg.name = "room";
  cfg.scene.kind = SceneKind::box_room;
  cfg.scene.length = 8;
  cfg.scene.width = 6;
  cfg.scene.height = 2.5;
  cfg.scene.room_clutter = 10;
  cfg.path.waypoints = {{1.5, -1.5}, {6.5, -1.5}, {6.5, 1.5}};
  cfg.path.speed = 0.5;
  cfg.fov = fov_preset("dome");
  cfg.fov.resolution_deg = 2.0;
  cfg.controller = ControllerKind::constant;
  cfg.duration = 10.0;
  const auto run = run_simulation(cfg);
  ASSERT_EQ(run.estimated.size(), 100u);
  for (std::size_t i = 0; i < run.estimated.size(); ++i) {
    const double err = (run.estimated.samples[i].pose.translation - run.ground_truth.samples[i].pose.translation).norm();
    EXPECT_LT(err, cfg.odometry.map_voxel) << "step " << i;
  }
  for (const auto& r : run.motor) EXPECT_FALSE(r.degenerate);
}

TEST(LidarOdometry, FirstUpdateAnchorsAtGroundTruth) {
  OdometryConfig cfg;
  LidarOdometry odo(cfg, 1);
  const Pose gt{rotation_z(0.3), Vec3(1, 2, 3)};
  const auto pts = scan_at(room_map(), {Mat3::Identity(), Vec3(3, 0, 1.2)}, fov_preset("spinning"));
  const auto up = odo.process(pts, gt);
  EXPECT_EQ(up.pose.translation, gt.translation);
  EXPECT_FALSE(odo.state().local_map.empty());
}

TEST(OdometryConfig, Validation) {
  OdometryConfig cfg;
  EXPECT_NO_THROW(validate(cfg));
  cfg.sigma_t = -0.1;
  EXPECT_THROW(validate(cfg), std::invalid_argument);
  EXPECT_EQ(odometry_mode_from_string("oracle"), OdometryMode::oracle);
  EXPECT_THROW(odometry_mode_from_string("ekf"), std::invalid_argument);
}
