#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <Eigen/Eigenvalues>

#include "mlidar/sensor_sim.hpp"
#include "mlidar/uncertainty.hpp"
#include "test_util.hpp"

using namespace mlidar;

namespace {

PanoOptions pano_opts(double splat = 0.05) {
  PanoOptions o;
  o.splat_radius = splat;
  return o;
}

PointCloudMap closed_room() {
  SceneSpec spec;
  spec.kind = SceneKind::box_room;
  spec.length = 5;
  spec.width = 4;
  spec.height = 2.5;
  spec.spacing = 0.05;
  spec.room_clutter = 6;
  return generate_synthetic_scene(spec);
}

double eigen_oracle(const Mat6& m, double eps) {
  Eigen::SelfAdjointEigenSolver<Mat6> es(m);
  double s = 0.0;
  for (int i = 0; i < 6; ++i) s += 1.0 / (es.eigenvalues()(i) + eps);
  return s;
}

Mat6 random_psd(Rng& rng) {
  Eigen::Matrix<double, 6, 6> a;
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) a(i, j) = rng.normal();
  // random rank 0..6, random scale
  const int rank = static_cast<int>(rng.next() % 7);
  Mat6 m = Mat6::Zero();
  for (int r = 0; r < rank; ++r) m += a.col(r) * a.col(r).transpose() * rng.uniform(0.01, 50.0);
  return m;
}

UProfile profile_of(std::vector<double> samples) {
  UProfile p;
  p.samples = std::move(samples);
  p.delta = kTwoPi / static_cast<double>(p.samples.size());
  p.theta_base = 0.3;
  return p;
}

}  // namespace

// ---------------------------------------------------------------------------
// Panorama

TEST(RenderPano, ForwardPointAtCentre) {
  PointCloudMap m;
  m.points.emplace_back(3.5, 0, 0);
  const auto pano = render_pano(m, Pose::identity());
  EXPECT_EQ(pano.width, 720);
  EXPECT_EQ(pano.height, 180);
  EXPECT_TRUE(pano.has_return(360, 90));
  EXPECT_DOUBLE_EQ(pano.at(360, 90), 3.5);
  int returns = 0;
  for (int v = 0; v < pano.height; ++v)
    for (int u = 0; u < pano.width; ++u) returns += pano.has_return(u, v);
  EXPECT_EQ(returns, 1);
}

TEST(RenderPano, ZenithClampsToTopRow) {
  PointCloudMap m;
  m.points.emplace_back(0, 0, 2.0);
  const auto pano = render_pano(m, Pose::identity());
  double u = 0, v = 0;
  pano.project(Vec3(0, 0, 1), u, v);
  EXPECT_DOUBLE_EQ(v, 180.0);
  int pu = 0, pv = 0;
  pano.pixel_of(Vec3(0, 0, 1), pu, pv);
  EXPECT_EQ(pv, 179);
  EXPECT_TRUE(pano.has_return(pu, 179));
  EXPECT_DOUBLE_EQ(pano.at(pu, 179), 2.0);
}

TEST(RenderPano, ZBufferKeepsNearest) {
  PointCloudMap m;
  m.points.emplace_back(5, 0, 0);
  m.points.emplace_back(2, 0, 0);
  const auto pano = render_pano(m, Pose::identity());
  EXPECT_DOUBLE_EQ(pano.at(360, 90), 2.0);
  EXPECT_EQ(pano.point_index[pano.index(360, 90)], 1);
}

TEST(RenderPano, UsesBaseFrame) {
  PointCloudMap m;
  m.points.emplace_back(1, 4, 0);
  const Pose base{rotation_z(kPi / 2), Vec3(1, 0, 0)};
  const auto pano = render_pano(m, base);
  // (1,4,0) is 4 m straight ahead of a base facing +y
  EXPECT_DOUBLE_EQ(pano.at(360, 90), 4.0);
}

TEST(RenderPano, PixelDirectionRoundTrip) {
  const auto pano = render_pano(closed_room(), Pose{Mat3::Identity(), Vec3(2.5, 0, 1.2)});
  for (int v = 0; v < pano.height; v += 7) {
    for (int u = 0; u < pano.width; u += 11) {
      int pu = -1, pv = -1;
      pano.pixel_of(pano.pixel_direction(u, v), pu, pv);
      EXPECT_EQ(pu, u);
      EXPECT_EQ(pv, v);
    }
  }
}

// ---------------------------------------------------------------------------
// Sampled measurements

TEST(SampleMeasurements, ClosedRoomHasNoHoles) {
  const auto map = closed_room();
  const Pose base{rotation_z(0.2), Vec3(2.5, 0.1, 1.2)};
  const auto pano = render_pano(map, base, pano_opts());
  const SamplingPattern pattern(fov_preset("spinning"), 5.0);
  ASSERT_EQ(pattern.directions.size(), 72u * 7u);
  for (double theta : {0.0, 0.7, 2.0, 4.4}) {
    const auto ms = sample_measurements(pano, map, theta, pattern, Calibration{});
    EXPECT_EQ(ms.size(), pattern.directions.size()) << theta;
    for (const auto& m : ms) EXPECT_NEAR(m.n.norm(), 1.0, 1e-9);
  }
}

TEST(SampleMeasurements, OpenCorridorEndLosesSamples) {
  // Tube open at x = L; solid-state view straight down it.
  PointCloudMap map;
  const double s = 0.05, L = 12.0, W = 2.0, H = 2.5;
  for (double x = s / 2; x < L; x += s) {
    for (double z = s / 2; z < H; z += s) {
      map.points.emplace_back(x, -W / 2, z);
      map.points.emplace_back(x, W / 2, z);
    }
    for (double y = -W / 2 + s / 2; y < W / 2; y += s) {
      map.points.emplace_back(x, y, 0.0);
      map.points.emplace_back(x, y, H);
    }
  }
  const Vec3 o(1.0, 0.0, 1.25);
  const auto pano = render_pano(map, Pose{Mat3::Identity(), o}, pano_opts());
  const SamplingPattern pattern(fov_preset("solid_state"), 5.0);
  const auto ms = sample_measurements(pano, map, 0.0, pattern, Calibration{});

  // analytic: a direction returns iff it meets a tube face before x = L
  int definite = 0, ambiguous = 0;
  for (const auto& d : pattern.directions) {
    double t = std::numeric_limits<double>::infinity(), graze = 1.0;
    if (d.y() != 0.0) {
      const double ty = ((d.y() > 0 ? W / 2 : -W / 2) - o.y()) / d.y();
      if (ty < t) t = ty, graze = std::abs(d.y());
    }
    if (d.z() != 0.0) {
      const double tz = ((d.z() > 0 ? H : 0.0) - o.z()) / d.z();
      if (tz < t) t = tz, graze = std::abs(d.z());
    }
    const double x_exit = o.x() + t * d.x();
    // near the rim the splat footprint, point spacing and pixel quantisation
    // decide; band them out along the face
    const double lateral = 0.05 + 0.05 + t * deg2rad(0.5) * std::sqrt(2.0);
    if (std::abs(x_exit - L) < lateral / graze) {
      ++ambiguous;
      continue;
    }
    definite += x_exit < L;
  }
  EXPECT_LT(ms.size(), pattern.directions.size());
  EXPECT_GE(static_cast<int>(ms.size()), definite);
  EXPECT_LE(static_cast<int>(ms.size()), definite + ambiguous);
}

TEST(SampleMeasurements, PeriodicInTheta) {
  const auto map = closed_room();
  const auto pano = render_pano(map, Pose{Mat3::Identity(), Vec3(2.5, 0, 1.2)}, pano_opts());
  const SamplingPattern pattern(fov_preset("solid_state"), 5.0);
  const Calibration calib{rotation_from_rpy(deg2rad(90), 0, 0), Vec3::Zero()};
  for (double theta : {0.0, 0.35, 1.9, 5.0}) {
    const auto a = sample_measurements(pano, map, theta, pattern, calib);
    const auto b = sample_measurements(pano, map, theta + kTwoPi, pattern, calib);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_LT((a[i].p - b[i].p).norm(), 1e-9);
      EXPECT_LT((a[i].n - b[i].n).norm(), 1e-9);
    }
  }
}

TEST(SampleMeasurements, EmptyPanoGivesNoSamples) {
  PointCloudMap map;
  map.points.emplace_back(0, 0, -50);
  const auto pano = render_pano(map, Pose::identity());
  const SamplingPattern pattern(fov_preset("solid_state"), 5.0);
  EXPECT_TRUE(sample_measurements(pano, map, 0.0, pattern, Calibration{}).empty());
}

// ---------------------------------------------------------------------------
// Residual and Jacobian

TEST(Residual, Examples) {
  const Vec3 p(1, 2, 3);
  EXPECT_EQ(residual(Pose::identity(), p, p, Vec3(0, 0, 1)), 0.0);
  EXPECT_DOUBLE_EQ(residual(Pose::identity(), p, Vec3(1, 2, 2.5), Vec3(0, 0, 1)), 0.5);
}

TEST(Residual, MatchesHomogeneousOracle) {
  Rng rng(41);
  for (int i = 0; i < 500; ++i) {
    const Pose pose = test::random_pose(rng);
    const Vec3 p = test::random_vec(rng, 5), P = test::random_vec(rng, 5), n = test::random_unit(rng);
    Eigen::Matrix4d T = Eigen::Matrix4d::Identity();
    T.topLeftCorner<3, 3>() = pose.rotation;
    T.topRightCorner<3, 1>() = pose.translation;
    const Eigen::Vector4d ph(p.x(), p.y(), p.z(), 1.0);
    const Eigen::Vector4d Ph(P.x(), P.y(), P.z(), 1.0);
    const Eigen::Vector4d nh(n.x(), n.y(), n.z(), 0.0);
    EXPECT_NEAR(residual(pose, p, P, n), nh.dot(T * ph - Ph), 1e-12);
  }
}

TEST(ResidualJacobian, TranslationBlockIsNormal) {
  Rng rng(42);
  for (int i = 0; i < 100; ++i) {
    const Vec3 n = test::random_unit(rng);
    const Vec6 j = residual_jacobian(test::random_pose(rng), test::random_vec(rng, 4), n);
    EXPECT_EQ(Vec3(j.tail<3>()), n);
  }
}

TEST(ResidualJacobian, RotationBlockExample) {
  const Vec6 j = residual_jacobian(Pose::identity(), Vec3(1, 0, 0), Vec3(0, 1, 0));
  EXPECT_LT((j.head<3>() - Vec3(0, 0, 1)).norm(), 1e-15);
}

TEST(ResidualJacobian, MatchesCentralDifferences) {
  Rng rng(43);
  const double h = 1e-6;
  for (int i = 0; i < 500; ++i) {
    const Pose pose = test::random_pose(rng);
    const Vec3 p = test::random_vec(rng, 5), P = test::random_vec(rng, 5), n = test::random_unit(rng);
    const Vec6 j = residual_jacobian(pose, p, n);
    for (int k = 0; k < 6; ++k) {
      Vec6 e = Vec6::Zero();
      e[k] = h;
      auto perturbed = [&](const Vec6& d) {
        Pose q = pose;
        q.rotation = so3_exp(d.head<3>()) * pose.rotation;
        q.translation += d.tail<3>();
        return residual(q, p, P, n);
      };
      const double fd = (perturbed(e) - perturbed(-e)) / (2 * h);
      EXPECT_LE(std::abs(fd - j[k]), 1e-5 * std::max(1.0, std::abs(j[k]))) << "draw " << i << " k " << k;
    }
  }
}

// ---------------------------------------------------------------------------
// Information matrix and A-optimality

TEST(InformationMatrix, EmptyIsZero) {
  EXPECT_EQ(information_matrix({}, Pose::identity()), Mat6::Zero());
}

TEST(InformationMatrix, SinglePlaneTranslationBlock) {
  Rng rng(44);
  const Vec3 n = test::random_unit(rng);
  std::vector<Measurement> ms;
  for (int k = 0; k < 25; ++k) ms.push_back({test::random_vec(rng, 3), n});
  const Mat6 info = information_matrix(ms, Pose::identity());
  const Mat3 expected = 25.0 * n * n.transpose();
  EXPECT_LT(test::max_abs(info.bottomRightCorner<3, 3>() - expected), 1e-12);
  Eigen::SelfAdjointEigenSolver<Mat3> es(Mat3(info.bottomRightCorner<3, 3>()));
  EXPECT_LT(std::abs(es.eigenvalues()(1)), 1e-9);
  EXPECT_NEAR(es.eigenvalues()(2), 25.0, 1e-9);
  EXPECT_LT(test::max_abs(info - info.transpose()), 1e-12);
}

TEST(InformationMatrix, ThreeOrthogonalPlanesFullTranslationRank) {
  Rng rng(45);
  std::vector<Measurement> ms;
  for (int axis = 0; axis < 3; ++axis) {
    Vec3 n = Vec3::Zero();
    n[axis] = 1.0;
    for (int k = 0; k < 10; ++k) ms.push_back({test::random_vec(rng, 3), n});
  }
  const Mat6 info = information_matrix(ms, Pose::identity());
  Eigen::SelfAdjointEigenSolver<Mat3> es(Mat3(info.bottomRightCorner<3, 3>()));
  EXPECT_GT(es.eigenvalues()(0), 1.0);
  Eigen::SelfAdjointEigenSolver<Mat6> full(info);
  EXPECT_GT(full.eigenvalues()(0), -1e-9);
}

TEST(AOpt, ClosedForms) {
  EXPECT_NEAR(uncertainty_a_opt(Mat6::Zero(), 1e-3), 6.0 / 1e-3, 1e-9);
  EXPECT_NEAR(uncertainty_a_opt(Mat6::Identity(), 1e-3), 6.0 / (1.0 + 1e-3), 1e-12);
  EXPECT_THROW(uncertainty_a_opt(Mat6::Identity(), 0.0), std::invalid_argument);
  EXPECT_THROW(uncertainty_a_opt(Mat6::Identity(), -1.0), std::invalid_argument);
}

TEST(AOpt, MatchesEigenOracle) {
  Rng rng(46);
  for (int i = 0; i < 1000; ++i) {
    const Mat6 m = random_psd(rng);
    // relative: for rank-deficient draws U ~ k/eps and the oracle's own
    // eigenvalue noise is already ~1e-8 absolute
    const double oracle = eigen_oracle(m, 1e-3);
    EXPECT_NEAR(uncertainty_a_opt(m, 1e-3), oracle, 1e-9 * oracle) << "draw " << i;
  }
}

TEST(AOpt, MonotoneUnderAddedMeasurements) {
  Rng rng(47);
  for (int i = 0; i < 300; ++i) {
    std::vector<Measurement> ms;
    const int n = 1 + static_cast<int>(rng.next() % 20);
    const Pose pose = test::random_pose(rng);
    for (int k = 0; k < n; ++k) ms.push_back({test::random_vec(rng, 4), test::random_unit(rng)});
    const double before = uncertainty_a_opt(information_matrix(ms, pose));
    ms.push_back({test::random_vec(rng, 4), test::random_unit(rng)});
    const double after = uncertainty_a_opt(information_matrix(ms, pose));
    EXPECT_LE(after, before * (1.0 + 1e-12));
  }
}

TEST(AOpt, ParallelNormalsHitRegularizationFloor) {
  Rng rng(48);
  const Vec3 n = test::random_unit(rng);
  std::vector<Measurement> ms;
  for (int k = 0; k < 200; ++k) ms.push_back({test::random_vec(rng, 3), n});
  const Mat6 info = information_matrix(ms, Pose::identity());
  Eigen::SelfAdjointEigenSolver<Mat6> es(info);
  int null_dim = 0;
  for (int i = 0; i < 6; ++i) null_dim += es.eigenvalues()(i) < 1e-8 * es.eigenvalues()(5);
  EXPECT_EQ(null_dim, 3);
  const double closed = null_dim / 1e-3;
  EXPECT_NEAR(uncertainty_a_opt(info, 1e-3), closed, 0.01 * closed);
}

// ---------------------------------------------------------------------------
// U profile

TEST(UProfile, SizeFromDelta) {
  EXPECT_EQ(profile_size(kPi / 2), 4u);
  EXPECT_EQ(profile_size(deg2rad(10.0)), 36u);
  EXPECT_THROW(profile_size(0.7), std::invalid_argument);
  EXPECT_THROW(profile_size(0.0), std::invalid_argument);
}

TEST(UProfile, FullCircleScannerIsFlat) {
  const auto map = closed_room();
  const Pose base{Mat3::Identity(), Vec3(2.5, 0.2, 1.2)};
  const auto pano = render_pano(map, base, pano_opts());
  const SamplingPattern pattern(fov_preset("spinning"), 5.0);
  const auto prof = sample_u_profile(pano, map, pattern, Calibration{}, 0.0);
  ASSERT_EQ(prof.size(), 36u);
  for (double u : prof.samples) EXPECT_NEAR(u, prof.samples[0], 1e-9 * prof.samples[0]);
}

TEST(UProfile, QuarterStepGivesFourSamples) {
  const auto map = closed_room();
  const auto pano = render_pano(map, Pose{Mat3::Identity(), Vec3(2.5, 0, 1.2)}, pano_opts());
  const SamplingPattern pattern(fov_preset("solid_state"), 5.0);
  UProfileOptions opt;
  opt.delta = kPi / 2;
  const auto prof = sample_u_profile(pano, map, pattern, Calibration{}, 0.0, opt);
  EXPECT_EQ(prof.size(), 4u);
  for (double u : prof.samples) {
    EXPECT_TRUE(std::isfinite(u));
    EXPECT_GE(u, 0.0);
  }
  opt.delta = 1.0;
  EXPECT_THROW(sample_u_profile(pano, map, pattern, Calibration{}, 0.0, opt), std::invalid_argument);
}

TEST(UProfile, CorridorMinimumFacesEndCap) {
  SceneSpec spec;
  spec.length = 20;
  spec.width = 2;
  spec.height = 2.5;
  const auto map = generate_synthetic_scene(spec);
  // near the -x end; the solid-state view along the corridor sees the end
  // structures, across it sees one featureless wall
  const Pose base{Mat3::Identity(), Vec3(4.0, 0.0, 1.25)};
  const auto pano = render_pano(map, base, pano_opts());
  const SamplingPattern pattern(fov_preset("solid_state"), 5.0);
  const auto prof = sample_u_profile(pano, map, pattern, Calibration{}, 0.0);
  const auto it = std::min_element(prof.samples.begin(), prof.samples.end());
  const double theta_min = prof.theta_base + prof.delta * static_cast<double>(it - prof.samples.begin());
  // facing -x, the nearer end cap
  EXPECT_LE(std::abs(std::remainder(theta_min - kPi, kTwoPi)), deg2rad(45.0)) << rad2deg(theta_min);
  // facing a side wall is the worst direction class
  const double side = std::max(surrogate_eval(prof, kPi / 2), surrogate_eval(prof, 1.5 * kPi));
  EXPECT_GT(side, 2.0 * *it);
}

TEST(UProfile, RotationShiftsProfile) {
  const auto base_map = closed_room();
  const Vec3 centre(2.5, 0.0, 1.2);
  const SamplingPattern pattern(fov_preset("solid_state"), 5.0);
  const Calibration calib{rotation_from_rpy(deg2rad(90), 0, 0), Vec3::Zero()};
  auto profile_for = [&](int k) {
    // rotate the map about the base's vertical axis by kΔθ
    const Mat3 rz = rotation_z(k * deg2rad(10.0));
    PointCloudMap m = base_map;
    for (auto& p : m.points) p = rz * (p - centre) + centre;
    for (auto& n : m.normals) n = rz * n;
    const auto pano = render_pano(m, Pose{Mat3::Identity(), centre}, pano_opts());
    return sample_u_profile(pano, m, pattern, calib, 0.0);
  };
  const auto p0 = profile_for(0);
  for (int k : {1, 9, 20}) {
    const auto pk = profile_for(k);
    for (std::size_t s = 0; s < p0.size(); ++s) {
      const double expected = p0.samples[s];
      const double got = pk.samples[(s + k) % pk.size()];
      EXPECT_NEAR(got, expected, 1e-6 * std::max(1.0, expected)) << "k " << k << " s " << s;
    }
  }
}

// ---------------------------------------------------------------------------
// Surrogate

TEST(Surrogate, InterpolatesNodes) {
  Rng rng(49);
  std::vector<double> s;
  for (int i = 0; i < 36; ++i) s.push_back(rng.uniform(0, 100));
  const auto prof = profile_of(s);
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double theta = prof.theta_base + prof.delta * static_cast<double>(i);
    EXPECT_EQ(surrogate_eval(prof, theta), s[i]);
    EXPECT_EQ(surrogate_eval(prof, theta + kTwoPi), s[i]);
  }
}

TEST(Surrogate, MidpointIsMean) {
  const auto prof = profile_of({1.0, 3.0, 8.0, 2.0});
  for (int i = 0; i < 4; ++i) {
    const double theta = prof.theta_base + prof.delta * (i + 0.5);
    EXPECT_NEAR(surrogate_eval(prof, theta), 0.5 * (prof.samples[i] + prof.samples[(i + 1) % 4]), 1e-12);
  }
}

TEST(Surrogate, PeriodicAndBounded) {
  Rng rng(50);
  std::vector<double> s;
  for (int i = 0; i < 12; ++i) s.push_back(rng.uniform(0, 10));
  const auto prof = profile_of(s);
  for (int i = 0; i < 1000; ++i) {
    const double theta = rng.uniform(-20, 20);
    EXPECT_NEAR(surrogate_eval(prof, theta), surrogate_eval(prof, theta + kTwoPi), 1e-9);
    const double x = (theta - prof.theta_base) / prof.delta;
    const auto seg = static_cast<std::size_t>(((static_cast<long>(std::floor(x)) % 12) + 12) % 12);
    const double a = s[seg], b = s[(seg + 1) % 12];
    const double u = surrogate_eval(prof, theta);
    EXPECT_GE(u, std::min(a, b) - 1e-12);
    EXPECT_LE(u, std::max(a, b) + 1e-12);
  }
}

TEST(Surrogate, GradientExamples) {
  const auto flat = profile_of({2.0, 2.0, 2.0, 2.0, 2.0, 2.0});
  for (double th : {0.0, 0.4, 3.3, 6.0}) EXPECT_EQ(surrogate_grad(flat, th), 0.0);

  UProfile two;
  two.theta_base = 0.0;
  two.delta = kPi;
  two.samples = {0.0, 1.0};
  EXPECT_NEAR(surrogate_grad(two, 0.5), 1.0 / kPi, 1e-15);
  EXPECT_NEAR(surrogate_grad(two, kPi + 0.5), -1.0 / kPi, 1e-15);
  // at a node the right-hand slope
  EXPECT_NEAR(surrogate_grad(two, 0.0), 1.0 / kPi, 1e-15);
  EXPECT_NEAR(surrogate_grad(two, kPi), -1.0 / kPi, 1e-15);
}

TEST(Surrogate, GradientMatchesFiniteDifference) {
  Rng rng(51);
  std::vector<double> s;
  for (int i = 0; i < 36; ++i) s.push_back(rng.uniform(0, 50));
  const auto prof = profile_of(s);
  const double h = 1e-7;
  int tested = 0;
  while (tested < 1000) {
    const double theta = rng.uniform(-10, 10);
    const double x = (theta - prof.theta_base) / prof.delta;
    const double frac = x - std::floor(x);
    if (frac < 1e-4 || frac > 1 - 1e-4) continue;  // keep both probes in one segment
    ++tested;
    const double fd = (surrogate_eval(prof, theta + h) - surrogate_eval(prof, theta - h)) / (2 * h);
    EXPECT_NEAR(surrogate_grad(prof, theta), fd, 1e-6 * std::max(1.0, std::abs(fd)));
  }
}
