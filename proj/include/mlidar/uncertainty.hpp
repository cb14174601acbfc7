#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "mlidar/geometry.hpp"
#include "mlidar/scene.hpp"
#include "mlidar/sensor_sim.hpp"

namespace mlidar {

/// Equirectangular depth image of the local map around the base.
/// Column u covers azimuth [u, u+1) * 2π/W - π, row v covers elevation
/// [v, v+1) * π/H - π/2 (row 0 looks straight down).
struct DepthPano {
  int width = 0;
  int height = 0;
  Pose base;
  std::vector<double> depth;             // infinity where nothing projects
  std::vector<std::int32_t> point_index;  // winning map point, -1 if none

  bool has_return(int u, int v) const { return point_index[index(u, v)] >= 0; }
  double at(int u, int v) const { return depth[index(u, v)]; }
  std::size_t index(int u, int v) const { return static_cast<std::size_t>(v) * width + u; }

  /// Continuous pixel coordinates of a base-frame direction.
  void project(const Vec3& dir, double& u, double& v) const;
  /// Pixel containing a base-frame direction (u wraps, v clamps).
  void pixel_of(const Vec3& dir, int& u, int& v) const;
  /// Unit base-frame direction through the pixel centre.
  Vec3 pixel_direction(int u, int v) const;
};

struct PanoOptions {
  int width = 720;
  int height = 180;
  /// Each point also covers pixels within this metric radius at its range.
  double splat_radius = 0.0;
  /// Upper bound on splat half-size in pixels.
  int max_splat = 8;
};

/// Z-buffered projection of the map (world frame) into the base frame.
DepthPano render_pano(const PointCloudMap& local_map, const Pose& base, const PanoOptions& options = {});

/// One would-be measurement: point p (base frame) on a plane with unit
/// normal n (world frame).
struct Measurement {
  Vec3 p;
  Vec3 n;
};

/// Sensor-frame directions used to sample a candidate view.
struct SamplingPattern {
  std::vector<Vec3> directions;

  SamplingPattern() = default;
  SamplingPattern(const FovModel& fov, double step_deg);
};

/// Measurements a scan at motor angle theta would produce, read from the
/// pano. Normals come from the winning map point when it has a valid one,
/// otherwise from the pano neighbourhood; samples without either are skipped.
std::vector<Measurement> sample_measurements(const DepthPano& pano, const PointCloudMap& local_map,
                                             double theta, const SamplingPattern& pattern,
                                             const Calibration& calib);

/// Point-to-plane residual n·(R p + t - P).
double residual(const Pose& pose, const Vec3& p, const Vec3& plane_point, const Vec3& n);

/// Gradient of the residual w.r.t. (δφ, δt) for R <- Exp(δφ) R, t <- t + δt.
Vec6 residual_jacobian(const Pose& pose, const Vec3& p, const Vec3& n);

/// Λ = Σ J Jᵀ over the measurements.
Mat6 information_matrix(std::span<const Measurement> samples, const Pose& pose);

/// trace((Λ + εI)^-1); throws std::invalid_argument unless ε > 0.
double uncertainty_a_opt(const Mat6& info, double eps_reg = 1e-3);

/// U sampled every Δθ starting at theta_base, with periodic wraparound.
struct UProfile {
  double theta_base = 0.0;
  double delta = 0.0;
  std::vector<double> samples;

  std::size_t size() const { return samples.size(); }
};

struct UProfileOptions {
  double delta = deg2rad(10.0);
  double eps_reg = 1e-3;
};

/// S = 2π/Δθ samples; throws std::invalid_argument if S is not integral
/// within 1e-9.
UProfile sample_u_profile(const DepthPano& pano, const PointCloudMap& local_map,
                          const SamplingPattern& pattern, const Calibration& calib,
                          double theta_base, const UProfileOptions& options = {});

/// Number of samples for a step, validating integrality.
std::size_t profile_size(double delta);

/// Piecewise-linear periodic interpolation U'(θ).
double surrogate_eval(const UProfile& profile, double theta);

/// dU'/dθ; at a node the right-hand slope is used.
double surrogate_grad(const UProfile& profile, double theta);

}  // namespace mlidar
