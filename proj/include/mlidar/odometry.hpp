#pragma once

#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mlidar/geometry.hpp"
#include "mlidar/kdtree.hpp"
#include "mlidar/random.hpp"
#include "mlidar/scene.hpp"

namespace mlidar {

enum class OdometryMode { icp, oracle };

std::string to_string(OdometryMode mode);
OdometryMode odometry_mode_from_string(const std::string& s);

struct OdometryConfig {
  OdometryMode mode = OdometryMode::icp;
  /// Oracle noise (per update, zero mean).
  double sigma_t = 0.0;
  double sigma_r = 0.0;

  double d_max = 0.5;
  double r_local = 30.0;
  double map_voxel = 0.1;
  std::size_t normal_k = 10;
  double max_curvature_ratio = 0.15;
  /// Scan points are thinned to one per cell of this size before registration.
  double scan_voxel = 0.2;
  int max_iterations = 20;
  double convergence = 1e-4;
  std::size_t min_points = 20;
  std::size_t min_correspondences = 10;

  bool operator==(const OdometryConfig&) const = default;
};

void validate(const OdometryConfig& cfg);

/// Fewer than the minimum number of usable correspondences.
class DegenerateRegistration : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct OdometryState {
  Pose pose;
  Pose prev_pose;
  std::size_t updates = 0;  // poses recorded so far

  PointCloudMap local_map;  // world frame, with normals
  VoxelGrid occupancy{0.1};
  /// Rebuilt whenever local_map changes.
  KdTree tree;
};

/// Constant-velocity extrapolation pose ∘ (prev⁻¹ ∘ pose).
Pose predict_pose(const OdometryState& state);

struct RegistrationResult {
  Pose pose;
  double mean_abs_residual = 0.0;
  int iterations = 0;
  std::size_t correspondences = 0;
  bool converged = false;
  /// The normal system needed damping beyond the default level.
  bool damped = false;
  /// Mean squared residual after each accepted iterate, starting with init.
  std::vector<double> cost_history;
};

/// Point-to-plane Gauss-Newton of base-frame scan points against the local
/// map. Throws std::invalid_argument on too few points or an empty map and
/// DegenerateRegistration on too few correspondences.
RegistrationResult register_scan(std::span<const Vec3> scan_points, const OdometryState& state,
                                 const Pose& init, const OdometryConfig& cfg);

/// Inserts base-frame points at `pose`, evicts points beyond r_local of
/// the pose and re-estimates normals around the newly inserted points.
void update_local_map(OdometryState& state, std::span<const Vec3> scan_points, const Pose& pose,
                      const OdometryConfig& cfg);

/// gt perturbed by N(0, σ_t²) per axis in translation and a rotation vector
/// with N(0, σ_r²) per axis; zero sigmas return gt unchanged.
Pose oracle_pose(const Pose& gt, double sigma_t, double sigma_r, Rng& rng);

/// One point per cell of the given size, first occurrence wins.
std::vector<Vec3> voxel_downsample(std::span<const Vec3> points, double voxel);

/// Scan-to-map odometry driving the state across updates.
class LidarOdometry {
 public:
  LidarOdometry(OdometryConfig cfg, std::uint64_t seed);

  struct Update {
    Pose pose;
    bool registered = false;
    bool degenerate = false;
    RegistrationResult registration;
  };

  /// The first call anchors the estimate at `gt`; later calls use gt only
  /// in oracle mode.
  Update process(std::span<const Vec3> scan_points, const Pose& gt);

  const OdometryState& state() const { return state_; }
  const OdometryConfig& config() const { return cfg_; }

 private:
  OdometryConfig cfg_;
  OdometryState state_;
  Rng rng_;
};

}  // namespace mlidar
