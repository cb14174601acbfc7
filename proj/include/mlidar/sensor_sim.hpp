#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mlidar/geometry.hpp"
#include "mlidar/random.hpp"
#include "mlidar/scene.hpp"

namespace mlidar {

/// Angular footprint of a scanner, centred on the sensor x-axis.
struct FovModel {
  std::string name = "spinning";
  double horizontal_deg = 360.0;
  double vertical_deg = 30.0;
  double resolution_deg = 1.0;
  double max_range = 30.0;
  double scan_rate_hz = 10.0;

  bool operator==(const FovModel&) const = default;
};

/// spinning (360x30), solid_state (70x70), dome (360x90).
FovModel fov_preset(const std::string& name);
void validate(const FovModel& fov);

/// Unit ray directions in the sensor frame on a uniform (azimuth, elevation)
/// grid with the given step, ordered by azimuth then elevation. A full
/// 360° horizontal extent does not repeat the seam azimuth.
std::vector<Vec3> fov_directions(const FovModel& fov, double step_deg);

struct RayHit {
  Vec3 point;   // the captured map point (world frame)
  Vec3 normal;  // faces the ray
  double range = 0.0;
  std::uint32_t index = 0;
};

/// Default capture radius for a given cast voxel: half the voxel diagonal.
inline double default_capture_radius(double voxel_size) { return 0.5 * std::sqrt(3.0) * voxel_size; }

/// Nearest map point (by range from the origin) lying within capture_radius
/// of the ray, found by a front-to-back voxel traversal of the hashed grid.
/// capture_radius must not exceed the grid voxel size.
std::optional<RayHit> cast_ray(const VoxelGrid& grid, const PointCloudMap& map, const Vec3& origin,
                               const Vec3& dir, double max_range, double capture_radius);

/// Same query as cast_ray over a dense, bounded copy of the voxel index.
/// Immutable once built; safe for concurrent casts.
class RayCaster {
 public:
  RayCaster(const PointCloudMap& map, double voxel_size, double capture_radius);

  std::optional<RayHit> cast(const Vec3& origin, const Vec3& dir, double max_range) const;

  const PointCloudMap& map() const { return *map_; }
  double voxel_size() const { return voxel_size_; }
  double capture_radius() const { return capture_radius_; }

 private:
  bool cell_index(std::int64_t i, std::int64_t j, std::int64_t k, std::size_t& out) const;

  const PointCloudMap* map_;
  double voxel_size_;
  double capture_radius_;
  Eigen::Matrix<std::int64_t, 3, 1> origin_cell_;  // global key of dense cell (0,0,0)
  Eigen::Matrix<std::int64_t, 3, 1> dims_;
  std::vector<std::uint32_t> cell_start_;
  std::vector<std::uint32_t> cell_points_;
  std::vector<std::uint8_t> near_;  // cell or a 26-neighbour holds points
};

struct Scan {
  double timestamp = 0.0;
  /// One entry per ray in fov_directions order; zero where there is no hit.
  std::vector<Vec3> points;  // sensor frame
  std::vector<std::uint8_t> hit;

  std::size_t hit_count() const;
  /// Hit points only, in the sensor frame.
  std::vector<Vec3> hit_points() const;
};

struct ScanOptions {
  /// Standard deviation of additive range noise (m); 0 disables.
  double range_noise = 0.0;
};

/// One ray per direction of the fov grid at its resolution. `rng` is only
/// drawn from when range noise is enabled.
Scan simulate_scan(const RayCaster& caster, const Pose& sensor_pose, const FovModel& fov,
                   double timestamp, const ScanOptions& options = {}, Rng* rng = nullptr);

/// Same as above with a precomputed direction table.
Scan simulate_scan(const RayCaster& caster, const Pose& sensor_pose,
                   std::span<const Vec3> directions, double max_range, double timestamp,
                   const ScanOptions& options = {}, Rng* rng = nullptr);

}  // namespace mlidar
