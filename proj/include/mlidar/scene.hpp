#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "mlidar/geometry.hpp"

namespace mlidar {

/// Malformed input file. The message names the offending line when known.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t line = 0)
      : std::runtime_error(line ? what + " (line " + std::to_string(line) + ")" : what),
        line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// ---------------------------------------------------------------------------
// Point cloud map

struct PointCloudMap {
  std::vector<Vec3> points;
  /// Either empty or one unit normal per point.
  std::vector<Vec3> normals;
  /// Parallel to normals; 0 marks a degenerate neighbourhood.
  std::vector<std::uint8_t> normal_valid;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  bool has_normals() const { return !normals.empty() && normals.size() == points.size(); }
};

enum class MapFormat { ply_ascii, xyz };

/// Picks the format from the file extension (.ply or anything else -> xyz).
MapFormat map_format_from_path(const std::filesystem::path& path);

PointCloudMap load_map(const std::filesystem::path& path, MapFormat format);
void save_map(const PointCloudMap& map, const std::filesystem::path& path, MapFormat format);

// ---------------------------------------------------------------------------
// Voxel index

struct CellKey {
  std::int32_t x = 0;
  std::int32_t y = 0;
  std::int32_t z = 0;
  bool operator==(const CellKey&) const = default;
  auto operator<=>(const CellKey&) const = default;
};

struct CellKeyHash {
  std::size_t operator()(const CellKey& k) const noexcept {
    std::uint64_t h = static_cast<std::uint32_t>(k.x);
    h = h * 0x9E3779B97F4A7C15ull ^ static_cast<std::uint32_t>(k.y);
    h = h * 0x9E3779B97F4A7C15ull ^ static_cast<std::uint32_t>(k.z);
    return static_cast<std::size_t>(h ^ (h >> 29));
  }
};

inline CellKey cell_of(const Vec3& p, double voxel_size) {
  return {static_cast<std::int32_t>(std::floor(p.x() / voxel_size)),
          static_cast<std::int32_t>(std::floor(p.y() / voxel_size)),
          static_cast<std::int32_t>(std::floor(p.z() / voxel_size))};
}

/// Sparse map from cell to the indices of the points inside it.
class VoxelGrid {
 public:
  using CellMap = std::unordered_map<CellKey, std::vector<std::uint32_t>, CellKeyHash>;

  VoxelGrid() = default;
  explicit VoxelGrid(double voxel_size);

  double voxel_size() const { return voxel_size_; }
  CellKey cell(const Vec3& p) const { return cell_of(p, voxel_size_); }

  void insert(const Vec3& p, std::uint32_t index);

  /// Indices in the cell, or nullptr if empty.
  const std::vector<std::uint32_t>* find(const CellKey& key) const;

  std::size_t occupied_cells() const { return cells_.size(); }
  std::size_t point_count() const { return count_; }
  const CellMap& cells() const { return cells_; }

 private:
  double voxel_size_ = 1.0;
  std::size_t count_ = 0;
  CellMap cells_;
};

/// Throws std::invalid_argument unless voxel_size > 0.
VoxelGrid build_voxel_index(const PointCloudMap& map, double voxel_size);

// ---------------------------------------------------------------------------
// Normals

struct NormalOptions {
  std::size_t k = 10;
  Vec3 viewpoint = Vec3::Zero();
  /// Neighbourhoods whose smallest/middle eigenvalue ratio exceeds this are
  /// not planar enough and are flagged invalid. 1 disables the check.
  double max_curvature_ratio = 1.0;
};

/// k-NN PCA normals oriented towards the viewpoint.
PointCloudMap estimate_normals(const PointCloudMap& map, const NormalOptions& options);

/// Normal of a single neighbourhood; returns false if degenerate.
bool plane_normal(std::span<const Vec3> neighbourhood, Vec3& normal,
                  double max_curvature_ratio = 1.0);

// ---------------------------------------------------------------------------
// Synthetic scenes

enum class SceneKind { corridor, box_room, multi_room };

std::string to_string(SceneKind kind);
SceneKind scene_kind_from_string(const std::string& s);

/// Axis-aligned scene description. Corridor: x in [0, length], y in
/// [-width/2, width/2], z in [0, height], optional branch towards +y.
struct SceneSpec {
  SceneKind kind = SceneKind::corridor;
  double length = 20.0;
  double width = 2.0;
  double height = 2.5;
  double spacing = 0.1;
  /// Clutter boxes placed in each end zone of a corridor.
  int end_clutter = 14;
  double end_zone = 2.5;
  /// Clutter boxes scattered along the walls of rooms.
  int room_clutter = 0;
  /// Perpendicular corridor leaving the main one towards +y.
  bool branch = false;
  double branch_x = 14.0;
  double branch_width = 2.0;
  double branch_length = 30.0;
  /// multi_room: number of rooms in a row, each length x width x height.
  int rooms = 3;
  std::uint64_t seed = 1;

  bool operator==(const SceneSpec&) const = default;
};

/// Throws std::invalid_argument on non-positive dimensions or spacing.
void validate(const SceneSpec& spec);

PointCloudMap generate_synthetic_scene(const SceneSpec& spec);

// ---------------------------------------------------------------------------
// Trajectories

struct TimedPose {
  double timestamp = 0.0;
  Pose pose;
};

struct Trajectory {
  std::vector<TimedPose> samples;

  std::size_t size() const { return samples.size(); }
  double start_time() const { return samples.front().timestamp; }
  double end_time() const { return samples.back().timestamp; }
};

/// Throws std::invalid_argument unless >= 2 samples with increasing stamps.
void validate(const Trajectory& traj);

/// TUM format: "t tx ty tz qx qy qz qw", '#' comments.
Trajectory load_tum(const std::filesystem::path& path);
void save_tum(const Trajectory& traj, const std::filesystem::path& path);
void write_tum(const Trajectory& traj, std::ostream& out);

/// Linear translation, slerp rotation. Throws std::out_of_range outside the
/// sampled interval.
Pose interpolate_pose(const Trajectory& traj, double t);

/// Planar rounded-polyline walk at height z with a periodically modulated
/// speed v(t) = speed * (1 + speed_modulation * sin(2πt / modulation_period)).
/// Heading follows the path tangent.
struct PathSpec {
  std::vector<Eigen::Vector2d> waypoints;
  double height = 1.25;
  double speed = 0.5;
  double speed_modulation = 0.0;
  double modulation_period = 8.0;
  double turn_radius = 1.0;
  double sample_dt = 0.05;

  bool operator==(const PathSpec&) const = default;
};

Trajectory make_path_trajectory(const PathSpec& spec);

}  // namespace mlidar
