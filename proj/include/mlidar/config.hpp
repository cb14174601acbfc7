#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "mlidar/controller.hpp"
#include "mlidar/geometry.hpp"
#include "mlidar/odometry.hpp"
#include "mlidar/scene.hpp"
#include "mlidar/sensor_sim.hpp"

namespace mlidar {

/// Invalid configuration value; `field()` is the dotted key path.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string field, const std::string& message)
      : std::invalid_argument(field + ": " + message), field_(std::move(field)) {}
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

struct CalibrationSpec {
  Vec3 rpy_deg = Vec3::Zero();
  Vec3 translation = Vec3::Zero();

  Calibration calibration() const;
  bool operator==(const CalibrationSpec&) const = default;
};

struct SimConfig {
  std::string name = "run";

  /// Exactly one of map_path / scene is used; use_scene selects.
  bool use_scene = true;
  std::string map_path;
  SceneSpec scene;

  bool use_path = true;
  std::string trajectory_path;
  PathSpec path;

  FovModel fov;
  CalibrationSpec calibration;
  double range_noise = 0.0;

  ControllerKind controller = ControllerKind::ua_mpc;
  ControllerConfig control;
  PredictionConfig prediction;
  OdometryConfig odometry;

  double dt = 0.1;
  double initial_theta_deg = 0.0;
  /// Seconds to simulate from the trajectory start; 0 runs to its end.
  double duration = 0.0;
  std::uint64_t seed = 1;
  double cast_voxel = 0.2;
  /// 0 selects half the cast voxel diagonal.
  double capture_radius = 0.0;
  double coverage_voxel = 0.5;
  double cmplt_period = 5.0;
  double assoc_tol = 0.02;

  std::string output_dir = "out";

  bool operator==(const SimConfig&) const = default;
};

/// Parses JSON text. Relative file paths resolve against `base_dir`.
/// Throws ConfigError naming the offending key.
SimConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {});
SimConfig load_config(const std::filesystem::path& path);

/// Full JSON rendering, defaults included.
std::string serialize_config(const SimConfig& cfg);

/// Range and cross-field checks plus existence of referenced files.
void validate(const SimConfig& cfg);

}  // namespace mlidar
