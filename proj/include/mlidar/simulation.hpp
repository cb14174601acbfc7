#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mlidar/config.hpp"
#include "mlidar/controller.hpp"
#include "mlidar/evaluation.hpp"
#include "mlidar/scene.hpp"

namespace mlidar {

/// One control cycle of a run.
struct StepRecord {
  double t = 0.0;
  double theta = 0.0;  // motor angle when the scan was taken
  double omega = 0.0;  // speed executed until the next cycle
  double u_min = 0.0;
  double f_initial = 0.0;
  double f_final = 0.0;
  int iterations = 0;
  bool fallback = false;
  bool degenerate = false;  // odometry kept its prediction

  bool operator==(const StepRecord&) const = default;
};

struct RunArtifacts {
  Trajectory estimated;
  Trajectory ground_truth;
  std::vector<StepRecord> motor;
  /// Coverage voxels hit by each scan, from the true sensor pose.
  std::vector<TimedCells> coverage;
  double coverage_voxel = 0.5;
  double final_theta = 0.0;
  std::vector<std::string> log;
  EvalReport report;
};

/// Map and trajectory named by the config (loaded or generated).
struct SimInputs {
  PointCloudMap map;
  Trajectory trajectory;
};

SimInputs load_inputs(const SimConfig& cfg);

/// Fixed-step loop: pose lookup, scan, odometry, control, motor update.
RunArtifacts run_simulation(const SimConfig& cfg, const SimInputs& inputs, MotorController& controller);

/// Loads inputs and builds the configured controller.
RunArtifacts run_simulation(const SimConfig& cfg);

/// estimated.tum, ground_truth.tum, motor.csv, coverage.csv, log.txt,
/// report.json and summary.csv inside `dir`.
void write_artifacts(const RunArtifacts& run, const std::filesystem::path& dir);
RunArtifacts read_artifacts(const std::filesystem::path& dir);

void write_motor_csv(const std::vector<StepRecord>& motor, const std::filesystem::path& path);
std::vector<StepRecord> read_motor_csv(const std::filesystem::path& path);

void write_coverage_csv(const std::vector<TimedCells>& coverage, double voxel,
                        const std::filesystem::path& path);
std::vector<TimedCells> read_coverage_csv(const std::filesystem::path& path, double* voxel = nullptr);

}  // namespace mlidar
