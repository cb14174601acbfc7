#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "mlidar/geometry.hpp"
#include "mlidar/scene.hpp"
#include "mlidar/sensor_sim.hpp"
#include "mlidar/uncertainty.hpp"

namespace mlidar {

struct ControllerConfig {
  double alpha = 1000.0;
  double beta = 1.0;
  double omega_pre = 3.6;
  /// Future steps optimized per cycle (2M+1 with M = 5).
  int horizon = 11;
  double dt = 0.1;
  double omega_min = -7.2;
  double omega_max = 7.2;
  int max_iterations = 50;
  double tolerance = 1e-6;
  double initial_step = 0.1;
  /// Also descend from constant-speed and angle-seeking plans and keep the
  /// best local optimum. Off gives the plain single start at ω_pre.
  bool multi_start = true;

  bool operator==(const ControllerConfig&) const = default;
};

void validate(const ControllerConfig& cfg);

struct ControlHorizon {
  double theta_start = 0.0;
  std::vector<double> speeds;  // horizon entries
  std::vector<double> thetas;  // horizon + 1 entries, wrapped to [0, 2π)
  double cost = 0.0;
  double initial_cost = 0.0;  // at ω ≡ ω_pre
  int iterations = 0;         // accepted descent steps, all starts
};

/// α Σ_{i=1..H} U'(θ_i)² + β Σ_{l=0..H-1} (ω_l - ω_pre)², θ_i = θ_start + Δt Σ_{l<i} ω_l.
double horizon_cost(std::span<const double> speeds, double theta_start, const UProfile& profile,
                    const ControllerConfig& cfg);

std::vector<double> horizon_gradient(std::span<const double> speeds, double theta_start,
                                     const UProfile& profile, const ControllerConfig& cfg);

/// Projected gradient descent with Armijo backtracking. The result never
/// costs more than ω ≡ ω_pre and every speed lies within the bounds.
ControlHorizon optimize_horizon(double theta_start, const UProfile& profile,
                                const ControllerConfig& cfg);

// ---------------------------------------------------------------------------
// Motor controllers

struct ControlInput {
  double time = 0.0;
  double theta = 0.0;
  const PointCloudMap* local_map = nullptr;
  Pose base_estimate;
};

struct ControlOutput {
  double omega = 0.0;
  double u_min = 0.0;
  double f_initial = 0.0;
  double f_final = 0.0;
  int iterations = 0;
  bool fallback = false;
  std::string message;
};

class MotorController {
 public:
  virtual ~MotorController() = default;
  virtual std::string name() const = 0;
  virtual ControlOutput step(const ControlInput& input) = 0;
};

enum class ControllerKind { ua_mpc, constant, zero };

std::string to_string(ControllerKind kind);
ControllerKind controller_kind_from_string(const std::string& s);

/// Knobs of the view-uncertainty prediction used by UA-MPC.
struct PredictionConfig {
  int pano_width = 720;
  int pano_height = 180;
  double splat_radius = 0.05;
  double delta_deg = 10.0;
  double sample_step_deg = 5.0;
  double eps_reg = 1e-3;

  bool operator==(const PredictionConfig&) const = default;
};

void validate(const PredictionConfig& cfg);

/// First speed of the optimized horizon; ω_pre if optimization fails.
ControlOutput control_step(const ControllerConfig& cfg, double theta_now, const UProfile& profile);

std::unique_ptr<MotorController> make_controller(ControllerKind kind, const ControllerConfig& cfg,
                                                 const PredictionConfig& prediction,
                                                 const FovModel& fov, const Calibration& calib);

}  // namespace mlidar
