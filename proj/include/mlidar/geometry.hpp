#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

namespace mlidar {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTwoPi = 2.0 * kPi;

inline double deg2rad(double deg) { return deg * kPi / 180.0; }
inline double rad2deg(double rad) { return rad * 180.0 / kPi; }

/// Rigid transform x -> rotation * x + translation.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Pose identity() { return {}; }

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }

  Pose inverse() const {
    Pose inv;
    inv.rotation = rotation.transpose();
    inv.translation = -(inv.rotation * translation);
    return inv;
  }

  /// (this ∘ other)(x) = this(other(x)).
  Pose operator*(const Pose& other) const {
    return {rotation * other.rotation, rotation * other.translation + translation};
  }

  Eigen::Matrix4d matrix() const;
};

/// Fixed LiDAR-to-motor extrinsics.
struct Calibration {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Pose as_pose() const { return {rotation, translation}; }
};

struct MotorState {
  double angle = 0.0;  // wrapped to [0, 2π)
  double speed = 0.0;  // rad/s
  double timestamp = 0.0;
};

/// Wraps into [0, 2π). Throws std::invalid_argument on non-finite input.
double wrap_angle(double theta);

/// Rotation about the motor z-axis.
Mat3 rotation_z(double theta);

/// Skew-symmetric matrix with skew(a) * b == a.cross(b).
Mat3 skew(const Vec3& v);

/// SO(3) exponential of a rotation vector.
Mat3 so3_exp(const Vec3& phi);
Vec3 so3_log(const Mat3& rotation);

/// Checks R·Rᵀ = I and det(R) = +1 within tol.
bool is_rotation(const Mat3& r, double tol = 1e-9);

/// Projects a nearly orthonormal matrix back onto SO(3).
Mat3 orthonormalize(const Mat3& r);

Mat3 rotation_from_rpy(double roll, double pitch, double yaw);
Mat3 rotation_from_quaternion(double qx, double qy, double qz, double qw);
Eigen::Quaterniond quaternion_from_rotation(const Mat3& r);

/// Pose of the LiDAR in the base frame for a given motor angle (motor origin
/// coincides with the base origin).
Pose lidar_to_base(const Calibration& calib, double motor_angle);

/// base ∘ Rz(motor_angle) ∘ calib applied to a LiDAR-frame point.
Vec3 project_point_to_world(const Vec3& p_lidar, const Calibration& calib, double motor_angle,
                            const Pose& base);

/// θ_{i+1} = wrap(θ_i + ω_i Δt). Throws std::invalid_argument if dt <= 0.
double integrate_motor(double theta, double omega, double dt);

}  // namespace mlidar
