#include "mlidar/geometry.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/SVD>

namespace mlidar {

Eigen::Matrix4d Pose::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation;
  m.topRightCorner<3, 1>() = translation;
  return m;
}

double wrap_angle(double theta) {
  if (!std::isfinite(theta)) {
    throw std::invalid_argument("wrap_angle: non-finite angle");
  }
  double w = std::fmod(theta, kTwoPi);
  if (w < 0.0) w += kTwoPi;
  // fmod of a tiny negative value can round up to exactly 2π.
  if (w >= kTwoPi) w = 0.0;
  return w;
}

Mat3 rotation_z(double theta) {
  if (!std::isfinite(theta)) {
    throw std::invalid_argument("rotation_z: non-finite angle");
  }
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  Mat3 r;
  r << c, -s, 0.0,
       s, c, 0.0,
       0.0, 0.0, 1.0;
  return r;
}

Mat3 skew(const Vec3& v) {
  Mat3 m;
  m << 0.0, -v.z(), v.y(),
       v.z(), 0.0, -v.x(),
       -v.y(), v.x(), 0.0;
  return m;
}

Mat3 so3_exp(const Vec3& phi) {
  const double angle = phi.norm();
  if (angle < 1e-12) {
    return Mat3::Identity() + skew(phi);
  }
  return Eigen::AngleAxisd(angle, phi / angle).toRotationMatrix();
}

Vec3 so3_log(const Mat3& rotation) {
  Eigen::AngleAxisd aa(rotation);
  return aa.angle() * aa.axis();
}

bool is_rotation(const Mat3& r, double tol) {
  if (!r.allFinite()) return false;
  if ((r * r.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() > tol) return false;
  return std::abs(r.determinant() - 1.0) <= tol;
}

Mat3 orthonormalize(const Mat3& r) {
  Eigen::JacobiSVD<Mat3> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 out = svd.matrixU() * svd.matrixV().transpose();
  if (out.determinant() < 0.0) {
    Mat3 u = svd.matrixU();
    u.col(2) *= -1.0;
    out = u * svd.matrixV().transpose();
  }
  return out;
}

Mat3 rotation_from_rpy(double roll, double pitch, double yaw) {
  return (Eigen::AngleAxisd(yaw, Vec3::UnitZ()) * Eigen::AngleAxisd(pitch, Vec3::UnitY()) *
          Eigen::AngleAxisd(roll, Vec3::UnitX()))
      .toRotationMatrix();
}

Mat3 rotation_from_quaternion(double qx, double qy, double qz, double qw) {
  Eigen::Quaterniond q(qw, qx, qy, qz);
  const double n = q.norm();
  if (!std::isfinite(n) || n < 1e-12) {
    throw std::invalid_argument("rotation_from_quaternion: zero or non-finite quaternion");
  }
  q.coeffs() /= n;
  return q.toRotationMatrix();
}

Eigen::Quaterniond quaternion_from_rotation(const Mat3& r) {
  Eigen::Quaterniond q(r);
  q.normalize();
  // Canonical sign keeps serialized trajectories stable.
  if (q.w() < 0.0) q.coeffs() *= -1.0;
  return q;
}

Pose lidar_to_base(const Calibration& calib, double motor_angle) {
  const Mat3 rm = rotation_z(motor_angle);
  return {rm * calib.rotation, rm * calib.translation};
}

Vec3 project_point_to_world(const Vec3& p_lidar, const Calibration& calib, double motor_angle,
                            const Pose& base) {
  if (!p_lidar.allFinite()) {
    throw std::invalid_argument("project_point_to_world: non-finite point");
  }
  const Vec3 in_motor = calib.rotation * p_lidar + calib.translation;
  const Vec3 in_base = rotation_z(motor_angle) * in_motor;
  return base.rotation * in_base + base.translation;
}

double integrate_motor(double theta, double omega, double dt) {
  if (!(dt > 0.0) || !std::isfinite(dt)) {
    throw std::invalid_argument("integrate_motor: dt must be positive");
  }
  return wrap_angle(theta + omega * dt);
}

}  // namespace mlidar
