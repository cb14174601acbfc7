#include "mlidar/uncertainty.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mlidar {

void DepthPano::project(const Vec3& dir, double& u, double& v) const {
  const double r = dir.norm();
  u = std::atan2(dir.y(), dir.x()) / kTwoPi * width + 0.5 * width;
  v = std::asin(std::clamp(dir.z() / r, -1.0, 1.0)) / kPi * height + 0.5 * height;
}

namespace {

// Coordinates within rounding noise of a pixel border resolve to the pixel
// on the upper side, so rotated copies of a direction grid read the same
// pixels.
int pixel_floor(double c) {
  const double r = std::round(c);
  return static_cast<int>(std::abs(c - r) < 1e-7 ? r : std::floor(c));
}

}  // namespace

void DepthPano::pixel_of(const Vec3& dir, int& u, int& v) const {
  double uc = 0.0;
  double vc = 0.0;
  project(dir, uc, vc);
  u = pixel_floor(uc);
  u = ((u % width) + width) % width;
  v = std::clamp(pixel_floor(vc), 0, height - 1);
}

Vec3 DepthPano::pixel_direction(int u, int v) const {
  const double az = ((u + 0.5) - 0.5 * width) / width * kTwoPi;
  const double el = ((v + 0.5) - 0.5 * height) / height * kPi;
  return {std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el)};
}

DepthPano render_pano(const PointCloudMap& local_map, const Pose& base, const PanoOptions& options) {
  if (options.width <= 0 || options.height <= 0) {
    throw std::invalid_argument("render_pano: width and height must be positive");
  }
  if (!(options.splat_radius >= 0.0)) throw std::invalid_argument("render_pano: negative splat radius");
  DepthPano pano;
  pano.width = options.width;
  pano.height = options.height;
  pano.base = base;
  const auto n_pix = static_cast<std::size_t>(pano.width) * pano.height;
  pano.depth.assign(n_pix, std::numeric_limits<double>::infinity());
  pano.point_index.assign(n_pix, -1);

  auto write = [&](int u, int v, double r, std::int32_t idx) {
    const std::size_t k = pano.index(u, v);
    if (r < pano.depth[k] || (r == pano.depth[k] && idx < pano.point_index[k])) {
      pano.depth[k] = r;
      pano.point_index[k] = idx;
    }
  };

  const Mat3 rt = base.rotation.transpose();
  const double px_per_rad_u = pano.width / kTwoPi;
  const double px_per_rad_v = pano.height / kPi;
  for (std::size_t i = 0; i < local_map.size(); ++i) {
    const Vec3 p = rt * (local_map.points[i] - base.translation);
    const double r = p.norm();
    if (!(r > 1e-9)) continue;
    double uc = 0.0;
    double vc = 0.0;
    pano.project(p, uc, vc);
    const auto idx = static_cast<std::int32_t>(i);
    int u0 = 0;
    int v0 = 0;
    pano.pixel_of(p, u0, v0);
    write(u0, v0, r, idx);
    if (options.splat_radius <= 0.0) continue;

    const double ang = std::atan2(options.splat_radius, r);
    const double cos_el = std::max(std::sqrt(std::max(0.0, 1.0 - (p.z() / r) * (p.z() / r))), 1e-3);
    const double hu = std::min<double>(ang * px_per_rad_u / cos_el, options.max_splat);
    const double hv = std::min<double>(ang * px_per_rad_v, options.max_splat);
    const int ulo = static_cast<int>(std::floor(uc - hu));
    const int uhi = static_cast<int>(std::floor(uc + hu));
    const int vlo = std::max(0, static_cast<int>(std::floor(vc - hv)));
    const int vhi = std::min(pano.height - 1, static_cast<int>(std::floor(vc + hv)));
    for (int v = vlo; v <= vhi; ++v) {
      for (int u = ulo; u <= uhi; ++u) {
        write(((u % pano.width) + pano.width) % pano.width, v, r, idx);
      }
    }
  }
  return pano;
}

SamplingPattern::SamplingPattern(const FovModel& fov, double step_deg)
    : directions(fov_directions(fov, step_deg)) {}

namespace {

/// Normal from the 4-neighbourhood of the pano, in the base frame.
bool pano_normal(const DepthPano& pano, int u, int v, Vec3& n) {
  if (v <= 0 || v >= pano.height - 1) return false;
  const int ul = (u + pano.width - 1) % pano.width;
  const int ur = (u + 1) % pano.width;
  if (!pano.has_return(ul, v) || !pano.has_return(ur, v) || !pano.has_return(u, v - 1) ||
      !pano.has_return(u, v + 1)) {
    return false;
  }
  const Vec3 a = pano.at(ur, v) * pano.pixel_direction(ur, v) - pano.at(ul, v) * pano.pixel_direction(ul, v);
  const Vec3 b = pano.at(u, v + 1) * pano.pixel_direction(u, v + 1) -
                 pano.at(u, v - 1) * pano.pixel_direction(u, v - 1);
  const Vec3 c = a.cross(b);
  const double len = c.norm();
  if (!(len > 1e-12)) return false;
  n = c / len;
  if (n.dot(pano.pixel_direction(u, v)) > 0.0) n = -n;
  return true;
}

}  // namespace

std::vector<Measurement> sample_measurements(const DepthPano& pano, const PointCloudMap& local_map,
                                             double theta, const SamplingPattern& pattern,
                                             const Calibration& calib) {
  const Mat3 rot = rotation_z(theta) * calib.rotation;
  std::vector<Measurement> out;
  out.reserve(pattern.directions.size());
  for (const Vec3& d_l : pattern.directions) {
    const Vec3 d = rot * d_l;
    int u = 0;
    int v = 0;
    pano.pixel_of(d, u, v);
    const std::size_t k = pano.index(u, v);
    const std::int32_t idx = pano.point_index[k];
    if (idx < 0) continue;
    Measurement m;
    m.p = pano.depth[k] * d;
    const auto i = static_cast<std::size_t>(idx);
    if (local_map.has_normals() && i < local_map.size() && local_map.normal_valid[i]) {
      m.n = local_map.normals[i];
    } else {
      Vec3 nb;
      if (!pano_normal(pano, u, v, nb)) continue;
      m.n = pano.base.rotation * nb;
    }
    out.push_back(m);
  }
  return out;
}

double residual(const Pose& pose, const Vec3& p, const Vec3& plane_point, const Vec3& n) {
  return n.dot(pose.rotation * p + pose.translation - plane_point);
}

Vec6 residual_jacobian(const Pose& pose, const Vec3& p, const Vec3& n) {
  Vec6 j;
  j.head<3>() = (pose.rotation * p).cross(n);
  j.tail<3>() = n;
  return j;
}

Mat6 information_matrix(std::span<const Measurement> samples, const Pose& pose) {
  Mat6 info = Mat6::Zero();
  for (const auto& m : samples) {
    const Vec6 j = residual_jacobian(pose, m.p, m.n);
    info.selfadjointView<Eigen::Lower>().rankUpdate(j);
  }
  return info.selfadjointView<Eigen::Lower>();
}

double uncertainty_a_opt(const Mat6& info, double eps_reg) {
  if (!(eps_reg > 0.0) || !std::isfinite(eps_reg)) {
    throw std::invalid_argument("uncertainty_a_opt: eps_reg must be positive");
  }
  const Mat6 a = info + eps_reg * Mat6::Identity();
  const Eigen::LLT<Mat6> llt(a);
  if (llt.info() != Eigen::Success) throw std::invalid_argument("uncertainty_a_opt: matrix not PSD");
  return llt.solve(Mat6::Identity()).trace();
}

std::size_t profile_size(double delta) {
  if (!(delta > 0.0) || !std::isfinite(delta)) {
    throw std::invalid_argument("u profile: step must be positive");
  }
  const double s = kTwoPi / delta;
  const double rounded = std::round(s);
  if (rounded < 1.0 || std::abs(rounded * delta - kTwoPi) > 1e-9) {
    throw std::invalid_argument("u profile: 2π is not an integer multiple of the step");
  }
  return static_cast<std::size_t>(rounded);
}

UProfile sample_u_profile(const DepthPano& pano, const PointCloudMap& local_map,
                          const SamplingPattern& pattern, const Calibration& calib,
                          double theta_base, const UProfileOptions& options) {
  const std::size_t n = profile_size(options.delta);
  UProfile prof;
  prof.theta_base = theta_base;
  prof.delta = options.delta;
  prof.samples.resize(n);
  for (std::size_t s = 0; s < n; ++s) {
    const double theta = theta_base + static_cast<double>(s) * options.delta;
    const auto meas = sample_measurements(pano, local_map, theta, pattern, calib);
    prof.samples[s] = uncertainty_a_opt(information_matrix(meas, pano.base), options.eps_reg);
  }
  return prof;
}

namespace {

void locate(const UProfile& prof, double theta, std::size_t& seg, double& frac) {
  if (prof.samples.empty()) throw std::invalid_argument("surrogate: empty profile");
  if (!std::isfinite(theta)) throw std::invalid_argument("surrogate: non-finite angle");
  const auto n = static_cast<double>(prof.samples.size());
  double x = (theta - prof.theta_base) / prof.delta;
  // Angles that land on a node up to rounding noise evaluate exactly there.
  const double xr = std::round(x);
  if (std::abs(x - xr) < 1e-9) x = xr;
  const double fl = std::floor(x);
  frac = x - fl;
  double m = std::fmod(fl, n);
  if (m < 0.0) m += n;
  seg = static_cast<std::size_t>(m);
  if (seg >= prof.samples.size()) seg = 0;
}

}  // namespace

double surrogate_eval(const UProfile& prof, double theta) {
  std::size_t s = 0;
  double f = 0.0;
  locate(prof, theta, s, f);
  const double a = prof.samples[s];
  const double b = prof.samples[(s + 1) % prof.samples.size()];
  return a + f * (b - a);
}

double surrogate_grad(const UProfile& prof, double theta) {
  std::size_t s = 0;
  double f = 0.0;
  locate(prof, theta, s, f);
  const double a = prof.samples[s];
  const double b = prof.samples[(s + 1) % prof.samples.size()];
  return (b - a) / prof.delta;
}

}  // namespace mlidar
