#include "mlidar/odometry.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

namespace mlidar {

std::string to_string(OdometryMode mode) { return mode == OdometryMode::icp ? "icp" : "oracle"; }

OdometryMode odometry_mode_from_string(const std::string& s) {
  if (s == "icp") return OdometryMode::icp;
  if (s == "oracle") return OdometryMode::oracle;
  throw std::invalid_argument("unknown odometry mode '" + s + "'");
}

void validate(const OdometryConfig& c) {
  if (!(c.sigma_t >= 0.0) || !(c.sigma_r >= 0.0)) {
    throw std::invalid_argument("odometry: noise sigmas must be >= 0");
  }
  if (!(c.d_max > 0.0) || !(c.r_local > 0.0) || !(c.map_voxel > 0.0) || !(c.scan_voxel >= 0.0)) {
    throw std::invalid_argument("odometry: d_max, r_local and map_voxel must be positive");
  }
  if (c.normal_k < 3) throw std::invalid_argument("odometry: normal_k must be >= 3");
  if (c.max_iterations < 1) throw std::invalid_argument("odometry: max_iterations must be >= 1");
  if (!(c.convergence > 0.0)) throw std::invalid_argument("odometry: convergence must be positive");
}

Pose predict_pose(const OdometryState& state) {
  if (state.updates < 2) return state.pose;
  const Pose delta = state.prev_pose.inverse() * state.pose;
  Pose p = state.pose * delta;
  p.rotation = orthonormalize(p.rotation);
  return p;
}

std::vector<Vec3> voxel_downsample(std::span<const Vec3> points, double voxel) {
  if (!(voxel > 0.0)) return {points.begin(), points.end()};
  std::unordered_set<CellKey, CellKeyHash> seen;
  seen.reserve(points.size());
  std::vector<Vec3> out;
  out.reserve(points.size());
  for (const auto& p : points) {
    if (seen.insert(cell_of(p, voxel)).second) out.push_back(p);
  }
  return out;
}

namespace {

struct System {
  Mat6 h = Mat6::Zero();
  Vec6 g = Vec6::Zero();
  double cost = 0.0;  // mean squared residual
  double mean_abs = 0.0;
  std::size_t count = 0;
};

void assemble(std::span<const Vec3> pts, const OdometryState& st, const Pose& x, double d_max2,
              System& s) {
  s = System{};
  double sum2 = 0.0;
  double sum_abs = 0.0;
  const auto& map = st.local_map;
  for (const auto& p : pts) {
    const Vec3 rp = x.rotation * p;
    const Vec3 q = rp + x.translation;
    Neighbor nb;
    if (!st.tree.nearest(q, d_max2, nb)) continue;
    if (!map.normal_valid[nb.index]) continue;
    const Vec3& n = map.normals[nb.index];
    const double r = n.dot(q - map.points[nb.index]);
    Vec6 j;
    j.head<3>() = rp.cross(n);
    j.tail<3>() = n;
    s.h.selfadjointView<Eigen::Lower>().rankUpdate(j);
    s.g += j * r;
    sum2 += r * r;
    sum_abs += std::abs(r);
    ++s.count;
  }
  s.h = s.h.selfadjointView<Eigen::Lower>();
  if (s.count > 0) {
    s.cost = sum2 / static_cast<double>(s.count);
    s.mean_abs = sum_abs / static_cast<double>(s.count);
  }
}

Pose apply_increment(const Pose& x, const Vec6& delta) {
  Pose out;
  out.rotation = orthonormalize(so3_exp(delta.head<3>()) * x.rotation);
  out.translation = x.translation + delta.tail<3>();
  return out;
}

}  // namespace

RegistrationResult register_scan(std::span<const Vec3> scan_points, const OdometryState& state,
                                 const Pose& init, const OdometryConfig& cfg) {
  if (scan_points.size() < cfg.min_points) {
    throw std::invalid_argument("register_scan: too few scan points");
  }
  if (state.local_map.empty() || state.tree.empty() || !state.local_map.has_normals()) {
    throw std::invalid_argument("register_scan: local map is empty");
  }
  const auto pts = voxel_downsample(scan_points, cfg.scan_voxel);
  const double d_max2 = cfg.d_max * cfg.d_max;

  RegistrationResult res;
  Pose x = init;
  System cur;
  assemble(pts, state, x, d_max2, cur);
  if (cur.count < cfg.min_correspondences) {
    throw DegenerateRegistration("register_scan: " + std::to_string(cur.count) +
                                 " correspondences");
  }
  res.cost_history.push_back(cur.cost);

  double damping_scale = 1e-9;
  for (int it = 0; it < cfg.max_iterations; ++it) {
    ++res.iterations;
    const Eigen::SelfAdjointEigenSolver<Mat6> es(cur.h, Eigen::EigenvaluesOnly);
    const double lmax = std::max(es.eigenvalues().maxCoeff(), 1e-12);
    const double lmin = es.eigenvalues().minCoeff();
    if (lmin < 1e-6 * lmax) res.damped = true;
    const double mu = damping_scale * lmax + (lmin < 1e-6 * lmax ? 1e-6 * lmax : 0.0);
    const Mat6 a = cur.h + mu * Mat6::Identity();
    const Vec6 delta = -a.ldlt().solve(cur.g);
    if (!delta.allFinite()) break;

    const Pose cand = apply_increment(x, delta);
    System next;
    assemble(pts, state, cand, d_max2, next);
    if (next.count >= cfg.min_correspondences && next.cost <= cur.cost) {
      x = cand;
      cur = next;
      res.cost_history.push_back(cur.cost);
      if (delta.norm() < cfg.convergence) {
        res.converged = true;
        break;
      }
    } else {
      if (delta.norm() < cfg.convergence) {
        res.converged = true;
        break;
      }
      damping_scale *= 100.0;
      if (damping_scale > 1e3) break;
    }
  }
  res.pose = x;
  res.mean_abs_residual = cur.mean_abs;
  res.correspondences = cur.count;
  return res;
}

namespace {

void refresh_normals(OdometryState& st, const std::vector<std::uint32_t>& targets, const Vec3& view,
                     const OdometryConfig& cfg) {
  auto& map = st.local_map;
  std::vector<Vec3> nb_pts;
  for (auto i : targets) {
    map.normal_valid[i] = 0;
    map.normals[i] = Vec3::Zero();
    if (map.size() < cfg.normal_k) continue;
    const auto nbs = st.tree.knn(map.points[i], cfg.normal_k);
    nb_pts.clear();
    for (const auto& nb : nbs) nb_pts.push_back(map.points[nb.index]);
    Vec3 n;
    if (!plane_normal(nb_pts, n, cfg.max_curvature_ratio)) continue;
    if (n.dot(view - map.points[i]) < 0.0) n = -n;
    map.normals[i] = n;
    map.normal_valid[i] = 1;
  }
}

}  // namespace

void update_local_map(OdometryState& st, std::span<const Vec3> scan_points, const Pose& pose,
                      const OdometryConfig& cfg) {
  if (!is_rotation(pose.rotation, 1e-6) || !pose.translation.allFinite()) {
    throw std::invalid_argument("update_local_map: invalid pose");
  }
  auto& map = st.local_map;
  if (st.occupancy.voxel_size() != cfg.map_voxel) {
    st.occupancy = VoxelGrid(cfg.map_voxel);
    for (std::size_t i = 0; i < map.size(); ++i) {
      st.occupancy.insert(map.points[i], static_cast<std::uint32_t>(i));
    }
  }

  std::vector<std::uint32_t> fresh;
  for (const auto& p : scan_points) {
    const Vec3 w = pose.apply(p);
    if (st.occupancy.find(st.occupancy.cell(w)) != nullptr) continue;
    const auto idx = static_cast<std::uint32_t>(map.size());
    st.occupancy.insert(w, idx);
    map.points.push_back(w);
    map.normals.push_back(Vec3::Zero());
    map.normal_valid.push_back(0);
    fresh.push_back(idx);
  }

  // Evict, keeping survivors in their original order.
  const double r2 = cfg.r_local * cfg.r_local;
  bool evict = false;
  for (const auto& p : map.points) {
    if ((p - pose.translation).squaredNorm() > r2) {
      evict = true;
      break;
    }
  }
  std::vector<std::uint32_t> remap;
  if (evict) {
    remap.assign(map.size(), std::numeric_limits<std::uint32_t>::max());
    PointCloudMap kept;
    for (std::size_t i = 0; i < map.size(); ++i) {
      if ((map.points[i] - pose.translation).squaredNorm() > r2) continue;
      remap[i] = static_cast<std::uint32_t>(kept.size());
      kept.points.push_back(map.points[i]);
      kept.normals.push_back(map.normals[i]);
      kept.normal_valid.push_back(map.normal_valid[i]);
    }
    map = std::move(kept);
    st.occupancy = VoxelGrid(cfg.map_voxel);
    for (std::size_t i = 0; i < map.size(); ++i) {
      st.occupancy.insert(map.points[i], static_cast<std::uint32_t>(i));
    }
    std::vector<std::uint32_t> kept_fresh;
    for (auto i : fresh) {
      if (remap[i] != std::numeric_limits<std::uint32_t>::max()) kept_fresh.push_back(remap[i]);
    }
    fresh = std::move(kept_fresh);
  }
  st.tree = KdTree(map.points);
  if (fresh.empty()) return;

  // Neighbourhoods that gained points get their normals recomputed.
  const double coarse = std::max(5.0 * cfg.map_voxel, 1e-6);
  std::unordered_set<CellKey, CellKeyHash> touched;
  for (auto i : fresh) {
    const CellKey c = cell_of(map.points[i], coarse);
    for (int dx = -1; dx <= 1; ++dx)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dz = -1; dz <= 1; ++dz) touched.insert({c.x + dx, c.y + dy, c.z + dz});
  }
  std::vector<std::uint32_t> targets;
  for (std::size_t i = 0; i < map.size(); ++i) {
    if (touched.count(cell_of(map.points[i], coarse))) targets.push_back(static_cast<std::uint32_t>(i));
  }
  refresh_normals(st, targets, pose.translation, cfg);
}

Pose oracle_pose(const Pose& gt, double sigma_t, double sigma_r, Rng& rng) {
  if (!(sigma_t >= 0.0) || !(sigma_r >= 0.0)) throw std::invalid_argument("oracle_pose: negative sigma");
  Pose out = gt;
  if (sigma_t > 0.0) {
    const double x = rng.normal();
    const double y = rng.normal();
    const double z = rng.normal();
    out.translation += sigma_t * Vec3(x, y, z);
  }
  if (sigma_r > 0.0) {
    const double x = rng.normal();
    const double y = rng.normal();
    const double z = rng.normal();
    out.rotation = orthonormalize(so3_exp(sigma_r * Vec3(x, y, z)) * gt.rotation);
  }
  return out;
}

LidarOdometry::LidarOdometry(OdometryConfig cfg, std::uint64_t seed)
    : cfg_(std::move(cfg)), rng_(seed) {
  validate(cfg_);
  state_.occupancy = VoxelGrid(cfg_.map_voxel);
}

LidarOdometry::Update LidarOdometry::process(std::span<const Vec3> scan_points, const Pose& gt) {
  Update up;
  if (state_.updates == 0) {
    up.pose = gt;
  } else if (cfg_.mode == OdometryMode::oracle) {
    up.pose = oracle_pose(gt, cfg_.sigma_t, cfg_.sigma_r, rng_);
  } else {
    const Pose pred = predict_pose(state_);
    up.pose = pred;
    if (scan_points.size() < cfg_.min_points || state_.local_map.empty()) {
      up.degenerate = true;
    } else {
      try {
        up.registration = register_scan(scan_points, state_, pred, cfg_);
        up.pose = up.registration.pose;
        up.registered = true;
      } catch (const DegenerateRegistration&) {
        up.degenerate = true;
      }
    }
  }
  state_.prev_pose = state_.updates == 0 ? up.pose : state_.pose;
  state_.pose = up.pose;
  ++state_.updates;
  update_local_map(state_, scan_points, up.pose, cfg_);
  return up;
}

}  // namespace mlidar
