#include "mlidar/sensor_sim.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace mlidar {

FovModel fov_preset(const std::string& name) {
  FovModel f;
  f.name = name;
  if (name == "spinning") {
    f.horizontal_deg = 360.0;
    f.vertical_deg = 30.0;
  } else if (name == "solid_state") {
    f.horizontal_deg = 70.0;
    f.vertical_deg = 70.0;
  } else if (name == "dome") {
    f.horizontal_deg = 360.0;
    f.vertical_deg = 90.0;
  } else {
    throw std::invalid_argument("unknown fov preset '" + name + "'");
  }
  return f;
}

void validate(const FovModel& f) {
  if (!(f.horizontal_deg > 0.0 && f.horizontal_deg <= 360.0)) {
    throw std::invalid_argument("fov: horizontal extent must be in (0, 360]");
  }
  if (!(f.vertical_deg > 0.0 && f.vertical_deg <= 180.0)) {
    throw std::invalid_argument("fov: vertical extent must be in (0, 180]");
  }
  if (!(f.resolution_deg > 0.0) || !std::isfinite(f.resolution_deg)) {
    throw std::invalid_argument("fov: resolution must be positive");
  }
  if (!(f.max_range > 0.0) || !std::isfinite(f.max_range)) {
    throw std::invalid_argument("fov: max_range must be positive");
  }
  if (!(f.scan_rate_hz > 0.0)) throw std::invalid_argument("fov: scan rate must be positive");
}

std::vector<Vec3> fov_directions(const FovModel& fov, double step_deg) {
  validate(fov);
  if (!(step_deg > 0.0)) throw std::invalid_argument("fov_directions: step must be positive");
  constexpr double kSlack = 1e-9;
  const bool full_circle = fov.horizontal_deg >= 360.0 - kSlack;
  std::size_t n_az = 0;
  double az0 = 0.0;
  if (full_circle) {
    n_az = static_cast<std::size_t>(std::floor(360.0 / step_deg + kSlack));
    az0 = -180.0;
  } else {
    n_az = static_cast<std::size_t>(std::floor(fov.horizontal_deg / step_deg + kSlack)) + 1;
    az0 = -0.5 * (n_az - 1) * step_deg;
  }
  const auto n_el = static_cast<std::size_t>(std::floor(fov.vertical_deg / step_deg + kSlack)) + 1;
  const double el0 = -0.5 * (n_el - 1) * step_deg;

  std::vector<Vec3> dirs;
  dirs.reserve(n_az * n_el);
  for (std::size_t a = 0; a < n_az; ++a) {
    const double az = deg2rad(az0 + a * step_deg);
    for (std::size_t e = 0; e < n_el; ++e) {
      const double el = deg2rad(std::clamp(el0 + e * step_deg, -90.0, 90.0));
      dirs.emplace_back(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
    }
  }
  return dirs;
}

namespace {

void check_ray(const Vec3& dir, double capture_radius, double voxel) {
  const double n = dir.norm();
  if (!(n > 0.0) || !std::isfinite(n)) throw std::invalid_argument("cast_ray: zero-length direction");
  if (std::abs(n - 1.0) > 1e-9) throw std::invalid_argument("cast_ray: direction must be unit length");
  if (!(capture_radius > 0.0) || capture_radius > voxel) {
    throw std::invalid_argument("cast_ray: capture radius must be in (0, voxel size]");
  }
}

/// Tests one map point against the ray and keeps the best candidate.
struct Candidate {
  double range = std::numeric_limits<double>::infinity();
  std::uint32_t index = std::numeric_limits<std::uint32_t>::max();

  void consider(const PointCloudMap& map, std::uint32_t idx, const Vec3& o, const Vec3& d,
                double max_range, double cr2) {
    const Vec3 v = map.points[idx] - o;
    const double s = v.dot(d);
    if (!(s > 0.0)) return;
    const double r2 = v.squaredNorm();
    if (r2 - s * s > cr2) return;
    const double r = std::sqrt(r2);
    if (r > max_range) return;
    if (r < range || (r == range && idx < index)) {
      range = r;
      index = idx;
    }
  }

  std::optional<RayHit> result(const PointCloudMap& map, const Vec3& d) const {
    if (index == std::numeric_limits<std::uint32_t>::max()) return std::nullopt;
    RayHit h;
    h.point = map.points[index];
    h.range = range;
    h.index = index;
    if (map.has_normals() && map.normal_valid[index]) {
      h.normal = map.normals[index];
      if (h.normal.dot(d) > 0.0) h.normal = -h.normal;
    } else {
      h.normal = -d;
    }
    return h;
  }
};

/// Amanatides-Woo traversal. `visit(cell, step_axis, t_in)` is called for
/// every cell pierced by the ray; step_axis is -1 for the first cell. The
/// traversal stops when visit returns false or t_in exceeds t_max.
template <typename Visit>
void traverse(const Vec3& o, const Vec3& d, double voxel, double t_start, double t_max,
              Visit&& visit) {
  const Vec3 start = o + t_start * d;
  Eigen::Matrix<std::int64_t, 3, 1> cell;
  Vec3 t_next;
  Vec3 t_delta;
  Eigen::Matrix<std::int64_t, 3, 1> step;
  for (int a = 0; a < 3; ++a) {
    cell[a] = static_cast<std::int64_t>(std::floor(start[a] / voxel));
    if (d[a] > 0.0) {
      step[a] = 1;
      t_delta[a] = voxel / d[a];
      t_next[a] = t_start + ((cell[a] + 1) * voxel - start[a]) / d[a];
    } else if (d[a] < 0.0) {
      step[a] = -1;
      t_delta[a] = -voxel / d[a];
      t_next[a] = t_start + (cell[a] * voxel - start[a]) / d[a];
    } else {
      step[a] = 0;
      t_delta[a] = std::numeric_limits<double>::infinity();
      t_next[a] = std::numeric_limits<double>::infinity();
    }
  }
  double t_in = t_start;
  int axis = -1;
  while (t_in <= t_max) {
    if (!visit(cell, axis, t_in)) return;
    axis = 0;
    if (t_next[1] < t_next[axis]) axis = 1;
    if (t_next[2] < t_next[axis]) axis = 2;
    t_in = t_next[axis];
    cell[axis] += step[axis];
    t_next[axis] += t_delta[axis];
  }
}

/// Calls fn(dx, dy, dz) for the neighbour offsets that become visible after
/// stepping along `axis` with direction `sign`; all 27 for the first cell.
template <typename Fn>
void for_new_neighbours(int axis, std::int64_t sign, Fn&& fn) {
  if (axis < 0) {
    for (int dx = -1; dx <= 1; ++dx)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dz = -1; dz <= 1; ++dz) fn(dx, dy, dz);
    return;
  }
  const int a1 = (axis + 1) % 3;
  const int a2 = (axis + 2) % 3;
  for (int u = -1; u <= 1; ++u) {
    for (int v = -1; v <= 1; ++v) {
      int off[3];
      off[axis] = static_cast<int>(sign);
      off[a1] = u;
      off[a2] = v;
      fn(off[0], off[1], off[2]);
    }
  }
}

}  // namespace

std::optional<RayHit> cast_ray(const VoxelGrid& grid, const PointCloudMap& map, const Vec3& origin,
                               const Vec3& dir, double max_range, double capture_radius) {
  const double voxel = grid.voxel_size();
  check_ray(dir, capture_radius, voxel);
  const double cr2 = capture_radius * capture_radius;
  Candidate best;
  Eigen::Matrix<std::int64_t, 3, 1> step;
  for (int a = 0; a < 3; ++a) step[a] = dir[a] > 0.0 ? 1 : (dir[a] < 0.0 ? -1 : 0);
  traverse(origin, dir, voxel, 0.0, max_range,
           [&](const Eigen::Matrix<std::int64_t, 3, 1>& c, int axis, double t_in) {
             if (t_in > best.range) return false;
             for_new_neighbours(axis, axis < 0 ? 0 : step[axis], [&](int dx, int dy, int dz) {
               const CellKey key{static_cast<std::int32_t>(c[0] + dx),
                                 static_cast<std::int32_t>(c[1] + dy),
                                 static_cast<std::int32_t>(c[2] + dz)};
               if (const auto* idx = grid.find(key)) {
                 for (auto i : *idx) best.consider(map, i, origin, dir, max_range, cr2);
               }
             });
             return true;
           });
  return best.result(map, dir);
}

// ---------------------------------------------------------------------------
// RayCaster

RayCaster::RayCaster(const PointCloudMap& map, double voxel_size, double capture_radius)
    : map_(&map), voxel_size_(voxel_size), capture_radius_(capture_radius) {
  if (!(voxel_size > 0.0)) throw std::invalid_argument("RayCaster: voxel size must be positive");
  if (!(capture_radius > 0.0) || capture_radius > voxel_size) {
    throw std::invalid_argument("RayCaster: capture radius must be in (0, voxel size]");
  }
  if (map.empty()) {
    origin_cell_.setZero();
    dims_.setZero();
    return;
  }
  Eigen::Matrix<std::int64_t, 3, 1> lo, hi;
  lo.setConstant(std::numeric_limits<std::int64_t>::max());
  hi.setConstant(std::numeric_limits<std::int64_t>::min());
  std::vector<Eigen::Matrix<std::int64_t, 3, 1>> keys(map.size());
  for (std::size_t i = 0; i < map.size(); ++i) {
    for (int a = 0; a < 3; ++a) {
      keys[i][a] = static_cast<std::int64_t>(std::floor(map.points[i][a] / voxel_size));
    }
    lo = lo.cwiseMin(keys[i]);
    hi = hi.cwiseMax(keys[i]);
  }
  // One cell of padding so every neighbourhood lookup stays in bounds.
  origin_cell_ = lo.array() - 1;
  dims_ = (hi - lo).array() + 3;
  const std::size_t n_cells = static_cast<std::size_t>(dims_[0] * dims_[1] * dims_[2]);
  cell_start_.assign(n_cells + 1, 0);
  auto flat = [&](const Eigen::Matrix<std::int64_t, 3, 1>& k) {
    const auto r = k - origin_cell_;
    return static_cast<std::size_t>((r[2] * dims_[1] + r[1]) * dims_[0] + r[0]);
  };
  for (const auto& k : keys) ++cell_start_[flat(k) + 1];
  for (std::size_t c = 0; c < n_cells; ++c) cell_start_[c + 1] += cell_start_[c];
  cell_points_.resize(map.size());
  std::vector<std::uint32_t> fill(cell_start_.begin(), cell_start_.end() - 1);
  for (std::size_t i = 0; i < map.size(); ++i) {
    cell_points_[fill[flat(keys[i])]++] = static_cast<std::uint32_t>(i);
  }
  near_.assign(n_cells, 0);
  for (const auto& k : keys) {
    const auto r = k - origin_cell_;
    for (int dz = -1; dz <= 1; ++dz)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const std::size_t c = static_cast<std::size_t>(
              ((r[2] + dz) * dims_[1] + (r[1] + dy)) * dims_[0] + (r[0] + dx));
          near_[c] = 1;
        }
  }
}

bool RayCaster::cell_index(std::int64_t i, std::int64_t j, std::int64_t k, std::size_t& out) const {
  i -= origin_cell_[0];
  j -= origin_cell_[1];
  k -= origin_cell_[2];
  if (i < 0 || j < 0 || k < 0 || i >= dims_[0] || j >= dims_[1] || k >= dims_[2]) return false;
  out = static_cast<std::size_t>((k * dims_[1] + j) * dims_[0] + i);
  return true;
}

std::optional<RayHit> RayCaster::cast(const Vec3& origin, const Vec3& dir, double max_range) const {
  check_ray(dir, capture_radius_, voxel_size_);
  if (map_->empty()) return std::nullopt;
  // Clip the ray against the padded grid bounds.
  const Vec3 box_lo = origin_cell_.cast<double>() * voxel_size_;
  const Vec3 box_hi = (origin_cell_ + dims_).cast<double>() * voxel_size_;
  double t0 = 0.0;
  double t1 = max_range;
  for (int a = 0; a < 3; ++a) {
    if (dir[a] == 0.0) {
      if (origin[a] < box_lo[a] || origin[a] >= box_hi[a]) return std::nullopt;
      continue;
    }
    double ta = (box_lo[a] - origin[a]) / dir[a];
    double tb = (box_hi[a] - origin[a]) / dir[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (t0 > t1) return std::nullopt;

  const double cr2 = capture_radius_ * capture_radius_;
  Candidate best;
  Eigen::Matrix<std::int64_t, 3, 1> step;
  for (int a = 0; a < 3; ++a) step[a] = dir[a] > 0.0 ? 1 : (dir[a] < 0.0 ? -1 : 0);
  bool first = true;
  traverse(origin, dir, voxel_size_, t0, t1,
           [&](const Eigen::Matrix<std::int64_t, 3, 1>& c, int axis, double t_in) {
             if (t_in > best.range) return false;
             std::size_t ci = 0;
             // Outside the grid: keep going until entry, stop after exit.
             if (!cell_index(c[0], c[1], c[2], ci)) return first;
             // Entering mid-grid, the whole neighbourhood is new.
             const int ax = first ? -1 : axis;
             first = false;
             if (!near_[ci] && ax >= 0) return true;
             for_new_neighbours(ax, ax < 0 ? 0 : step[ax], [&](int dx, int dy, int dz) {
               std::size_t ni = 0;
               if (!cell_index(c[0] + dx, c[1] + dy, c[2] + dz, ni)) return;
               for (std::uint32_t p = cell_start_[ni]; p < cell_start_[ni + 1]; ++p) {
                 best.consider(*map_, cell_points_[p], origin, dir, max_range, cr2);
               }
             });
             return true;
           });
  return best.result(*map_, dir);
}

// ---------------------------------------------------------------------------
// Scans

std::size_t Scan::hit_count() const {
  return static_cast<std::size_t>(std::count(hit.begin(), hit.end(), std::uint8_t{1}));
}

std::vector<Vec3> Scan::hit_points() const {
  std::vector<Vec3> out;
  out.reserve(hit_count());
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (hit[i]) out.push_back(points[i]);
  }
  return out;
}

Scan simulate_scan(const RayCaster& caster, const Pose& sensor_pose, const FovModel& fov,
                   double timestamp, const ScanOptions& options, Rng* rng) {
  const auto dirs = fov_directions(fov, fov.resolution_deg);
  return simulate_scan(caster, sensor_pose, dirs, fov.max_range, timestamp, options, rng);
}

Scan simulate_scan(const RayCaster& caster, const Pose& sensor_pose,
                   std::span<const Vec3> directions, double max_range, double timestamp,
                   const ScanOptions& options, Rng* rng) {
  if (!is_rotation(sensor_pose.rotation, 1e-6) || !sensor_pose.translation.allFinite()) {
    throw std::invalid_argument("simulate_scan: invalid sensor pose");
  }
  Scan scan;
  scan.timestamp = timestamp;
  scan.points.assign(directions.size(), Vec3::Zero());
  scan.hit.assign(directions.size(), 0);
  const Mat3 rt = sensor_pose.rotation.transpose();
  for (std::size_t i = 0; i < directions.size(); ++i) {
    const Vec3 d = (sensor_pose.rotation * directions[i]).normalized();
    const auto h = caster.cast(sensor_pose.translation, d, max_range);
    if (!h) continue;
    Vec3 p = rt * (h->point - sensor_pose.translation);
    if (options.range_noise > 0.0 && rng != nullptr) {
      const double r = p.norm();
      const double noisy = std::max(1e-3, r + rng->normal(0.0, options.range_noise));
      p *= noisy / r;
    }
    scan.points[i] = p;
    scan.hit[i] = 1;
  }
  return scan;
}

}  // namespace mlidar
