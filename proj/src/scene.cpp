#include "mlidar/scene.hpp"

#include <Eigen/Eigenvalues>

#include "mlidar/kdtree.hpp"
#include "mlidar/random.hpp"

namespace mlidar {

// ---------------------------------------------------------------------------
// VoxelGrid

VoxelGrid::VoxelGrid(double voxel_size) : voxel_size_(voxel_size) {
  if (!(voxel_size > 0.0) || !std::isfinite(voxel_size)) {
    throw std::invalid_argument("VoxelGrid: voxel_size must be positive");
  }
}

void VoxelGrid::insert(const Vec3& p, std::uint32_t index) {
  cells_[cell(p)].push_back(index);
  ++count_;
}

const std::vector<std::uint32_t>* VoxelGrid::find(const CellKey& key) const {
  auto it = cells_.find(key);
  return it == cells_.end() ? nullptr : &it->second;
}

VoxelGrid build_voxel_index(const PointCloudMap& map, double voxel_size) {
  VoxelGrid grid(voxel_size);
  for (std::size_t i = 0; i < map.size(); ++i) {
    grid.insert(map.points[i], static_cast<std::uint32_t>(i));
  }
  return grid;
}

// ---------------------------------------------------------------------------
// Normals

bool plane_normal(std::span<const Vec3> pts, Vec3& normal, double max_curvature_ratio) {
  if (pts.size() < 3) return false;
  Vec3 mean = Vec3::Zero();
  for (const auto& p : pts) mean += p;
  mean /= static_cast<double>(pts.size());
  Mat3 cov = Mat3::Zero();
  for (const auto& p : pts) {
    const Vec3 d = p - mean;
    cov.noalias() += d * d.transpose();
  }
  cov /= static_cast<double>(pts.size());
  Eigen::SelfAdjointEigenSolver<Mat3> es(cov);
  const Vec3 ev = es.eigenvalues();
  // Coincident or collinear neighbourhoods leave the plane undetermined.
  if (!(ev(2) > 0.0) || ev(1) <= 1e-10 * ev(2)) return false;
  if (max_curvature_ratio < 1.0 && ev(0) > max_curvature_ratio * ev(1)) return false;
  normal = es.eigenvectors().col(0).normalized();
  return true;
}

PointCloudMap estimate_normals(const PointCloudMap& map, const NormalOptions& options) {
  if (options.k < 3) throw std::invalid_argument("estimate_normals: k must be >= 3");
  if (map.size() < options.k) {
    throw std::invalid_argument("estimate_normals: fewer points than k");
  }
  PointCloudMap out;
  out.points = map.points;
  out.normals.assign(map.size(), Vec3::Zero());
  out.normal_valid.assign(map.size(), 0);

  KdTree tree(out.points);
  std::vector<Vec3> hood;
  hood.reserve(options.k);
  for (std::size_t i = 0; i < map.size(); ++i) {
    const Vec3& p = out.points[i];
    hood.clear();
    for (const auto& nb : tree.knn_with_ties(p, options.k)) hood.push_back(out.points[nb.index]);
    Vec3 n;
    if (!plane_normal(hood, n, options.max_curvature_ratio)) continue;
    if (n.dot(options.viewpoint - p) < 0.0) n = -n;
    out.normals[i] = n;
    out.normal_valid[i] = 1;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic scenes

std::string to_string(SceneKind kind) {
  switch (kind) {
    case SceneKind::corridor: return "corridor";
    case SceneKind::box_room: return "box_room";
    case SceneKind::multi_room: return "multi_room";
  }
  return "corridor";
}

SceneKind scene_kind_from_string(const std::string& s) {
  if (s == "corridor") return SceneKind::corridor;
  if (s == "box_room") return SceneKind::box_room;
  if (s == "multi_room") return SceneKind::multi_room;
  throw std::invalid_argument("unknown scene kind '" + s + "'");
}

namespace {

bool positive(double v) { return std::isfinite(v) && v > 0.0; }

struct Box {
  Vec3 lo;
  Vec3 hi;

  bool strictly_inside(const Vec3& p, double eps) const {
    return (p.array() > lo.array() + eps).all() && (p.array() < hi.array() - eps).all();
  }
  bool inside_closed(const Vec3& p, double eps) const {
    return (p.array() >= lo.array() - eps).all() && (p.array() <= hi.array() + eps).all();
  }
};

/// Cell-centred samples on the six faces of a box. `inward` flips the
/// normals to point into the box (room walls) instead of out of it (clutter).
template <typename Fn>
void sample_faces(const Box& b, double spacing, bool inward, Fn&& emit) {
  for (int axis = 0; axis < 3; ++axis) {
    const int a1 = (axis + 1) % 3;
    const int a2 = (axis + 2) % 3;
    const double l1 = b.hi[a1] - b.lo[a1];
    const double l2 = b.hi[a2] - b.lo[a2];
    const int n1 = std::max(1, static_cast<int>(std::lround(l1 / spacing)));
    const int n2 = std::max(1, static_cast<int>(std::lround(l2 / spacing)));
    for (int side = 0; side < 2; ++side) {
      Vec3 normal = Vec3::Zero();
      normal[axis] = side == 0 ? -1.0 : 1.0;
      if (inward) normal = -normal;
      for (int i = 0; i < n1; ++i) {
        for (int j = 0; j < n2; ++j) {
          Vec3 p;
          p[axis] = side == 0 ? b.lo[axis] : b.hi[axis];
          p[a1] = b.lo[a1] + (i + 0.5) * l1 / n1;
          p[a2] = b.lo[a2] + (j + 0.5) * l2 / n2;
          emit(p, normal);
        }
      }
    }
  }
}

/// Union-of-rooms surface with solid clutter boxes inside the free space.
PointCloudMap assemble(const std::vector<Box>& rooms, const std::vector<Box>& clutter,
                       double spacing) {
  constexpr double eps = 1e-9;
  PointCloudMap map;
  auto push = [&](const Vec3& p, const Vec3& n) {
    map.points.push_back(p);
    map.normals.push_back(n);
    map.normal_valid.push_back(1);
  };
  for (std::size_t r = 0; r < rooms.size(); ++r) {
    sample_faces(rooms[r], spacing, true, [&](const Vec3& p, const Vec3& n) {
      for (std::size_t o = 0; o < rooms.size(); ++o) {
        if (o == r) continue;
        if (rooms[o].strictly_inside(p, eps)) return;
        // Shared boundaries are emitted once, by the earlier room.
        if (o < r && rooms[o].inside_closed(p, eps)) return;
      }
      for (const auto& c : clutter) {
        if (c.strictly_inside(p, eps)) return;
      }
      push(p, n);
    });
  }
  for (std::size_t c = 0; c < clutter.size(); ++c) {
    sample_faces(clutter[c], spacing, false, [&](const Vec3& p, const Vec3& n) {
      bool in_free_space = false;
      for (const auto& room : rooms) {
        if (room.strictly_inside(p, eps)) {
          in_free_space = true;
          break;
        }
      }
      if (!in_free_space) return;
      for (std::size_t o = 0; o < clutter.size(); ++o) {
        if (o == c) continue;
        if (clutter[o].strictly_inside(p, eps)) return;
        if (o < c && clutter[o].inside_closed(p, eps)) return;
      }
      push(p, n);
    });
  }
  return map;
}

constexpr double kEmbed = 0.05;  // clutter sinks this far into its supporting surface

Vec3 random_size(Rng& rng) {
  // Sequenced draws: argument evaluation order is unspecified.
  const double sx = rng.uniform(0.2, 0.7);
  const double sy = rng.uniform(0.2, 0.7);
  const double sz = rng.uniform(0.2, 0.8);
  return {sx, sy, sz};
}

Box random_clutter_box(Rng& rng, double x_lo, double x_hi, const Box& room, int anchor) {
  const Vec3 size = random_size(rng);
  const double w_lo = room.lo.y();
  const double w_hi = room.hi.y();
  const double h = room.hi.z() - room.lo.z();
  Box b;
  const double x0 = rng.uniform(x_lo, std::max(x_lo, x_hi - size.x()));
  const double y0 = rng.uniform(w_lo, w_hi - size.y());
  const double z0 = room.lo.z() + rng.uniform(0.0, std::max(0.0, h - size.z()));
  b.lo = Vec3(x0, y0, z0);
  b.hi = b.lo + size;
  switch (anchor) {
    case 0:  // against the -y wall
      b.lo.y() = w_lo - kEmbed;
      b.hi.y() = w_lo + size.y();
      break;
    case 1:  // against the +y wall
      b.lo.y() = w_hi - size.y();
      b.hi.y() = w_hi + kEmbed;
      break;
    default:  // standing on the floor
      b.lo.z() = room.lo.z() - kEmbed;
      b.hi.z() = room.lo.z() + size.z();
      break;
  }
  return b;
}

PointCloudMap corridor(const SceneSpec& s, Rng& rng) {
  const Box main{Vec3(0.0, -s.width / 2, 0.0), Vec3(s.length, s.width / 2, s.height)};
  std::vector<Box> rooms{main};
  if (s.branch) {
    // Overlaps the main corridor so the wall across the opening is carved out.
    rooms.push_back({Vec3(s.branch_x - s.branch_width / 2, 0.0, 0.0),
                     Vec3(s.branch_x + s.branch_width / 2, s.width / 2 + s.branch_length,
                          s.height)});
  }
  std::vector<Box> clutter;
  for (int end = 0; end < 2; ++end) {
    for (int i = 0; i < s.end_clutter; ++i) {
      const int anchor = static_cast<int>(rng.next() % 4);
      Box b;
      if (anchor == 3) {
        // Mounted on the end wall.
        const Vec3 size = random_size(rng);
        const double y0 = rng.uniform(-s.width / 2, s.width / 2 - size.y());
        const double z0 = rng.uniform(0.0, std::max(0.0, s.height - size.z()));
        b.lo = Vec3(-kEmbed, y0, z0);
        b.hi = Vec3(size.x(), y0 + size.y(), z0 + size.z());
      } else {
        b = random_clutter_box(rng, 0.1, s.end_zone, main, anchor);
      }
      if (end == 1) {
        const double lo = s.length - b.hi.x();
        const double hi = s.length - b.lo.x();
        b.lo.x() = lo;
        b.hi.x() = hi;
      }
      clutter.push_back(b);
    }
  }
  return assemble(rooms, clutter, s.spacing);
}

PointCloudMap box_rooms(const SceneSpec& s, int count, Rng& rng) {
  std::vector<Box> rooms;
  std::vector<Box> clutter;
  for (int i = 0; i < count; ++i) {
    const Box room{Vec3(i * s.length, -s.width / 2, 0.0),
                   Vec3((i + 1) * s.length, s.width / 2, s.height)};
    rooms.push_back(room);
    for (int c = 0; c < s.room_clutter; ++c) {
      const int anchor = static_cast<int>(rng.next() % 3);
      clutter.push_back(random_clutter_box(rng, room.lo.x() + 0.3, room.hi.x() - 0.3, room, anchor));
    }
  }
  const double door_half = std::min(0.5, s.width / 4);
  const double door_h = std::min(2.0, 0.8 * s.height);
  for (int i = 1; i < count; ++i) {
    rooms.push_back({Vec3(i * s.length - 0.2, -door_half, 0.0),
                     Vec3(i * s.length + 0.2, door_half, door_h)});
  }
  return assemble(rooms, clutter, s.spacing);
}

}  // namespace

void validate(const SceneSpec& s) {
  if (!positive(s.length) || !positive(s.width) || !positive(s.height)) {
    throw std::invalid_argument("scene: dimensions must be positive");
  }
  if (!positive(s.spacing)) throw std::invalid_argument("scene: spacing must be positive");
  if (s.spacing > std::min({s.length, s.width, s.height})) {
    throw std::invalid_argument("scene: spacing larger than the scene");
  }
  if (s.end_clutter < 0 || s.room_clutter < 0) {
    throw std::invalid_argument("scene: clutter counts must be non-negative");
  }
  if (s.kind == SceneKind::corridor) {
    if (!positive(s.end_zone) || s.end_zone > s.length / 2) {
      throw std::invalid_argument("scene: end_zone must be in (0, length/2]");
    }
    if (s.branch) {
      if (!positive(s.branch_width) || !positive(s.branch_length)) {
        throw std::invalid_argument("scene: branch dimensions must be positive");
      }
      if (s.branch_x - s.branch_width / 2 <= 0.0 ||
          s.branch_x + s.branch_width / 2 >= s.length) {
        throw std::invalid_argument("scene: branch must open inside the corridor");
      }
    }
  }
  if (s.kind == SceneKind::multi_room && s.rooms < 1) {
    throw std::invalid_argument("scene: rooms must be >= 1");
  }
}

PointCloudMap generate_synthetic_scene(const SceneSpec& spec) {
  validate(spec);
  Rng rng(spec.seed);
  switch (spec.kind) {
    case SceneKind::corridor: return corridor(spec, rng);
    case SceneKind::box_room: return box_rooms(spec, 1, rng);
    case SceneKind::multi_room: return box_rooms(spec, spec.rooms, rng);
  }
  return {};
}

}  // namespace mlidar
