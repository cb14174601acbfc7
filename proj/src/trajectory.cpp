#include <algorithm>
#include <fstream>
#include <ostream>

#include "mlidar/scene.hpp"
#include "mlidar/text.hpp"

namespace mlidar {

void validate(const Trajectory& traj) {
  if (traj.samples.size() < 2) {
    throw std::invalid_argument("trajectory: at least two samples required");
  }
  for (std::size_t i = 0; i < traj.samples.size(); ++i) {
    const auto& s = traj.samples[i];
    if (!std::isfinite(s.timestamp) || !s.pose.translation.allFinite() ||
        !is_rotation(s.pose.rotation, 1e-6)) {
      throw std::invalid_argument("trajectory: invalid sample " + std::to_string(i));
    }
    if (i > 0 && !(s.timestamp > traj.samples[i - 1].timestamp)) {
      throw std::invalid_argument("trajectory: timestamps must be strictly increasing (sample " +
                                  std::to_string(i) + ")");
    }
  }
}

Trajectory load_tum(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("load_tum: cannot open " + path.string());
  Trajectory traj;
  std::string raw;
  std::vector<double> v;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto line = trim(raw);
    if (line.empty() || line.front() == '#') continue;
    if (!parse_doubles(line, v)) throw FormatError("unparseable number", line_no);
    if (v.size() != 8) throw FormatError("expected 8 columns (t tx ty tz qx qy qz qw)", line_no);
    for (double x : v) {
      if (!std::isfinite(x)) throw FormatError("non-finite value", line_no);
    }
    TimedPose tp;
    tp.timestamp = v[0];
    tp.pose.translation = Vec3(v[1], v[2], v[3]);
    try {
      tp.pose.rotation = rotation_from_quaternion(v[4], v[5], v[6], v[7]);
    } catch (const std::invalid_argument&) {
      throw FormatError("zero quaternion", line_no);
    }
    if (!traj.samples.empty() && !(tp.timestamp > traj.samples.back().timestamp)) {
      throw FormatError("timestamps must be strictly increasing", line_no);
    }
    traj.samples.push_back(tp);
  }
  if (traj.samples.empty()) throw std::invalid_argument("load_tum: no poses in " + path.string());
  return traj;
}

void write_tum(const Trajectory& traj, std::ostream& out) {
  out << "# timestamp tx ty tz qx qy qz qw\n";
  for (const auto& s : traj.samples) {
    const auto q = quaternion_from_rotation(s.pose.rotation);
    const Vec3& t = s.pose.translation;
    out << format_double(s.timestamp) << ' ' << format_double(t.x()) << ' '
        << format_double(t.y()) << ' ' << format_double(t.z()) << ' ' << format_double(q.x())
        << ' ' << format_double(q.y()) << ' ' << format_double(q.z()) << ' '
        << format_double(q.w()) << '\n';
  }
}

void save_tum(const Trajectory& traj, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_tum: cannot write " + path.string());
  write_tum(traj, out);
}

Pose interpolate_pose(const Trajectory& traj, double t) {
  if (traj.samples.empty() || !(t >= traj.start_time()) || !(t <= traj.end_time())) {
    throw std::out_of_range("interpolate_pose: t outside trajectory");
  }
  const auto& s = traj.samples;
  auto it = std::lower_bound(s.begin(), s.end(), t,
                             [](const TimedPose& a, double v) { return a.timestamp < v; });
  if (it->timestamp == t) return it->pose;
  const TimedPose& b = *it;
  const TimedPose& a = *(it - 1);
  const double f = (t - a.timestamp) / (b.timestamp - a.timestamp);
  Pose out;
  out.translation = (1.0 - f) * a.pose.translation + f * b.pose.translation;
  const Eigen::Quaterniond qa(a.pose.rotation);
  const Eigen::Quaterniond qb(b.pose.rotation);
  out.rotation = qa.slerp(f, qb).normalized().toRotationMatrix();
  return out;
}

// ---------------------------------------------------------------------------
// Parametric walks

namespace {

using Vec2 = Eigen::Vector2d;

struct Segment {
  bool arc = false;
  Vec2 start;
  double heading = 0.0;  // at segment start
  double length = 0.0;
  // arcs only
  Vec2 center;
  double radius = 0.0;
  double turn = 0.0;  // +1 left, -1 right
};

double heading_of(const Vec2& d) { return std::atan2(d.y(), d.x()); }

std::vector<Segment> build_path(const PathSpec& spec) {
  const auto& w = spec.waypoints;
  std::vector<Segment> segs;
  Vec2 cursor = w.front();
  for (std::size_t i = 1; i < w.size(); ++i) {
    const Vec2 d_in = (w[i] - w[i - 1]).normalized();
    Vec2 line_end = w[i];
    double tangent_len = 0.0;
    double phi = 0.0;
    Vec2 d_out = d_in;
    if (i + 1 < w.size()) {
      d_out = (w[i + 1] - w[i]).normalized();
      phi = std::acos(std::clamp(d_in.dot(d_out), -1.0, 1.0));
      if (phi > 1e-9) {
        const double max_t = 0.5 * std::min((w[i] - w[i - 1]).norm(), (w[i + 1] - w[i]).norm());
        tangent_len = std::min(spec.turn_radius * std::tan(phi / 2), max_t);
        line_end = w[i] - tangent_len * d_in;
      }
    }
    Segment line;
    line.start = cursor;
    line.heading = heading_of(d_in);
    line.length = (line_end - cursor).norm();
    if (line.length > 0.0) segs.push_back(line);
    cursor = line_end;
    if (tangent_len > 0.0) {
      const double radius = tangent_len / std::tan(phi / 2);
      const double cross = d_in.x() * d_out.y() - d_in.y() * d_out.x();
      const double turn = cross >= 0.0 ? 1.0 : -1.0;
      const Vec2 left(-d_in.y(), d_in.x());
      Segment arc;
      arc.arc = true;
      arc.start = cursor;
      arc.heading = heading_of(d_in);
      arc.radius = radius;
      arc.turn = turn;
      arc.center = cursor + turn * radius * left;
      arc.length = radius * phi;
      segs.push_back(arc);
      cursor = w[i] + tangent_len * d_out;
    }
  }
  return segs;
}

void eval_path(const std::vector<Segment>& segs, double s, Vec2& pos, double& heading) {
  for (std::size_t k = 0; k < segs.size(); ++k) {
    const Segment& g = segs[k];
    if (s > g.length && k + 1 < segs.size()) {
      s -= g.length;
      continue;
    }
    s = std::clamp(s, 0.0, g.length);
    if (!g.arc) {
      heading = g.heading;
      pos = g.start + s * Vec2(std::cos(g.heading), std::sin(g.heading));
    } else {
      const double a = s / g.radius;
      heading = g.heading + g.turn * a;
      const Vec2 from_center = g.start - g.center;
      const double c = std::cos(g.turn * a);
      const double sn = std::sin(g.turn * a);
      pos = g.center + Vec2(c * from_center.x() - sn * from_center.y(),
                            sn * from_center.x() + c * from_center.y());
    }
    return;
  }
}

}  // namespace

Trajectory make_path_trajectory(const PathSpec& spec) {
  if (spec.waypoints.size() < 2) throw std::invalid_argument("path: need >= 2 waypoints");
  if (!(spec.speed > 0.0) || !(spec.sample_dt > 0.0) || !(spec.turn_radius > 0.0)) {
    throw std::invalid_argument("path: speed, sample_dt and turn_radius must be positive");
  }
  if (!(spec.speed_modulation >= 0.0 && spec.speed_modulation < 1.0)) {
    throw std::invalid_argument("path: speed_modulation must be in [0, 1)");
  }
  if (!(spec.modulation_period > 0.0)) {
    throw std::invalid_argument("path: modulation_period must be positive");
  }
  for (std::size_t i = 1; i < spec.waypoints.size(); ++i) {
    if ((spec.waypoints[i] - spec.waypoints[i - 1]).norm() < 1e-9) {
      throw std::invalid_argument("path: repeated waypoint");
    }
  }
  const auto segs = build_path(spec);
  double total = 0.0;
  for (const auto& g : segs) total += g.length;

  const double v = spec.speed;
  const double a = spec.speed_modulation;
  const double period = spec.modulation_period;
  const double w = kTwoPi / period;
  auto arc_length = [&](double t) { return v * t + v * a / w * (1.0 - std::cos(w * t)); };
  // s(t) is strictly increasing; bisection for the time the walk ends.
  double lo = 0.0;
  double hi = total / (v * (1.0 - a)) + period;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (arc_length(mid) < total ? lo : hi) = mid;
  }
  const double t_end = hi;

  Trajectory traj;
  const auto n = static_cast<std::size_t>(std::floor(t_end / spec.sample_dt)) + 1;
  for (std::size_t i = 0; i <= n; ++i) {
    const double t = std::min(static_cast<double>(i) * spec.sample_dt, t_end);
    if (!traj.samples.empty() && t <= traj.samples.back().timestamp) break;
    Vec2 pos;
    double heading = 0.0;
    eval_path(segs, std::min(arc_length(t), total), pos, heading);
    TimedPose tp;
    tp.timestamp = t;
    tp.pose.rotation = rotation_z(heading);
    tp.pose.translation = Vec3(pos.x(), pos.y(), spec.height);
    traj.samples.push_back(tp);
  }
  return traj;
}

}  // namespace mlidar
