#include "mlidar/evaluation.hpp"

#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <limits>
#include <unordered_set>

#include "mlidar/text.hpp"

namespace mlidar {

AteResult compute_ate(const Trajectory& est, const Trajectory& gt, double assoc_tol, bool align) {
  if (!(assoc_tol >= 0.0)) throw std::invalid_argument("compute_ate: negative tolerance");
  std::vector<Vec3> e;
  std::vector<Vec3> g;
  const auto& gs = gt.samples;
  for (const auto& s : est.samples) {
    auto it = std::lower_bound(gs.begin(), gs.end(), s.timestamp,
                               [](const TimedPose& a, double t) { return a.timestamp < t; });
    const TimedPose* best = nullptr;
    double best_dt = std::numeric_limits<double>::infinity();
    if (it != gs.begin()) {
      best = &*(it - 1);
      best_dt = s.timestamp - best->timestamp;
    }
    if (it != gs.end() && it->timestamp - s.timestamp < best_dt) {
      best = &*it;
      best_dt = it->timestamp - s.timestamp;
    }
    if (best_dt > assoc_tol) best = nullptr;
    if (best == nullptr) continue;
    e.push_back(s.pose.translation);
    g.push_back(best->pose.translation);
  }
  if (e.empty()) throw AssociationError("compute_ate: no timestamps associate within tolerance");

  AteResult out;
  out.matches = e.size();
  if (align && e.size() >= 3) {
    Eigen::Matrix3Xd src(3, e.size());
    Eigen::Matrix3Xd dst(3, g.size());
    for (std::size_t i = 0; i < e.size(); ++i) {
      src.col(static_cast<Eigen::Index>(i)) = e[i];
      dst.col(static_cast<Eigen::Index>(i)) = g[i];
    }
    const Eigen::Matrix4d t = Eigen::umeyama(src, dst, false);
    for (auto& p : e) p = t.topLeftCorner<3, 3>() * p + t.topRightCorner<3, 1>();
    out.aligned = true;
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < e.size(); ++i) sum += (e[i] - g[i]).squaredNorm();
  out.ate = std::sqrt(sum / static_cast<double>(e.size()));
  return out;
}

CmpltResult compute_cmplt_cells(std::span<const TimedCells> scans, double period) {
  if (scans.empty()) throw std::invalid_argument("compute_cmplt: no scans, zero periods");
  if (!(period > 0.0)) throw std::invalid_argument("compute_cmplt: period must be positive");
  double t0 = scans.front().timestamp;
  double t1 = t0;
  for (const auto& s : scans) {
    if (!std::isfinite(s.timestamp)) throw std::invalid_argument("compute_cmplt: non-finite timestamp");
    t0 = std::min(t0, s.timestamp);
    t1 = std::max(t1, s.timestamp);
  }
  const auto n_periods = static_cast<std::size_t>(std::floor((t1 - t0) / period)) + 1;
  std::vector<std::unordered_set<CellKey, CellKeyHash>> windows(n_periods);
  for (const auto& s : scans) {
    const auto q = std::min(n_periods - 1, static_cast<std::size_t>(std::floor((s.timestamp - t0) / period)));
    windows[q].insert(s.cells.begin(), s.cells.end());
  }
  CmpltResult out;
  double sum = 0.0;
  for (const auto& w : windows) {
    out.per_period.push_back(w.size());
    sum += static_cast<double>(w.size());
  }
  out.cmplt = sum / static_cast<double>(n_periods);
  return out;
}

CmpltResult compute_cmplt(std::span<const TimedPoints> scans, double voxel, double period) {
  if (!(voxel > 0.0)) throw std::invalid_argument("compute_cmplt: voxel must be positive");
  std::vector<TimedCells> cells;
  cells.reserve(scans.size());
  for (const auto& s : scans) {
    TimedCells c;
    c.timestamp = s.timestamp;
    c.cells.reserve(s.points.size());
    for (const auto& p : s.points) c.cells.push_back(cell_of(p, voxel));
    cells.push_back(std::move(c));
  }
  return compute_cmplt_cells(cells, period);
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["scene"] = scene;
  j["controller"] = controller;
  j[aligned ? "aligned_ate" : "ate"] = ate;
  j["matches"] = matches;
  j["cmplt"] = cmplt;
  j["periods"] = periods();
  j["voxels_per_period"] = voxels_per_period;
  return j.dump(2) + "\n";
}

EvalReport EvalReport::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  EvalReport r;
  r.scene = j.value("scene", "");
  r.controller = j.value("controller", "");
  if (j.contains("aligned_ate")) {
    r.aligned = true;
    r.ate = j.at("aligned_ate").get<double>();
  } else {
    r.ate = j.at("ate").get<double>();
  }
  r.matches = j.at("matches").get<std::size_t>();
  r.cmplt = j.at("cmplt").get<double>();
  r.voxels_per_period = j.at("voxels_per_period").get<std::vector<std::size_t>>();
  return r;
}

std::string EvalReport::csv_header() { return "scene,controller,ate,cmplt"; }

std::string EvalReport::csv_row() const {
  return scene + "," + controller + "," + format_double(ate) + "," + format_double(cmplt);
}

}  // namespace mlidar
