#include "mlidar/config.hpp"

#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

namespace mlidar {

using nlohmann::json;
using ordered = nlohmann::ordered_json;

Calibration CalibrationSpec::calibration() const {
  Calibration c;
  c.rotation = rotation_from_rpy(deg2rad(rpy_deg.x()), deg2rad(rpy_deg.y()), deg2rad(rpy_deg.z()));
  c.translation = translation;
  return c;
}

namespace {

/// Typed access to one JSON object with key-path error messages.
class Node {
 public:
  Node(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) const { return j_.contains(key); }
  Node child(const std::string& key) const { return Node(j_.at(key), at(key)); }

  void only(std::initializer_list<const char*> keys) const {
    const std::set<std::string> allowed(keys.begin(), keys.end());
    for (const auto& [k, v] : j_.items()) {
      if (!allowed.count(k)) throw ConfigError(at(k), "unknown key");
    }
  }

  void get(const std::string& key, double& out) const {
    if (!has(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_number()) throw ConfigError(at(key), "expected a number");
    out = v.get<double>();
  }
  void get(const std::string& key, int& out) const {
    if (!has(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_number_integer()) throw ConfigError(at(key), "expected an integer");
    out = v.get<int>();
  }
  void get(const std::string& key, std::size_t& out) const {
    if (!has(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_number_unsigned()) throw ConfigError(at(key), "expected a non-negative integer");
    out = v.get<std::size_t>();
  }
  void get(const std::string& key, std::uint64_t& out, int) const {
    if (!has(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_number_unsigned()) throw ConfigError(at(key), "expected a non-negative integer");
    out = v.get<std::uint64_t>();
  }
  void get(const std::string& key, bool& out) const {
    if (!has(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_boolean()) throw ConfigError(at(key), "expected true or false");
    out = v.get<bool>();
  }
  void get(const std::string& key, std::string& out) const {
    if (!has(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_string()) throw ConfigError(at(key), "expected a string");
    out = v.get<std::string>();
  }
  void get(const std::string& key, Vec3& out) const {
    if (!has(key)) return;
    const auto& v = j_.at(key);
    if (!v.is_array() || v.size() != 3) throw ConfigError(at(key), "expected [x, y, z]");
    for (int i = 0; i < 3; ++i) {
      if (!v[i].is_number()) throw ConfigError(at(key), "expected [x, y, z]");
      out[i] = v[i].get<double>();
    }
  }

 private:
  const json& j_;
  std::string path_;
};

std::string resolve(const std::string& p, const std::filesystem::path& base) {
  if (p.empty()) return p;
  std::filesystem::path fp(p);
  if (fp.is_relative() && !base.empty()) fp = base / fp;
  return fp.lexically_normal().string();
}

void read_scene(const Node& n, SceneSpec& s) {
  n.only({"kind", "length", "width", "height", "spacing", "end_clutter", "end_zone", "room_clutter",
          "branch", "branch_x", "branch_width", "branch_length", "rooms", "seed"});
  if (n.has("kind")) {
    std::string k;
    n.get("kind", k);
    try {
      s.kind = scene_kind_from_string(k);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(n.at("kind"), e.what());
    }
  }
  n.get("length", s.length);
  n.get("width", s.width);
  n.get("height", s.height);
  n.get("spacing", s.spacing);
  n.get("end_clutter", s.end_clutter);
  n.get("end_zone", s.end_zone);
  n.get("room_clutter", s.room_clutter);
  n.get("branch", s.branch);
  n.get("branch_x", s.branch_x);
  n.get("branch_width", s.branch_width);
  n.get("branch_length", s.branch_length);
  n.get("rooms", s.rooms);
  n.get("seed", s.seed, 0);
}

ordered scene_json(const SceneSpec& s) {
  ordered j;
  j["kind"] = to_string(s.kind);
  j["length"] = s.length;
  j["width"] = s.width;
  j["height"] = s.height;
  j["spacing"] = s.spacing;
  j["end_clutter"] = s.end_clutter;
  j["end_zone"] = s.end_zone;
  j["room_clutter"] = s.room_clutter;
  j["branch"] = s.branch;
  j["branch_x"] = s.branch_x;
  j["branch_width"] = s.branch_width;
  j["branch_length"] = s.branch_length;
  j["rooms"] = s.rooms;
  j["seed"] = s.seed;
  return j;
}

void read_path(const Node& n, const json& raw, PathSpec& p) {
  n.only({"path", "waypoints", "height", "speed", "speed_modulation", "modulation_period",
          "turn_radius", "sample_dt"});
  if (n.has("waypoints")) {
    const auto& w = raw.at("waypoints");
    if (!w.is_array()) throw ConfigError(n.at("waypoints"), "expected a list of [x, y]");
    p.waypoints.clear();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const auto& e = w[i];
      if (!e.is_array() || e.size() != 2 || !e[0].is_number() || !e[1].is_number()) {
        throw ConfigError(n.at("waypoints") + "[" + std::to_string(i) + "]", "expected [x, y]");
      }
      p.waypoints.emplace_back(e[0].get<double>(), e[1].get<double>());
    }
  }
  n.get("height", p.height);
  n.get("speed", p.speed);
  n.get("speed_modulation", p.speed_modulation);
  n.get("modulation_period", p.modulation_period);
  n.get("turn_radius", p.turn_radius);
  n.get("sample_dt", p.sample_dt);
}

ordered path_json(const PathSpec& p) {
  ordered j;
  ordered w = ordered::array();
  for (const auto& v : p.waypoints) w.push_back({v.x(), v.y()});
  j["waypoints"] = w;
  j["height"] = p.height;
  j["speed"] = p.speed;
  j["speed_modulation"] = p.speed_modulation;
  j["modulation_period"] = p.modulation_period;
  j["turn_radius"] = p.turn_radius;
  j["sample_dt"] = p.sample_dt;
  return j;
}

template <typename Fn>
void guarded(const std::string& field, Fn&& fn) {
  try {
    fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(field, e.what());
  }
}

}  // namespace

SimConfig parse_config(const std::string& text, const std::filesystem::path& base_dir) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("<root>", std::string("malformed JSON: ") + e.what());
  }
  SimConfig c;
  const Node r(root, "");
  r.only({"name", "map", "trajectory", "sensor", "controller", "prediction", "odometry",
          "simulation", "output_dir"});
  r.get("name", c.name);
  r.get("output_dir", c.output_dir);
  c.output_dir = resolve(c.output_dir, base_dir);

  if (r.has("map")) {
    const Node m = r.child("map");
    m.only({"path", "scene"});
    if (m.has("path") == m.has("scene")) throw ConfigError("map", "give exactly one of 'path' or 'scene'");
    if (m.has("path")) {
      c.use_scene = false;
      m.get("path", c.map_path);
      c.map_path = resolve(c.map_path, base_dir);
    } else {
      c.use_scene = true;
      read_scene(m.child("scene"), c.scene);
    }
  }

  if (r.has("trajectory")) {
    const Node t = r.child("trajectory");
    if (t.has("path")) {
      t.only({"path"});
      c.use_path = false;
      t.get("path", c.trajectory_path);
      c.trajectory_path = resolve(c.trajectory_path, base_dir);
    } else {
      c.use_path = true;
      read_path(t, root.at("trajectory"), c.path);
    }
  }

  if (r.has("sensor")) {
    const Node s = r.child("sensor");
    s.only({"preset", "horizontal_deg", "vertical_deg", "resolution_deg", "max_range", "scan_rate_hz",
            "calibration", "range_noise"});
    if (s.has("preset")) {
      std::string preset;
      s.get("preset", preset);
      guarded(s.at("preset"), [&] { c.fov = fov_preset(preset); });
    }
    s.get("horizontal_deg", c.fov.horizontal_deg);
    s.get("vertical_deg", c.fov.vertical_deg);
    s.get("resolution_deg", c.fov.resolution_deg);
    s.get("max_range", c.fov.max_range);
    s.get("scan_rate_hz", c.fov.scan_rate_hz);
    s.get("range_noise", c.range_noise);
    if (s.has("calibration")) {
      const Node cal = s.child("calibration");
      cal.only({"rpy_deg", "translation"});
      cal.get("rpy_deg", c.calibration.rpy_deg);
      cal.get("translation", c.calibration.translation);
    }
  }

  if (r.has("controller")) {
    const Node k = r.child("controller");
    k.only({"kind", "alpha", "beta", "omega_pre", "horizon", "dt", "omega_min", "omega_max",
            "max_iterations", "tolerance", "initial_step", "multi_start"});
    if (k.has("kind")) {
      std::string kind;
      k.get("kind", kind);
      guarded(k.at("kind"), [&] { c.controller = controller_kind_from_string(kind); });
    }
    auto& cc = c.control;
    k.get("alpha", cc.alpha);
    k.get("beta", cc.beta);
    k.get("omega_pre", cc.omega_pre);
    k.get("horizon", cc.horizon);
    k.get("dt", cc.dt);
    k.get("omega_min", cc.omega_min);
    k.get("omega_max", cc.omega_max);
    k.get("max_iterations", cc.max_iterations);
    k.get("tolerance", cc.tolerance);
    k.get("initial_step", cc.initial_step);
    k.get("multi_start", cc.multi_start);
  }

  if (r.has("prediction")) {
    const Node p = r.child("prediction");
    p.only({"pano_width", "pano_height", "splat_radius", "delta_deg", "sample_step_deg", "eps_reg"});
    auto& pc = c.prediction;
    p.get("pano_width", pc.pano_width);
    p.get("pano_height", pc.pano_height);
    p.get("splat_radius", pc.splat_radius);
    p.get("delta_deg", pc.delta_deg);
    p.get("sample_step_deg", pc.sample_step_deg);
    p.get("eps_reg", pc.eps_reg);
  }

  if (r.has("odometry")) {
    const Node o = r.child("odometry");
    o.only({"mode", "sigma_t", "sigma_r", "d_max", "r_local", "map_voxel", "normal_k",
            "max_curvature_ratio", "scan_voxel", "max_iterations", "convergence", "min_points",
            "min_correspondences"});
    auto& oc = c.odometry;
    if (o.has("mode")) {
      std::string mode;
      o.get("mode", mode);
      guarded(o.at("mode"), [&] { oc.mode = odometry_mode_from_string(mode); });
    }
    o.get("sigma_t", oc.sigma_t);
    o.get("sigma_r", oc.sigma_r);
    o.get("d_max", oc.d_max);
    o.get("r_local", oc.r_local);
    o.get("map_voxel", oc.map_voxel);
    o.get("normal_k", oc.normal_k);
    o.get("max_curvature_ratio", oc.max_curvature_ratio);
    o.get("scan_voxel", oc.scan_voxel);
    o.get("max_iterations", oc.max_iterations);
    o.get("convergence", oc.convergence);
    o.get("min_points", oc.min_points);
    o.get("min_correspondences", oc.min_correspondences);
  }

  if (r.has("simulation")) {
    const Node s = r.child("simulation");
    s.only({"dt", "initial_theta_deg", "duration", "seed", "cast_voxel", "capture_radius",
            "coverage_voxel", "cmplt_period", "assoc_tol"});
    s.get("dt", c.dt);
    s.get("initial_theta_deg", c.initial_theta_deg);
    s.get("duration", c.duration);
    s.get("seed", c.seed, 0);
    s.get("cast_voxel", c.cast_voxel);
    s.get("capture_radius", c.capture_radius);
    s.get("coverage_voxel", c.coverage_voxel);
    s.get("cmplt_period", c.cmplt_period);
    s.get("assoc_tol", c.assoc_tol);
  }
  return c;
}

SimConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("<file>", "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.parent_path());
}

std::string serialize_config(const SimConfig& c) {
  ordered j;
  j["name"] = c.name;
  if (c.use_scene) {
    j["map"]["scene"] = scene_json(c.scene);
  } else {
    j["map"]["path"] = c.map_path;
  }
  if (c.use_path) {
    j["trajectory"] = path_json(c.path);
  } else {
    j["trajectory"]["path"] = c.trajectory_path;
  }
  ordered s;
  s["preset"] = c.fov.name;
  s["horizontal_deg"] = c.fov.horizontal_deg;
  s["vertical_deg"] = c.fov.vertical_deg;
  s["resolution_deg"] = c.fov.resolution_deg;
  s["max_range"] = c.fov.max_range;
  s["scan_rate_hz"] = c.fov.scan_rate_hz;
  s["range_noise"] = c.range_noise;
  const auto& cal = c.calibration;
  s["calibration"]["rpy_deg"] = {cal.rpy_deg.x(), cal.rpy_deg.y(), cal.rpy_deg.z()};
  s["calibration"]["translation"] = {cal.translation.x(), cal.translation.y(), cal.translation.z()};
  j["sensor"] = s;

  const auto& cc = c.control;
  ordered k;
  k["kind"] = to_string(c.controller);
  k["alpha"] = cc.alpha;
  k["beta"] = cc.beta;
  k["omega_pre"] = cc.omega_pre;
  k["horizon"] = cc.horizon;
  k["dt"] = cc.dt;
  k["omega_min"] = cc.omega_min;
  k["omega_max"] = cc.omega_max;
  k["max_iterations"] = cc.max_iterations;
  k["tolerance"] = cc.tolerance;
  k["initial_step"] = cc.initial_step;
  k["multi_start"] = cc.multi_start;
  j["controller"] = k;

  const auto& pc = c.prediction;
  ordered p;
  p["pano_width"] = pc.pano_width;
  p["pano_height"] = pc.pano_height;
  p["splat_radius"] = pc.splat_radius;
  p["delta_deg"] = pc.delta_deg;
  p["sample_step_deg"] = pc.sample_step_deg;
  p["eps_reg"] = pc.eps_reg;
  j["prediction"] = p;

  const auto& oc = c.odometry;
  ordered o;
  o["mode"] = to_string(oc.mode);
  o["sigma_t"] = oc.sigma_t;
  o["sigma_r"] = oc.sigma_r;
  o["d_max"] = oc.d_max;
  o["r_local"] = oc.r_local;
  o["map_voxel"] = oc.map_voxel;
  o["normal_k"] = oc.normal_k;
  o["max_curvature_ratio"] = oc.max_curvature_ratio;
  o["scan_voxel"] = oc.scan_voxel;
  o["max_iterations"] = oc.max_iterations;
  o["convergence"] = oc.convergence;
  o["min_points"] = oc.min_points;
  o["min_correspondences"] = oc.min_correspondences;
  j["odometry"] = o;

  ordered m;
  m["dt"] = c.dt;
  m["initial_theta_deg"] = c.initial_theta_deg;
  m["duration"] = c.duration;
  m["seed"] = c.seed;
  m["cast_voxel"] = c.cast_voxel;
  m["capture_radius"] = c.capture_radius;
  m["coverage_voxel"] = c.coverage_voxel;
  m["cmplt_period"] = c.cmplt_period;
  m["assoc_tol"] = c.assoc_tol;
  j["simulation"] = m;
  j["output_dir"] = c.output_dir;
  return j.dump(2) + "\n";
}

void validate(const SimConfig& c) {
  if (c.use_scene) {
    guarded("map.scene", [&] { validate(c.scene); });
  } else {
    if (c.map_path.empty()) throw ConfigError("map.path", "empty path");
    if (!std::filesystem::is_regular_file(c.map_path)) {
      throw ConfigError("map.path", "file not found: " + c.map_path);
    }
  }
  if (c.use_path) {
    if (c.path.waypoints.size() < 2) throw ConfigError("trajectory.waypoints", "need at least two waypoints");
    if (!(c.path.speed > 0.0)) throw ConfigError("trajectory.speed", "must be positive");
    if (!(c.path.sample_dt > 0.0)) throw ConfigError("trajectory.sample_dt", "must be positive");
    if (!(c.path.turn_radius > 0.0)) throw ConfigError("trajectory.turn_radius", "must be positive");
    if (!(c.path.speed_modulation >= 0.0 && c.path.speed_modulation < 1.0)) {
      throw ConfigError("trajectory.speed_modulation", "must be in [0, 1)");
    }
    if (!(c.path.modulation_period > 0.0)) throw ConfigError("trajectory.modulation_period", "must be positive");
  } else {
    if (c.trajectory_path.empty()) throw ConfigError("trajectory.path", "empty path");
    if (!std::filesystem::is_regular_file(c.trajectory_path)) {
      throw ConfigError("trajectory.path", "file not found: " + c.trajectory_path);
    }
  }
  guarded("sensor", [&] { validate(c.fov); });
  if (!(c.range_noise >= 0.0)) throw ConfigError("sensor.range_noise", "must be >= 0");
  if (!c.calibration.rpy_deg.allFinite() || !c.calibration.translation.allFinite()) {
    throw ConfigError("sensor.calibration", "non-finite value");
  }
  guarded("controller", [&] { validate(c.control); });
  guarded("prediction", [&] { validate(c.prediction); });
  guarded("odometry", [&] { validate(c.odometry); });
  if (!(c.dt > 0.0)) throw ConfigError("simulation.dt", "must be positive");
  if (std::abs(c.dt - c.control.dt) > 1e-12) {
    throw ConfigError("controller.dt", "must equal simulation.dt");
  }
  if (!std::isfinite(c.initial_theta_deg)) throw ConfigError("simulation.initial_theta_deg", "must be finite");
  if (!(c.duration >= 0.0)) throw ConfigError("simulation.duration", "must be >= 0");
  if (!(c.cast_voxel > 0.0)) throw ConfigError("simulation.cast_voxel", "must be positive");
  if (!(c.capture_radius >= 0.0) || c.capture_radius > c.cast_voxel) {
    throw ConfigError("simulation.capture_radius", "must be in [0, cast_voxel]");
  }
  if (!(c.coverage_voxel > 0.0)) throw ConfigError("simulation.coverage_voxel", "must be positive");
  if (!(c.cmplt_period > 0.0)) throw ConfigError("simulation.cmplt_period", "must be positive");
  if (!(c.assoc_tol >= 0.0)) throw ConfigError("simulation.assoc_tol", "must be >= 0");
  if (c.output_dir.empty()) throw ConfigError("output_dir", "empty path");
}

}  // namespace mlidar
