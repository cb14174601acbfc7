#include "mlidar/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "mlidar/odometry.hpp"
#include "mlidar/sensor_sim.hpp"
#include "mlidar/text.hpp"

namespace mlidar {

SimInputs load_inputs(const SimConfig& cfg) {
  SimInputs in;
  in.map = cfg.use_scene ? generate_synthetic_scene(cfg.scene)
                         : load_map(cfg.map_path, map_format_from_path(cfg.map_path));
  in.trajectory = cfg.use_path ? make_path_trajectory(cfg.path) : load_tum(cfg.trajectory_path);
  validate(in.trajectory);
  return in;
}

RunArtifacts run_simulation(const SimConfig& cfg, const SimInputs& inputs, MotorController& controller) {
  validate(cfg);
  validate(inputs.trajectory);
  const double cr = cfg.capture_radius > 0.0 ? cfg.capture_radius : default_capture_radius(cfg.cast_voxel);
  const RayCaster caster(inputs.map, cfg.cast_voxel, cr);
  const auto dirs = fov_directions(cfg.fov, cfg.fov.resolution_deg);
  const Calibration calib = cfg.calibration.calibration();
  LidarOdometry odo(cfg.odometry, cfg.seed);
  Rng noise_rng(cfg.seed * 0x9E3779B97F4A7C15ull + 1);
  ScanOptions scan_opts;
  scan_opts.range_noise = cfg.range_noise;

  RunArtifacts run;
  run.coverage_voxel = cfg.coverage_voxel;
  const double t0 = inputs.trajectory.start_time();
  double t_end = inputs.trajectory.end_time();
  if (cfg.duration > 0.0) t_end = std::min(t_end, t0 + cfg.duration);
  const auto steps = static_cast<std::size_t>(std::floor((t_end - t0) / cfg.dt + 1e-9));

  double theta = wrap_angle(deg2rad(cfg.initial_theta_deg));
  std::vector<Vec3> base_pts;
  for (std::size_t k = 0; k < steps; ++k) {
    const double t = t0 + static_cast<double>(k) * cfg.dt;
    const Pose base = interpolate_pose(inputs.trajectory, t);
    const Pose l2b = lidar_to_base(calib, theta);
    const Pose sensor = base * l2b;
    const Scan scan = simulate_scan(caster, sensor, dirs, cfg.fov.max_range, t, scan_opts, &noise_rng);

    base_pts.clear();
    TimedCells cov;
    cov.timestamp = t;
    for (std::size_t i = 0; i < scan.points.size(); ++i) {
      if (!scan.hit[i]) continue;
      base_pts.push_back(l2b.apply(scan.points[i]));
      cov.cells.push_back(cell_of(sensor.apply(scan.points[i]), cfg.coverage_voxel));
    }
    std::sort(cov.cells.begin(), cov.cells.end());
    cov.cells.erase(std::unique(cov.cells.begin(), cov.cells.end()), cov.cells.end());

    const auto up = odo.process(base_pts, base);
    run.estimated.samples.push_back({t, up.pose});
    run.ground_truth.samples.push_back({t, base});
    run.coverage.push_back(std::move(cov));
    if (up.degenerate) run.log.push_back(format_double(t) + " odometry: degenerate registration, kept prediction");

    ControlInput ci;
    ci.time = t;
    ci.theta = theta;
    ci.local_map = &odo.state().local_map;
    ci.base_estimate = up.pose;
    ControlOutput co;
    try {
      co = controller.step(ci);
    } catch (const std::exception& e) {
      co = ControlOutput{};
      co.fallback = true;
      co.message = e.what();
    }
    if (!std::isfinite(co.omega)) {
      co.fallback = true;
      co.message = "non-finite speed";
    }
    if (co.fallback) {
      co.omega = cfg.control.omega_pre;
      run.log.push_back(format_double(t) + " controller: fallback to omega_pre (" + co.message + ")");
    }

    StepRecord rec;
    rec.t = t;
    rec.theta = theta;
    rec.omega = co.omega;
    rec.u_min = co.u_min;
    rec.f_initial = co.f_initial;
    rec.f_final = co.f_final;
    rec.iterations = co.iterations;
    rec.fallback = co.fallback;
    rec.degenerate = up.degenerate;
    run.motor.push_back(rec);

    theta = integrate_motor(theta, co.omega, cfg.dt);
  }
  run.final_theta = theta;

  run.report.scene = cfg.name;
  run.report.controller = controller.name();
  if (!run.estimated.samples.empty()) {
    const auto ate = compute_ate(run.estimated, run.ground_truth, cfg.assoc_tol);
    run.report.ate = ate.ate;
    run.report.matches = ate.matches;
    const auto cm = compute_cmplt_cells(run.coverage, cfg.cmplt_period);
    run.report.cmplt = cm.cmplt;
    run.report.voxels_per_period = cm.per_period;
  }
  return run;
}

RunArtifacts run_simulation(const SimConfig& cfg) {
  validate(cfg);
  const SimInputs in = load_inputs(cfg);
  auto ctrl = make_controller(cfg.controller, cfg.control, cfg.prediction, cfg.fov,
                              cfg.calibration.calibration());
  return run_simulation(cfg, in, *ctrl);
}

// ---------------------------------------------------------------------------
// Artifact files

namespace {

std::ofstream open_out(const std::filesystem::path& p) {
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  return out;
}

std::ifstream open_in(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw std::invalid_argument("cannot open " + p.string());
  return in;
}

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

double to_double(std::string_view s, std::size_t line) {
  std::vector<double> v;
  if (!parse_doubles(s, v) || v.size() != 1) throw FormatError("bad number '" + std::string(s) + "'", line);
  return v[0];
}

long long to_int(std::string_view s, std::size_t line) {
  const double d = to_double(s, line);
  if (d != std::floor(d)) throw FormatError("expected an integer", line);
  return static_cast<long long>(d);
}

}  // namespace

void write_motor_csv(const std::vector<StepRecord>& motor, const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "t,theta,omega,u_min,f_initial,f_final,iterations,fallback,degenerate\n";
  for (const auto& r : motor) {
    out << format_double(r.t) << ',' << format_double(r.theta) << ',' << format_double(r.omega) << ','
        << format_double(r.u_min) << ',' << format_double(r.f_initial) << ','
        << format_double(r.f_final) << ',' << r.iterations << ',' << (r.fallback ? 1 : 0) << ','
        << (r.degenerate ? 1 : 0) << '\n';
  }
}

std::vector<StepRecord> read_motor_csv(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::vector<StepRecord> out;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto line = trim(raw);
    if (line.empty() || line.front() == '#' || line.front() == 't') continue;
    const auto f = split_csv(line);
    if (f.size() != 9) throw FormatError("expected 9 fields", line_no);
    StepRecord r;
    r.t = to_double(f[0], line_no);
    r.theta = to_double(f[1], line_no);
    r.omega = to_double(f[2], line_no);
    r.u_min = to_double(f[3], line_no);
    r.f_initial = to_double(f[4], line_no);
    r.f_final = to_double(f[5], line_no);
    r.iterations = static_cast<int>(to_int(f[6], line_no));
    r.fallback = to_int(f[7], line_no) != 0;
    r.degenerate = to_int(f[8], line_no) != 0;
    out.push_back(r);
  }
  return out;
}

void write_coverage_csv(const std::vector<TimedCells>& coverage, double voxel,
                        const std::filesystem::path& path) {
  auto out = open_out(path);
  out << "# voxel " << format_double(voxel) << "\n";
  out << "t,ix,iy,iz\n";
  for (const auto& s : coverage) {
    if (s.cells.empty()) {
      out << format_double(s.timestamp) << ",,,\n";
      continue;
    }
    const auto t = format_double(s.timestamp);
    for (const auto& c : s.cells) out << t << ',' << c.x << ',' << c.y << ',' << c.z << '\n';
  }
}

std::vector<TimedCells> read_coverage_csv(const std::filesystem::path& path, double* voxel) {
  auto in = open_in(path);
  std::vector<TimedCells> out;
  std::string raw;
  std::size_t line_no = 0;
  bool have_voxel = false;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto line = trim(raw);
    if (line.empty()) continue;
    if (line.front() == '#') {
      std::istringstream ss{std::string(line.substr(1))};
      std::string word;
      double v = 0.0;
      if (ss >> word >> v && word == "voxel") {
        have_voxel = true;
        if (voxel) *voxel = v;
      }
      continue;
    }
    if (line.front() == 't') continue;
    const auto f = split_csv(line);
    if (f.size() != 4) throw FormatError("expected 4 fields", line_no);
    const double t = to_double(f[0], line_no);
    if (out.empty() || out.back().timestamp != t) {
      if (!out.empty() && !(t > out.back().timestamp)) throw FormatError("timestamps must increase", line_no);
      out.push_back({t, {}});
    }
    if (f[1].empty() && f[2].empty() && f[3].empty()) continue;
    out.back().cells.push_back({static_cast<std::int32_t>(to_int(f[1], line_no)),
                                static_cast<std::int32_t>(to_int(f[2], line_no)),
                                static_cast<std::int32_t>(to_int(f[3], line_no))});
  }
  if (!have_voxel && voxel) *voxel = 0.5;
  return out;
}

void write_artifacts(const RunArtifacts& run, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  save_tum(run.estimated, dir / "estimated.tum");
  save_tum(run.ground_truth, dir / "ground_truth.tum");
  write_motor_csv(run.motor, dir / "motor.csv");
  write_coverage_csv(run.coverage, run.coverage_voxel, dir / "coverage.csv");
  {
    auto out = open_out(dir / "log.txt");
    out << "# final_theta " << format_double(run.final_theta) << "\n";
    for (const auto& l : run.log) out << l << '\n';
  }
  {
    auto out = open_out(dir / "report.json");
    out << run.report.to_json();
  }
  {
    auto out = open_out(dir / "summary.csv");
    out << EvalReport::csv_header() << '\n' << run.report.csv_row() << '\n';
  }
}

RunArtifacts read_artifacts(const std::filesystem::path& dir) {
  RunArtifacts run;
  run.estimated = load_tum(dir / "estimated.tum");
  run.ground_truth = load_tum(dir / "ground_truth.tum");
  run.motor = read_motor_csv(dir / "motor.csv");
  run.coverage = read_coverage_csv(dir / "coverage.csv", &run.coverage_voxel);
  auto in = open_in(dir / "log.txt");
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("# final_theta ", 0) == 0) {
      run.final_theta = to_double(line.substr(14), 1);
      continue;
    }
    run.log.push_back(line);
  }
  std::ifstream rj(dir / "report.json");
  std::stringstream ss;
  ss << rj.rdbuf();
  run.report = EvalReport::from_json(ss.str());
  return run;
}

}  // namespace mlidar
