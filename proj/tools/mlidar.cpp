#include <CLI11.hpp>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "mlidar/config.hpp"
#include "mlidar/controller.hpp"
#include "mlidar/evaluation.hpp"
#include "mlidar/scene.hpp"
#include "mlidar/simulation.hpp"
#include "mlidar/text.hpp"
#include "mlidar/uncertainty.hpp"

namespace fs = std::filesystem;
using namespace mlidar;

namespace {

constexpr int kOk = 0;
constexpr int kValidation = 1;
constexpr int kRuntime = 2;

void write_pgm(const DepthPano& pano, const fs::path& path) {
  double max_depth = 0.0;
  for (std::size_t i = 0; i < pano.depth.size(); ++i) {
    if (pano.point_index[i] >= 0) max_depth = std::max(max_depth, pano.depth[i]);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P5\n" << pano.width << ' ' << pano.height << "\n255\n";
  // Top row is the zenith; near surfaces are bright, holes black.
  for (int v = pano.height - 1; v >= 0; --v) {
    for (int u = 0; u < pano.width; ++u) {
      unsigned char px = 0;
      if (pano.has_return(u, v) && max_depth > 0.0) {
        px = static_cast<unsigned char>(std::lround(255.0 - 235.0 * pano.at(u, v) / max_depth));
      }
      out.put(static_cast<char>(px));
    }
  }
}

int run_simulate(const std::string& config_path, const std::string& controller, const std::string& output) {
  SimConfig cfg = load_config(config_path);
  if (!controller.empty()) {
    try {
      cfg.controller = controller_kind_from_string(controller);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("controller.kind", e.what());
    }
  }
  if (!output.empty()) cfg.output_dir = output;
  validate(cfg);
  const auto run = run_simulation(cfg);
  write_artifacts(run, cfg.output_dir);
  std::cout << EvalReport::csv_header() << '\n' << run.report.csv_row() << '\n';
  std::cout << "artifacts written to " << cfg.output_dir << '\n';
  return kOk;
}

int run_compare(const std::string& config_path, const std::string& output) {
  SimConfig cfg = load_config(config_path);
  if (!output.empty()) cfg.output_dir = output;
  validate(cfg);
  const SimInputs in = load_inputs(cfg);
  std::vector<EvalReport> rows;
  for (auto kind : {ControllerKind::ua_mpc, ControllerKind::constant, ControllerKind::zero}) {
    SimConfig c = cfg;
    c.controller = kind;
    auto ctrl = make_controller(kind, c.control, c.prediction, c.fov, c.calibration.calibration());
    const auto run = run_simulation(c, in, *ctrl);
    write_artifacts(run, fs::path(cfg.output_dir) / to_string(kind));
    rows.push_back(run.report);
  }
  fs::create_directories(cfg.output_dir);
  std::ofstream table(fs::path(cfg.output_dir) / "compare.csv");
  table << EvalReport::csv_header() << '\n';
  std::cout << EvalReport::csv_header() << '\n';
  for (const auto& r : rows) {
    table << r.csv_row() << '\n';
    std::cout << r.csv_row() << '\n';
  }
  return kOk;
}

struct EvalArgs {
  std::string est, gt, coverage, out, scene = "run", controller = "unknown";
  double assoc_tol = 0.02;
  double voxel = 0.5;
  double period = 5.0;
  bool align = false;
};

int run_eval(const EvalArgs& a) {
  const auto est = load_tum(a.est);
  const auto gt = load_tum(a.gt);
  EvalReport rep;
  rep.scene = a.scene;
  rep.controller = a.controller;
  const auto ate = compute_ate(est, gt, a.assoc_tol, a.align);
  rep.ate = ate.ate;
  rep.aligned = ate.aligned;
  rep.matches = ate.matches;
  if (!a.coverage.empty()) {
    const auto cells = read_coverage_csv(a.coverage);
    const auto cm = compute_cmplt_cells(cells, a.period);
    rep.cmplt = cm.cmplt;
    rep.voxels_per_period = cm.per_period;
  }
  const std::string json = rep.to_json();
  std::cout << json;
  if (!a.out.empty()) {
    std::ofstream out(a.out);
    if (!out) throw std::runtime_error("cannot write " + a.out);
    out << json;
  }
  return kOk;
}

struct PredictArgs {
  std::string map, fov = "spinning", csv = "u_profile.csv", pgm;
  std::vector<double> pose{0, 0, 0, 0, 0, 0};
  std::vector<double> calib_rpy{0, 0, 0};
  double horizontal = 0.0, vertical = 0.0;
  double delta_deg = 10.0, step_deg = 5.0, eps = 1e-3, splat = 0.05, theta_base_deg = 0.0;
  int width = 720, height = 180;
};

int run_predict(const PredictArgs& a) {
  PointCloudMap map = load_map(a.map, map_format_from_path(a.map));
  Pose base;
  base.translation = Vec3(a.pose[0], a.pose[1], a.pose[2]);
  base.rotation = rotation_from_rpy(deg2rad(a.pose[3]), deg2rad(a.pose[4]), deg2rad(a.pose[5]));
  if (!map.has_normals()) {
    NormalOptions no;
    no.viewpoint = base.translation;
    map = estimate_normals(map, no);
  }
  FovModel fov = fov_preset(a.fov);
  if (a.horizontal > 0.0) fov.horizontal_deg = a.horizontal;
  if (a.vertical > 0.0) fov.vertical_deg = a.vertical;
  validate(fov);
  Calibration calib;
  calib.rotation = rotation_from_rpy(deg2rad(a.calib_rpy[0]), deg2rad(a.calib_rpy[1]), deg2rad(a.calib_rpy[2]));

  PanoOptions po;
  po.width = a.width;
  po.height = a.height;
  po.splat_radius = a.splat;
  const auto pano = render_pano(map, base, po);
  UProfileOptions uo;
  uo.delta = deg2rad(a.delta_deg);
  uo.eps_reg = a.eps;
  const SamplingPattern pattern(fov, a.step_deg);
  const auto prof = sample_u_profile(pano, map, pattern, calib, deg2rad(a.theta_base_deg), uo);

  std::ofstream out(a.csv);
  if (!out) throw std::runtime_error("cannot write " + a.csv);
  out << "theta,u\n";
  for (std::size_t s = 0; s < prof.size(); ++s) {
    out << format_double(prof.theta_base + static_cast<double>(s) * prof.delta) << ','
        << format_double(prof.samples[s]) << '\n';
  }
  if (!a.pgm.empty()) write_pgm(pano, a.pgm);
  const auto best = std::min_element(prof.samples.begin(), prof.samples.end()) - prof.samples.begin();
  std::cout << prof.size() << " samples, min U " << format_double(prof.samples[best]) << " at theta "
            << format_double(prof.theta_base + static_cast<double>(best) * prof.delta) << '\n';
  return kOk;
}

struct SceneArgs {
  SceneSpec spec;
  std::string kind = "corridor", out, format;
};

int run_gen_scene(SceneArgs a) {
  a.spec.kind = scene_kind_from_string(a.kind);
  validate(a.spec);
  const auto map = generate_synthetic_scene(a.spec);
  MapFormat fmt = map_format_from_path(a.out);
  if (a.format == "ply") fmt = MapFormat::ply_ascii;
  if (a.format == "xyz") fmt = MapFormat::xyz;
  if (fs::path(a.out).has_parent_path()) fs::create_directories(fs::path(a.out).parent_path());
  save_map(map, a.out, fmt);
  std::cout << map.size() << " points written to " << a.out << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Motorized LiDAR workbench: simulation, uncertainty prediction and evaluation"};
  app.require_subcommand(1);

  std::string config_path, controller, output;
  auto* sim = app.add_subcommand("simulate", "Run one simulation from a JSON config");
  sim->add_option("config", config_path, "Config file")->required();
  sim->add_option("--controller", controller, "Override controller (ua_mpc, constant, zero)");
  sim->add_option("-o,--output", output, "Override output directory");

  auto* cmp = app.add_subcommand("compare", "Run ua_mpc, constant and zero on one config");
  cmp->add_option("config", config_path, "Config file")->required();
  cmp->add_option("-o,--output", output, "Override output directory");

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "ATE and CMPLT of a stored run");
  ev->add_option("--est", ea.est, "Estimated TUM trajectory")->required();
  ev->add_option("--gt", ea.gt, "Ground-truth TUM trajectory")->required();
  ev->add_option("--coverage", ea.coverage, "Coverage CSV");
  ev->add_option("--assoc-tol", ea.assoc_tol, "Timestamp association tolerance (s)");
  ev->add_option("--period", ea.period, "CMPLT window (s)");
  ev->add_flag("--align", ea.align, "Rigidly align before ATE (reported as aligned_ate)");
  ev->add_option("--scene", ea.scene, "Scene label");
  ev->add_option("--controller", ea.controller, "Controller label");
  ev->add_option("-o,--output", ea.out, "Write report JSON here");

  PredictArgs pa;
  auto* pu = app.add_subcommand("predict-u", "Dump the U profile and depth pano at a pose");
  pu->add_option("--map", pa.map, "Map file (.ply or .xyz)")->required();
  pu->add_option("--pose", pa.pose, "x y z roll pitch yaw (m, deg)")->expected(6);
  pu->add_option("--fov", pa.fov, "spinning, solid_state or dome");
  pu->add_option("--horizontal-deg", pa.horizontal, "Override horizontal extent");
  pu->add_option("--vertical-deg", pa.vertical, "Override vertical extent");
  pu->add_option("--calib-rpy", pa.calib_rpy, "LiDAR-to-motor roll pitch yaw (deg)")->expected(3);
  pu->add_option("--delta-deg", pa.delta_deg, "Profile step (deg)");
  pu->add_option("--theta-base-deg", pa.theta_base_deg, "Angle of sample 0 (deg)");
  pu->add_option("--step-deg", pa.step_deg, "Measurement sampling step (deg)");
  pu->add_option("--eps", pa.eps, "Regularization");
  pu->add_option("--splat", pa.splat, "Pano splat radius (m)");
  pu->add_option("--width", pa.width, "Pano width (px)");
  pu->add_option("--height", pa.height, "Pano height (px)");
  pu->add_option("--csv", pa.csv, "Output CSV");
  pu->add_option("--pgm", pa.pgm, "Output pano image (PGM)");

  SceneArgs sa;
  auto* gs = app.add_subcommand("gen-scene", "Write a synthetic scene");
  gs->add_option("--kind", sa.kind, "corridor, box_room or multi_room");
  gs->add_option("--length", sa.spec.length);
  gs->add_option("--width", sa.spec.width);
  gs->add_option("--height", sa.spec.height);
  gs->add_option("--spacing", sa.spec.spacing);
  gs->add_option("--end-clutter", sa.spec.end_clutter);
  gs->add_option("--room-clutter", sa.spec.room_clutter);
  gs->add_flag("--branch", sa.spec.branch);
  gs->add_option("--branch-x", sa.spec.branch_x);
  gs->add_option("--branch-length", sa.spec.branch_length);
  gs->add_option("--rooms", sa.spec.rooms);
  gs->add_option("--seed", sa.spec.seed);
  gs->add_option("--format", sa.format, "ply or xyz (default from extension)");
  gs->add_option("-o,--output", sa.out, "Output map file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kValidation;
  }

  try {
    if (*sim) return run_simulate(config_path, controller, output);
    if (*cmp) return run_compare(config_path, output);
    if (*ev) return run_eval(ea);
    if (*pu) return run_predict(pa);
    if (*gs) return run_gen_scene(sa);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kValidation;
  } catch (const FormatError& e) {
    std::cerr << "input error: " << e.what() << '\n';
    return kValidation;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return kValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kRuntime;
}
