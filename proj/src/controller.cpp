#include "mlidar/controller.hpp"

#include <Eigen/Cholesky>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace mlidar {

void validate(const ControllerConfig& c) {
  if (!(c.alpha >= 0.0) || !(c.beta >= 0.0)) throw std::invalid_argument("controller: alpha and beta must be >= 0");
  if (!(c.omega_min <= c.omega_pre && c.omega_pre <= c.omega_max)) {
    throw std::invalid_argument("controller: need omega_min <= omega_pre <= omega_max");
  }
  if (c.horizon < 1) throw std::invalid_argument("controller: horizon must be >= 1");
  if (!(c.dt > 0.0)) throw std::invalid_argument("controller: dt must be positive");
  if (c.max_iterations < 0) throw std::invalid_argument("controller: max_iterations must be >= 0");
  if (!(c.tolerance > 0.0) || !(c.initial_step > 0.0)) {
    throw std::invalid_argument("controller: tolerance and initial_step must be positive");
  }
}

namespace {

void check_speeds(std::span<const double> w, const ControllerConfig& cfg) {
  if (static_cast<int>(w.size()) != cfg.horizon) {
    throw std::invalid_argument("horizon: expected " + std::to_string(cfg.horizon) + " speeds");
  }
}

}  // namespace

double horizon_cost(std::span<const double> w, double theta_start, const UProfile& profile,
                    const ControllerConfig& cfg) {
  check_speeds(w, cfg);
  double theta = theta_start;
  double obs = 0.0;
  double eff = 0.0;
  for (std::size_t l = 0; l < w.size(); ++l) {
    theta += cfg.dt * w[l];
    const double u = surrogate_eval(profile, theta);
    obs += u * u;
    const double d = w[l] - cfg.omega_pre;
    eff += d * d;
  }
  return cfg.alpha * obs + cfg.beta * eff;
}

std::vector<double> horizon_gradient(std::span<const double> w, double theta_start,
                                     const UProfile& profile, const ControllerConfig& cfg) {
  check_speeds(w, cfg);
  const std::size_t n = w.size();
  std::vector<double> term(n);
  double theta = theta_start;
  for (std::size_t l = 0; l < n; ++l) {
    theta += cfg.dt * w[l];
    term[l] = surrogate_eval(profile, theta) * surrogate_grad(profile, theta);
  }
  // ∂F/∂ω_l collects every θ_i with i > l, i.e. term indices >= l.
  std::vector<double> g(n);
  double suffix = 0.0;
  for (std::size_t l = n; l-- > 0;) {
    suffix += term[l];
    g[l] = 2.0 * cfg.alpha * cfg.dt * suffix + 2.0 * cfg.beta * (w[l] - cfg.omega_pre);
  }
  return g;
}

namespace {

constexpr std::size_t kDescents = 48;

struct Local {
  std::vector<double> w;
  double cost = 0.0;
  int iterations = 0;
};

/// Newton direction on the variables not held at a bound, from the cell-local
/// Hessian 2αΔt² Σ_{i>max(l,m)} U'_i² + 2β δ_lm. Empty if it is not usable.
std::vector<double> newton_direction(const std::vector<double>& w, const std::vector<double>& g,
                                     double theta0, const UProfile& prof, const ControllerConfig& cfg) {
  const auto n = static_cast<Eigen::Index>(w.size());
  std::vector<Eigen::Index> free;
  for (Eigen::Index i = 0; i < n; ++i) {
    const bool at_lo = w[i] <= cfg.omega_min && g[i] > 0.0;
    const bool at_hi = w[i] >= cfg.omega_max && g[i] < 0.0;
    if (!at_lo && !at_hi) free.push_back(i);
  }
  if (free.empty()) return {};
  // suffix[l] = Σ_{i >= l} slope_i², slope at θ_{l+1}
  std::vector<double> suffix(w.size() + 1, 0.0);
  double theta = theta0;
  std::vector<double> slope2(w.size());
  for (std::size_t l = 0; l < w.size(); ++l) {
    theta += cfg.dt * w[l];
    const double b = surrogate_grad(prof, theta);
    slope2[l] = b * b;
  }
  for (std::size_t l = w.size(); l-- > 0;) suffix[l] = suffix[l + 1] + slope2[l];
  const auto m = static_cast<Eigen::Index>(free.size());
  Eigen::MatrixXd hess(m, m);
  Eigen::VectorXd rhs(m);
  const double k = 2.0 * cfg.alpha * cfg.dt * cfg.dt;
  for (Eigen::Index a = 0; a < m; ++a) {
    rhs[a] = g[static_cast<std::size_t>(free[a])];
    for (Eigen::Index b = 0; b < m; ++b) {
      const auto hi = static_cast<std::size_t>(std::max(free[a], free[b]));
      hess(a, b) = k * suffix[hi] + (a == b ? 2.0 * cfg.beta : 0.0);
    }
  }
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(hess);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.vectorD().minCoeff() <= 1e-12) return {};
  const Eigen::VectorXd x = ldlt.solve(rhs);
  if (!x.allFinite()) return {};
  std::vector<double> d(w.size(), 0.0);
  for (Eigen::Index a = 0; a < m; ++a) d[static_cast<std::size_t>(free[a])] = x[a];
  return d;
}

Local descend(std::vector<double> w, double theta0, const UProfile& prof, const ControllerConfig& cfg) {
  auto clamp = [&](double v) { return std::clamp(v, cfg.omega_min, cfg.omega_max); };
  for (auto& v : w) v = clamp(v);
  Local out;
  double f = horizon_cost(w, theta0, prof, cfg);
  std::vector<double> cand(w.size());
  for (int it = 0; it < cfg.max_iterations; ++it) {
    const auto g = horizon_gradient(w, theta0, prof, cfg);
    double pg2 = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double d = w[i] - clamp(w[i] - g[i]);
      pg2 += d * d;
    }
    if (std::sqrt(pg2) < cfg.tolerance) break;

    bool accepted = false;
    double fc = f;
    // Within one surrogate cell F is quadratic, so a projected Newton step
    // usually lands on the cell minimum; the gradient steps below are the
    // fallback when it fails the Armijo test.
    const auto d = newton_direction(w, g, theta0, prof, cfg);
    if (!d.empty()) {
      double step = 1.0;
      for (int k = 0; k < 12 && !accepted; ++k, step *= 0.5) {
        double decrease = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) {
          cand[i] = clamp(w[i] - step * d[i]);
          decrease += g[i] * (w[i] - cand[i]);
        }
        if (!(decrease > 0.0)) break;
        fc = horizon_cost(cand, theta0, prof, cfg);
        accepted = fc <= f - 1e-4 * decrease && fc < f;
      }
    }

    double step = cfg.initial_step;
    for (int k = 0; k < 64 && !accepted; ++k) {
      double decrease = 0.0;
      double moved = 0.0;
      for (std::size_t i = 0; i < w.size(); ++i) {
        cand[i] = clamp(w[i] - step * g[i]);
        decrease += g[i] * (w[i] - cand[i]);
        moved += std::abs(w[i] - cand[i]);
      }
      if (moved == 0.0) break;
      fc = horizon_cost(cand, theta0, prof, cfg);
      accepted = fc <= f - 1e-4 * decrease && fc < f;
      step *= 0.5;
    }
    if (!accepted) break;
    w.swap(cand);
    f = fc;
    ++out.iterations;
  }
  out.w = std::move(w);
  out.cost = f;
  return out;
}

/// Starting plans besides ω ≡ ω_pre: constant speeds across the range and
/// plans that put θ_1 (and θ_2) on profile nodes or segment midpoints before
/// holding still or resuming ω_pre, plus the extreme reachable angles. Midpoints
/// matter because descent can stall on the kink at a node.
std::vector<std::vector<double>> extra_starts(double theta0, const UProfile& prof,
                                              const ControllerConfig& cfg) {
  const auto h = static_cast<std::size_t>(cfg.horizon);
  std::vector<std::vector<double>> starts;
  constexpr int kConstants = 8;
  for (int k = 0; k <= kConstants; ++k) {
    const double c = cfg.omega_min + (cfg.omega_max - cfg.omega_min) * k / kConstants;
    starts.emplace_back(h, c);
  }
  auto reachable = [&](double from, std::vector<double>& nodes) {
    nodes.clear();
    const double lo = from + cfg.omega_min * cfg.dt;
    const double hi = from + cfg.omega_max * cfg.dt;
    // half-node steps: even k are nodes, odd k segment midpoints
    const double half = 0.5 * prof.delta;
    const double k0 = std::ceil((lo - prof.theta_base) / half - 1e-9);
    const double k1 = std::floor((hi - prof.theta_base) / half + 1e-9);
    for (double k = k0; k <= k1; k += 1.0) nodes.push_back(prof.theta_base + k * half);
    // the speed bounds themselves
    nodes.push_back(lo);
    nodes.push_back(hi);
  };
  std::vector<double> first;
  std::vector<double> second;
  reachable(theta0, first);
  for (double a : first) {
    const double w0 = (a - theta0) / cfg.dt;
    if (h == 1) {
      starts.push_back({w0});
      continue;
    }
    reachable(a, second);
    for (double b : second) {
      const double w1 = (b - a) / cfg.dt;
      for (double tail : {0.0, cfg.omega_pre}) {
        std::vector<double> w(h, tail);
        w[0] = w0;
        w[1] = w1;
        starts.push_back(std::move(w));
      }
    }
  }
  return starts;
}

}  // namespace

ControlHorizon optimize_horizon(double theta_start, const UProfile& profile,
                                const ControllerConfig& cfg) {
  validate(cfg);
  if (profile.samples.empty()) throw std::invalid_argument("optimize_horizon: empty profile");
  const auto h = static_cast<std::size_t>(cfg.horizon);
  const std::vector<double> init(h, cfg.omega_pre);

  ControlHorizon out;
  out.theta_start = theta_start;
  out.initial_cost = horizon_cost(init, theta_start, profile, cfg);

  Local best = descend(init, theta_start, profile, cfg);
  int total_iterations = best.iterations;
  if (cfg.multi_start) {
    // Only the most promising starts are descended.
    auto starts = extra_starts(theta_start, profile, cfg);
    std::vector<std::pair<double, std::size_t>> ranked;
    ranked.reserve(starts.size());
    for (std::size_t i = 0; i < starts.size(); ++i) {
      for (auto& v : starts[i]) v = std::clamp(v, cfg.omega_min, cfg.omega_max);
      ranked.emplace_back(horizon_cost(starts[i], theta_start, profile, cfg), i);
    }
    const std::size_t keep = std::min<std::size_t>(kDescents, ranked.size());
    std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(keep), ranked.end());
    for (std::size_t r = 0; r < keep; ++r) {
      Local loc = descend(std::move(starts[ranked[r].second]), theta_start, profile, cfg);
      total_iterations += loc.iterations;
      // Ties keep the earlier candidate, so ω_pre wins when it is optimal.
      if (loc.cost < best.cost) best = std::move(loc);
    }
  }
  if (best.cost > out.initial_cost) best = Local{init, out.initial_cost, 0};

  out.speeds = best.w;
  out.cost = best.cost;
  out.iterations = total_iterations;
  out.thetas.reserve(h + 1);
  double theta = theta_start;
  out.thetas.push_back(wrap_angle(theta));
  for (double w : out.speeds) {
    theta += cfg.dt * w;
    out.thetas.push_back(wrap_angle(theta));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Controllers

std::string to_string(ControllerKind kind) {
  switch (kind) {
    case ControllerKind::ua_mpc: return "ua_mpc";
    case ControllerKind::constant: return "constant";
    case ControllerKind::zero: return "zero";
  }
  return "unknown";
}

ControllerKind controller_kind_from_string(const std::string& s) {
  if (s == "ua_mpc") return ControllerKind::ua_mpc;
  if (s == "constant") return ControllerKind::constant;
  if (s == "zero") return ControllerKind::zero;
  throw std::invalid_argument("unknown controller '" + s + "' (ua_mpc, constant, zero)");
}

void validate(const PredictionConfig& p) {
  if (p.pano_width <= 0 || p.pano_height <= 0) throw std::invalid_argument("prediction: pano size must be positive");
  if (!(p.splat_radius >= 0.0)) throw std::invalid_argument("prediction: splat_radius must be >= 0");
  if (!(p.sample_step_deg > 0.0)) throw std::invalid_argument("prediction: sample step must be positive");
  if (!(p.eps_reg > 0.0)) throw std::invalid_argument("prediction: eps_reg must be positive");
  profile_size(deg2rad(p.delta_deg));
}

ControlOutput control_step(const ControllerConfig& cfg, double theta_now, const UProfile& profile) {
  ControlOutput out;
  out.omega = cfg.omega_pre;
  try {
    if (!profile.samples.empty()) {
      out.u_min = *std::min_element(profile.samples.begin(), profile.samples.end());
    }
    const auto hz = optimize_horizon(theta_now, profile, cfg);
    if (!std::isfinite(hz.speeds.front())) throw std::runtime_error("non-finite speed");
    out.omega = hz.speeds.front();
    out.f_initial = hz.initial_cost;
    out.f_final = hz.cost;
    out.iterations = hz.iterations;
  } catch (const std::exception& e) {
    out.omega = cfg.omega_pre;
    out.fallback = true;
    out.message = e.what();
  }
  return out;
}

namespace {

class ConstantController : public MotorController {
 public:
  explicit ConstantController(double omega) : omega_(omega) {}
  std::string name() const override { return "constant"; }
  ControlOutput step(const ControlInput&) override {
    ControlOutput o;
    o.omega = omega_;
    return o;
  }

 private:
  double omega_;
};

class ZeroController : public MotorController {
 public:
  std::string name() const override { return "zero"; }
  ControlOutput step(const ControlInput&) override { return {}; }
};

class UaMpcController : public MotorController {
 public:
  UaMpcController(ControllerConfig cfg, PredictionConfig pred, const FovModel& fov, Calibration calib)
      : cfg_(std::move(cfg)), pred_(pred), pattern_(fov, pred.sample_step_deg), calib_(std::move(calib)) {}

  std::string name() const override { return "ua_mpc"; }

  ControlOutput step(const ControlInput& in) override {
    if (in.local_map == nullptr || in.local_map->empty()) {
      ControlOutput o;
      o.omega = cfg_.omega_pre;
      o.fallback = true;
      o.message = "no local map";
      return o;
    }
    UProfile prof;
    try {
      PanoOptions po;
      po.width = pred_.pano_width;
      po.height = pred_.pano_height;
      po.splat_radius = pred_.splat_radius;
      const DepthPano pano = render_pano(*in.local_map, in.base_estimate, po);
      UProfileOptions uo;
      uo.delta = deg2rad(pred_.delta_deg);
      uo.eps_reg = pred_.eps_reg;
      prof = sample_u_profile(pano, *in.local_map, pattern_, calib_, in.theta, uo);
    } catch (const std::exception& e) {
      ControlOutput o;
      o.omega = cfg_.omega_pre;
      o.fallback = true;
      o.message = e.what();
      return o;
    }
    return control_step(cfg_, in.theta, prof);
  }

 private:
  ControllerConfig cfg_;
  PredictionConfig pred_;
  SamplingPattern pattern_;
  Calibration calib_;
};

}  // namespace

std::unique_ptr<MotorController> make_controller(ControllerKind kind, const ControllerConfig& cfg,
                                                 const PredictionConfig& prediction,
                                                 const FovModel& fov, const Calibration& calib) {
  validate(cfg);
  switch (kind) {
    case ControllerKind::constant: return std::make_unique<ConstantController>(cfg.omega_pre);
    case ControllerKind::zero: return std::make_unique<ZeroController>();
    case ControllerKind::ua_mpc:
      validate(prediction);
      return std::make_unique<UaMpcController>(cfg, prediction, fov, calib);
  }
  throw std::invalid_argument("make_controller: unknown kind");
}

}  // namespace mlidar
