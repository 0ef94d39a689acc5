// End-to-end acceptance run: prints one PASS/FAIL line per criterion and
// exits non-zero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "twoscale/engine.hpp"
#include "twoscale/harness.hpp"
#include "twoscale/models.hpp"
#include "twoscale/reference.hpp"

using namespace twoscale;

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kQuarterPi = kPi / 4.0;

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    pass = pass && ok;
    if (!detail.empty()) detail += "; ";
    detail += what + (ok ? "" : " [fail]");
  }
};

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3e", v);
  return buf;
}

std::string fixed(double v, int digits = 3) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

FieldForm form(FormKind kind, double c, int m, std::vector<double> p, double w) {
  FieldForm f;
  f.kind = kind;
  f.amplitude = c;
  f.mode = m;
  f.poly = std::move(p);
  f.width = w;
  return f;
}

Lorentz3 lorentz(const std::vector<FieldForm>& comps) {
  return [comps](double, double tau, const Vec3& x, const Vec3& v) {
    double p[2] = {x[0], x[1]};
    Vec3 E(comps[0].evaluate(tau, p), comps[1].evaluate(tau, p), 0.0);
    Vec3 B(0.0, 0.0, comps[2].evaluate(tau, p));
    return Vec3(E + v.cross(B));
  };
}

ExpansionProblem problem_for(const LimitModel& model, GridPtr grid, PresetId preset,
                             double horizon) {
  ExpansionProblem pb;
  pb.grid = grid;
  pb.flow = model.flow;
  pb.expansion = model.expansion;
  pb.initial = sample_initial(InitialData{}, preset, grid);
  pb.horizon = horizon;
  return pb;
}

// Beam sweep shared by the first- and second-order criteria.
SweepConfig beam_sweep() {
  SweepConfig c;
  c.preset = PresetId::kBeam;
  c.fields = default_preset_fields(PresetId::kBeam);  // cos(tau) exp(-r^2/8)
  c.order = 1;
  c.eps = {1.0 / 16, 1.0 / 32, 1.0 / 64, 1.0 / 128, 1.0 / 256};
  c.horizon = kQuarterPi;
  c.points = 128;
  c.tau_points = 32;
  c.checkpoints = 32;
  c.n_fast = 1024;
  c.initial.center = {0.5, 0.0};
  return c;
}

Outcome exactness() {
  auto start = std::chrono::steady_clock::now();
  SweepConfig c;
  c.preset = PresetId::kBeam;
  c.fields.orders = {{FieldForm{}}};
  c.order = 0;
  c.eps = default_eps_list();
  c.horizon = 1.0;
  c.points = 128;
  c.tau_points = 64;
  c.checkpoints = 32;
  c.n_fast = 128;
  ConvergenceReport r = run_sweep(c);
  double seconds = seconds_since(start);
  double worst = 0.0;
  for (const auto& row : r.rows) worst = std::max(worst, row.error);
  Outcome o;
  o.require(r.failures.empty() && worst <= 1e-4, "max e_0 " + sci(worst) + " <= 1e-4");
  o.require(seconds <= 60.0, "runtime " + fixed(seconds, 1) + " s <= 60 s");
  return o;
}

Outcome first_order(const ConvergenceReport& r, double seconds) {
  const SlopeFit& f = r.fits.at(0);
  Outcome o;
  o.require(f.slope >= 0.8 && f.slope <= 1.2, "slope " + fixed(f.slope) + " in [0.8, 1.2]");
  o.require(f.r_squared >= 0.98, "R^2 " + fixed(f.r_squared, 4) + " >= 0.98");
  o.require(seconds <= 600.0, "runtime " + fixed(seconds, 1) + " s <= 600 s");
  return o;
}

Outcome second_order(const ConvergenceReport& r) {
  const SlopeFit& f = r.fits.at(1);
  Outcome o;
  o.require(f.slope >= 1.7 && f.slope <= 2.3, "slope " + fixed(f.slope) + " in [1.7, 2.3]");
  o.require(f.r_squared >= 0.98, "R^2 " + fixed(f.r_squared, 4) + " >= 0.98");
  bool below = true;
  for (double eps : {1.0 / 32, 1.0 / 64, 1.0 / 128, 1.0 / 256}) {
    below = below && r.error(1, eps) < r.error(0, eps);
  }
  o.require(below, "e_1 < e_0 for eps <= 1/32");
  return o;
}

Outcome w_closure(const ConvergenceReport& beam) {
  double worst_beam = 0.0;
  for (const auto& row : beam.rows) worst_beam = std::max(worst_beam, row.w_closure_residual);
  Outcome o;
  o.require(worst_beam <= 1e-6, "beam sweep " + sci(worst_beam) + " <= 1e-6");

  auto model = preset_limit_model(PresetId::kFLR4D, default_preset_fields(PresetId::kFLR4D), 1);
  auto grid = make_grid(default_axes(PresetId::kFLR4D, 32), 16, model.theta);
  EngineOptions opt;
  opt.order = 1;
  opt.checkpoints = 4;
  ExpansionState st = build_expansion(problem_for(model, grid, PresetId::kFLR4D, 0.5), opt);
  double flr = st.w_closure_residual(1);
  o.require(flr <= 1e-6, "FLR 32^4 " + sci(flr) + " <= 1e-6");
  return o;
}

Outcome operator_equivalence() {
  Outcome o;
  // Beam with an r-dependent profile.
  {
    FieldForm e = form(FormKind::kGaussianMode, 0.7, 1, {0.3, 1.0, -0.4}, 1.5);
    PresetFields f;
    f.orders.push_back({e});
    auto model = preset_limit_model(PresetId::kBeam, f, 0);
    auto grid = make_grid(default_axes(PresetId::kBeam, 64), 32, model.theta);
    ExpansionProblem pb = problem_for(model, grid, PresetId::kBeam, 1.0);
    ExpansionContext ctx(pb);
    VectorField at = ctx.a_tilde_field(0, 0.0);
    BeamProfile E = [e](double, double tau, double r) {
      double y[1] = {r};
      return e.evaluate(tau, y);
    };
    double worst = 0.0;
    for (std::size_t i = 0; i < grid->size(); ++i) {
      Point x = grid->node(i);
      worst = std::max(worst, std::abs(at.component(0)[i] - beam_J(1, E, 0.0, x[0], x[1], 32)));
      worst = std::max(worst, std::abs(at.component(1)[i] - beam_J(2, E, 0.0, x[0], x[1], 32)));
    }
    o.require(worst <= 1e-10, "beam J1/J2 " + sci(worst) + " <= 1e-10");
  }
  // FLR with every component depending on position.
  {
    std::vector<FieldForm> comps{form(FormKind::kGaussianMode, 0.4, 1, {0.2, 1.0, -0.5}, 2.0),
                                 form(FormKind::kGaussianMode, -0.3, 2, {0.1, 0.3, 0.8, 0.2}, 2.0),
                                 form(FormKind::kMode, 0.5, 0, {1.0, 0.1, 0.0}, 1.0)};
    PresetFields f;
    f.orders.push_back(comps);
    auto model = preset_limit_model(PresetId::kFLR4D, f, 0);
    auto grid = make_grid(default_axes(PresetId::kFLR4D, 10), 16, model.theta);
    ExpansionProblem pb = problem_for(model, grid, PresetId::kFLR4D, 1.0);
    ExpansionContext ctx(pb);
    VectorField at = ctx.a_tilde_field(0, 0.0);
    Lorentz3 L0 = lorentz(comps);
    double worst = 0.0;
    for (std::size_t i = 0; i < grid->size(); ++i) {
      Point y = grid->node(i);
      Vec3 x(y[0], y[1], 0.0), v(y[2], y[3], 0.0);
      Vec3 j1 = flr_J(1, L0, 0.0, x, v, 16), j2 = flr_J(2, L0, 0.0, x, v, 16);
      Point expect(4);
      expect << j1[0], j1[1], j2[0], j2[1];
      worst = std::max(worst, (at.at(i) - expect).cwiseAbs().maxCoeff());
    }
    o.require(worst <= 1e-10, "FLR J1/J2 " + sci(worst) + " <= 1e-10");
  }
  // Guiding-centre example with constant fields and beta = e_z.
  {
    auto rot = gc_rotation_ez();
    Vec3 E(0.4, -1.1, 0.7), x(0.3, -0.2, 0.9);
    double bz = 1.3;
    Lorentz3 L0 = [E, bz](double, double, const Vec3&, const Vec3& w) {
      return Vec3(E + w.cross(Vec3(0.0, 0.0, bz)));
    };
    double worst = 0.0;
    for (Vec3 v : {Vec3(1.0, 2.0, 3.0), Vec3(-0.5, 0.25, -1.5), Vec3(0.0, -2.0, 0.7)}) {
      worst = std::max(worst, (gc_J1(rot, 0.0, x, 16) * v - Vec3(0.0, 0.0, v[2])).norm());
      Vec3 expect = Vec3(0.0, 0.0, E[2]) + v.cross(Vec3(0.0, 0.0, bz));
      worst = std::max(worst, (gc_J2(rot, L0, 0.0, x, v, 16) - expect).norm());
    }
    o.require(worst <= 1e-12, "GC example " + sci(worst) + " <= 1e-12");
  }
  return o;
}

const InvariantCheck& find_check(const InvariantLedger& l, const std::string& name) {
  for (const auto& c : l.checks) {
    if (c.name == name) return c;
  }
  static InvariantCheck missing{"missing", false, NAN, 0.0, ""};
  return missing;
}

Outcome flow_diagnostics(const std::vector<InvariantLedger>& ledgers) {
  Outcome o;
  for (const auto& l : ledgers) {
    double closure = find_check(l, "flow_closure_analytic").value;
    double det = find_check(l, "flow_det_analytic").value;
    double numeric = find_check(l, "flow_closure_numeric").value;
    o.require(closure <= 1e-12 && det <= 1e-12 && numeric <= 1e-6,
              l.preset + " closure " + sci(closure) + ", |det-1| " + sci(det) + ", RK4 closure " +
                  sci(numeric));
  }
  return o;
}

Outcome conservation(const std::vector<InvariantLedger>& ledgers) {
  Outcome o;
  for (const auto& l : ledgers) {
    double ref = find_check(l, "reference_norm_drift").value;
    double eng = find_check(l, "engine_norm_drift").value;
    o.require(ref <= 0.01 && eng <= 0.01,
              l.preset + " reference " + sci(ref) + ", engine " + sci(eng));
  }
  return o;
}

double fitted_order(const std::vector<double>& h, const std::vector<double>& e) {
  double n = static_cast<double>(h.size()), sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < h.size(); ++i) {
    double x = std::log(h[i]), y = std::log(e[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

Outcome source_oracle() {
  Outcome o;
  // Manufactured solution g*(t, r, v) = exp(-((r - 0.3 t)^2 + v^2) / 2) with
  // A = (0, 0.5 cos(t/eps)); the source is chosen so that g* solves the problem.
  {
    double eps = 1.0 / 8, T = 0.5;
    auto gauss = [](double r, double v) { return std::exp(-(r * r + v * v) / 2.0); };
    SlowField a = [eps](double t, const Point&) {
      Point p(2);
      p << 0.0, 0.5 * std::cos(t / eps);
      return p;
    };
    SourceField f = [eps, a, gauss](double t, const Point& x) {
      double g = gauss(x[0] - 0.3 * t, x[1]);
      double gr = -(x[0] - 0.3 * t) * g, gv = -x[1] * g;
      double gt = 0.3 * (x[0] - 0.3 * t) * g;
      Point av = a(t, x);
      return eps * (gt + av[0] * gr + av[1] * gv) + (x[1] * gr - x[0] * gv);
    };
    auto model = preset_limit_model(PresetId::kBeam, default_preset_fields(PresetId::kBeam), 0);
    std::vector<double> h, err;
    for (int n : {32, 64, 128}) {
      auto grid = make_grid(default_axes(PresetId::kBeam, n), 16, model.theta);
      StiffProblem sp;
      sp.eps = eps;
      sp.slow = a;
      sp.fast = model.fast;
      sp.theta = model.theta;
      sp.initial = ScalarField::sample(grid, [&](const Point& x) { return gauss(x[0], x[1]); });
      sp.horizon = T;
      sp.n_fast = n;
      auto sol = solve_direct_with_source(sp, f);
      auto exact = ScalarField::sample(grid, [&](const Point& x) { return gauss(x[0] - 0.3 * T, x[1]); });
      h.push_back(12.0 / (n - 1));
      err.push_back(norm_of_difference(sol.final_field(), exact));
    }
    double order = fitted_order(h, err);
    o.require(order >= 1.5, "manufactured order " + fixed(order, 2) + " >= 1.5");
  }
  {
    SourceOracleReport r = run_source_oracle(SourceOracleConfig{});
    o.require(r.fit.slope >= 0.8, "two-scale average vs limit order " + fixed(r.fit.slope, 2) +
                                      " >= 0.8 (distance " + sci(r.distance.back()) + " at eps " +
                                      sci(r.eps.back()) + ")");
  }
  return o;
}

Outcome determinism() {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "twoscale_acceptance_determinism";
  fs::remove_all(dir);
  std::string config = std::string(TWOSCALE_CONFIG_DIR) + "/beam_quick.ini";
  auto run = [&](const std::string& sub) {
    std::string cmd = std::string("\"") + TWOSCALE_CLI_PATH + "\" run --config \"" + config +
                      "\" --out \"" + (dir / sub).string() + "\" > /dev/null";
    return std::system(cmd.c_str());
  };
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  Outcome o;
  int a = run("a"), b = run("b");
  o.require(a == 0 && b == 0, "both runs exit 0");
  std::string ca = slurp(dir / "a" / "report.csv"), cb = slurp(dir / "b" / "report.csv");
  o.require(!ca.empty() && ca == cb, "CSV byte-identical (" + std::to_string(ca.size()) + " bytes)");
  fs::remove_all(dir);
  return o;
}

}  // namespace

int main() {
  int failed = 0;
  auto report = [&](int n, const std::string& title, const std::function<Outcome()>& fn) {
    auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("exception: ") + e.what();
    }
    if (!o.pass) ++failed;
    std::printf("criterion %d %s: %s  (%s; %.1f s)\n", n, title.c_str(), o.pass ? "PASS" : "FAIL",
                o.detail.c_str(), seconds_since(start));
    std::fflush(stdout);
  };

  report(1, "exactness control", exactness);

  ConvergenceReport beam;
  double beam_seconds = 0.0;
  std::string beam_error;
  {
    auto start = std::chrono::steady_clock::now();
    try {
      beam = run_sweep(beam_sweep());
    } catch (const std::exception& e) {
      beam_error = e.what();
    }
    beam_seconds = seconds_since(start);
  }
  auto need_beam = [&]() {
    if (!beam_error.empty()) throw std::runtime_error(beam_error);
    if (!beam.failures.empty()) throw std::runtime_error(beam.failures.front());
  };
  report(2, "first-order convergence", [&] {
    need_beam();
    return first_order(beam, beam_seconds);
  });
  report(3, "second-order convergence", [&] {
    need_beam();
    return second_order(beam);
  });
  report(4, "W closure", [&] {
    need_beam();
    return w_closure(beam);
  });
  report(5, "operator equivalence", operator_equivalence);

  std::vector<InvariantLedger> ledgers;
  for (auto id : {PresetId::kBeam, PresetId::kGC4D, PresetId::kFLR4D}) {
    InvariantConfig ic;
    ic.preset = id;
    ledgers.push_back(run_invariants(ic));
  }
  report(6, "flow diagnostics", [&] { return flow_diagnostics(ledgers); });
  report(7, "conservation", [&] { return conservation(ledgers); });
  report(8, "source-equation oracle", source_oracle);
  report(9, "determinism", determinism);

  std::printf("%d of 9 criteria failed\n", failed);
  return failed == 0 ? 0 : 1;
}
