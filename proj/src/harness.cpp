#include "twoscale/harness.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numbers>
#include <sstream>
#include <thread>

#include "twoscale/errors.hpp"
#include "twoscale/parallel.hpp"
#include "twoscale/reference.hpp"

namespace twoscale {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::string num(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

std::string opt_num(const std::optional<double>& v) { return v ? num(*v) : std::string(); }

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

int resolved_workers(int workers) { return workers > 0 ? workers : default_workers(); }

const PresetFields& fields_or_default(const PresetFields& given, PresetFields& storage,
                                      PresetId preset) {
  if (!given.orders.empty()) return given;
  storage = default_preset_fields(preset);
  return storage;
}

// Lorentz force of order j in three dimensions (planar fields, z parts zero).
Lorentz3 lorentz3(const PresetFields& f, int j) {
  if (j >= static_cast<int>(f.orders.size()) || f.orders[j].empty()) {
    return [](double, double, const Vec3&, const Vec3&) { return Vec3::Zero().eval(); };
  }
  auto comps = f.orders[j];
  return [comps](double, double tau, const Vec3& x, const Vec3& v) {
    double p[2] = {x[0], x[1]};
    Vec3 E(comps[0].evaluate(tau, p), comps[1].evaluate(tau, p), 0.0);
    Vec3 B(0.0, 0.0, comps[2].evaluate(tau, p));
    return Vec3(E + v.cross(B));
  };
}

BeamProfile beam_profile(const PresetFields& f, int j) {
  if (j >= static_cast<int>(f.orders.size()) || f.orders[j].empty()) {
    return [](double, double, double) { return 0.0; };
  }
  FieldForm e = f.orders[j][0];
  return [e](double, double tau, double r) {
    double y[1] = {r};
    return e.evaluate(tau, y);
  };
}

// Closed-form a~_0 at a grid node.
Point closed_a_tilde(PresetId preset, const PresetFields& f, const Point& y, int tau_points) {
  Point out(y.size());
  if (preset == PresetId::kBeam) {
    auto E = beam_profile(f, 0);
    out << beam_J(1, E, 0.0, y[0], y[1], tau_points), beam_J(2, E, 0.0, y[0], y[1], tau_points);
    return out;
  }
  Vec3 x(y[0], y[1], 0.0), v(y[2], y[3], 0.0);
  auto L0 = lorentz3(f, 0);
  Vec3 j1, j2;
  if (preset == PresetId::kGC4D) {
    auto rot = gc_rotation_ez();
    j1 = gc_J1(rot, 0.0, x, tau_points) * v;
    j2 = gc_J2(rot, L0, 0.0, x, v, tau_points);
  } else {
    j1 = flr_J(1, L0, 0.0, x, v, tau_points);
    j2 = flr_J(2, L0, 0.0, x, v, tau_points);
  }
  out << j1[0], j1[1], j2[0], j2[1];
  return out;
}

InvariantCheck make_check(std::string name, double value, double tol, std::string detail = {}) {
  InvariantCheck c;
  c.name = std::move(name);
  c.value = value;
  c.tolerance = tol;
  c.passed = std::isfinite(value) && value <= tol;
  c.detail = std::move(detail);
  return c;
}

std::string point_text(const Point& p) {
  std::string s = "(";
  for (int i = 0; i < p.size(); ++i) s += (i ? ", " : "") + num(p[i]);
  return s + ")";
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

double parse_double(const std::string& s, int line) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw InputError("report line " + std::to_string(line) + ": bad number '" + s + "'");
  }
  return v;
}

std::optional<double> parse_optional(const std::string& s, int line) {
  if (s.empty()) return std::nullopt;
  return parse_double(s, line);
}

}  // namespace

// ---------------------------------------------------------------------------

std::vector<double> default_initial_center(PresetId preset) {
  if (preset == PresetId::kBeam) return {0.5, 0.0};
  return {0.3, 0.0, 0.0, 0.2};
}

InitialFunction initial_function(const InitialData& data, PresetId preset, int dims) {
  std::vector<double> c = data.center.empty() ? default_initial_center(preset) : data.center;
  if (static_cast<int>(c.size()) != dims) {
    throw ConfigError("initial center has " + std::to_string(c.size()) + " entries, expected " +
                      std::to_string(dims));
  }
  if (!(data.width > 0.0)) throw ConfigError("initial width must be positive");
  double w2 = 2.0 * data.width * data.width, amp = data.amplitude;
  return [c, w2, amp](const Point& x) {
    double r2 = 0.0;
    for (int d = 0; d < x.size(); ++d) r2 += (x[d] - c[d]) * (x[d] - c[d]);
    return amp * std::exp(-r2 / w2);
  };
}

ScalarField sample_initial(const InitialData& data, PresetId preset, GridPtr grid) {
  return ScalarField::sample(grid, initial_function(data, preset, grid->dims()));
}

std::vector<double> default_eps_list() {
  return {1.0 / 8, 1.0 / 16, 1.0 / 32, 1.0 / 64, 1.0 / 128, 1.0 / 256};
}

void validate(const SweepConfig& c) {
  if (c.eps.empty()) throw ConfigError("eps: list is empty");
  for (std::size_t i = 0; i < c.eps.size(); ++i) {
    if (!(c.eps[i] > 0.0 && c.eps[i] < 1.0)) {
      throw ConfigError("eps: value " + num(c.eps[i]) + " is outside (0, 1)");
    }
    if (i > 0 && !(c.eps[i] < c.eps[i - 1])) {
      throw ConfigError("eps: values must be strictly decreasing");
    }
  }
  if (c.order < 0 || c.order > 3) throw ConfigError("K: must be between 0 and 3");
  if (!(c.horizon > 0.0) || !std::isfinite(c.horizon)) throw ConfigError("T: must be positive");
  if (c.tau_points < 16) throw ConfigError("tau_points: must be at least 16");
  if (c.checkpoints < 2) throw ConfigError("checkpoints: must be at least 2");
  if (c.n_fast < 32) throw ConfigError("n_fast: must be at least 32");
  if (c.points != 0 && c.points < 8) throw ConfigError("points: must be at least 8");
  if (c.substeps_per_unit < 8) throw ConfigError("substeps: must be at least 8");
  int dims = preset_info(c.preset).dims;
  if (!c.axes.empty() && static_cast<int>(c.axes.size()) != dims) {
    throw ConfigError("bounds: preset needs " + std::to_string(dims) + " axes");
  }
}

GridPtr sweep_grid(const SweepConfig& c) {
  int points = c.points > 0 ? c.points : (c.preset == PresetId::kBeam ? 128 : 24);
  std::vector<Axis> axes = c.axes.empty() ? default_axes(c.preset, points) : c.axes;
  for (auto& a : axes) {
    if (c.points > 0 || c.axes.empty()) a.count = points;
    if (!(a.upper > a.lower)) throw ConfigError("bounds: upper must exceed lower");
  }
  return make_grid(axes, c.tau_points, preset_info(c.preset).theta);
}

SlopeFit fit_slope(const std::vector<double>& eps, const std::vector<double>& errors, int K) {
  std::vector<double> xs, ys;
  for (std::size_t i = 0; i < eps.size() && i < errors.size(); ++i) {
    if (std::isfinite(errors[i]) && errors[i] > 0.0) {
      xs.push_back(std::log(eps[i]));
      ys.push_back(std::log(errors[i]));
    }
  }
  auto fit = [K](const std::vector<double>& x, const std::vector<double>& y) {
    SlopeFit f;
    f.K = K;
    f.points = static_cast<int>(x.size());
    if (f.points < 2) return f;
    double n = f.points, sx = 0, sy = 0;
    for (int i = 0; i < f.points; ++i) {
      sx += x[i];
      sy += y[i];
    }
    double mx = sx / n, my = sy / n, sxx = 0, sxy = 0, syy = 0;
    for (int i = 0; i < f.points; ++i) {
      sxx += (x[i] - mx) * (x[i] - mx);
      sxy += (x[i] - mx) * (y[i] - my);
      syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx <= 0.0) return f;
    f.slope = sxy / sxx;
    f.r_squared = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 1.0;
    f.reliable = f.points >= 4 && f.r_squared >= 0.98;
    return f;
  };
  SlopeFit f = fit(xs, ys);
  if (!f.reliable && xs.size() > 4) {
    // largest eps comes first
    std::size_t first = std::max_element(xs.begin(), xs.end()) - xs.begin();
    xs.erase(xs.begin() + first);
    ys.erase(ys.begin() + first);
    f = fit(xs, ys);
    f.dropped_largest = true;
  }
  return f;
}

double ConvergenceReport::error(int K, double eps) const {
  for (const auto& r : rows) {
    if (r.K == K && r.eps == eps) return r.error;
  }
  throw InputError("report has no row for K=" + std::to_string(K) + ", eps=" + num(eps));
}

ConvergenceReport run_sweep(const SweepConfig& config) {
  validate(config);
  const PresetInfo& info = preset_info(config.preset);
  GridPtr grid = sweep_grid(config);
  PresetFields storage;
  const PresetFields& fields = fields_or_default(config.fields, storage, config.preset);
  LimitModel model = preset_limit_model(config.preset, fields, config.order,
                                        config.substeps_per_unit);
  int workers = resolved_workers(config.workers);

  ExpansionProblem pb;
  pb.grid = grid;
  pb.flow = config.flow_kind == FlowKind::kAnalytic ? model.flow : model.numeric_flow;
  pb.expansion = model.expansion;
  pb.initial_function = initial_function(config.initial, config.preset, grid->dims());
  pb.initial = ScalarField::sample(grid, pb.initial_function);
  pb.horizon = config.horizon;

  EngineOptions opt;
  opt.order = config.order;
  opt.checkpoints = config.checkpoints;
  opt.workers = workers;
  // Pointwise a~_0 keeps the final V_0 free of drift interpolation error; it
  // is smooth in time, so one RK4 step per checkpoint interval suffices.
  opt.exact_retrace_drift = true;
  opt.trace_substeps = 1;
  if (config.trace) {
    for (int m = 1; m <= config.checkpoints; ++m) opt.retain_checkpoints.push_back(m);
  }
  ExpansionState state = build_expansion(pb, opt);
  double T = config.horizon;

  ConvergenceReport report;
  report.engine_seconds = state.build_seconds();
  report.engine_norm_drift = state.norm_drift();
  double flow_residual = check_periodicity(*pb.flow, box_samples(*grid, 64, T));

  std::size_t ne = config.eps.size();
  int K = config.order;
  std::vector<std::vector<double>> errors(ne, std::vector<double>(K + 1, std::nan("")));
  std::vector<double> drift(ne, std::nan("")), ref_seconds(ne, 0.0);
  std::vector<std::string> failure(ne);

  int outer = std::max(1, std::min<int>(workers, static_cast<int>(ne)));
  int inner = std::max(1, workers / outer);
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t i = next++; i < ne; i = next++) {
      double eps = config.eps[i];
      try {
        auto start = std::chrono::steady_clock::now();
        StiffProblem sp;
        sp.eps = eps;
        sp.slow = slow_field_from_expansion(model.expansion, eps);
        sp.fast = model.fast;
        sp.theta = info.theta;
        sp.initial = pb.initial;
        sp.initial_function = pb.initial_function;
        sp.horizon = T;
        sp.n_fast = config.n_fast;
        sp.workers = inner;
        sp.memory_limit_bytes = config.memory_limit_bytes;
        const auto& times = state.times();
        sp.step_multiple = state.checkpoints();
        if (config.trace) sp.output_times.assign(times.begin() + 1, times.end());
        ReferenceSolution ref = solve_direct(sp);
        ref_seconds[i] = seconds_since(start);
        drift[i] = ref.norm_drift;
        for (int k = 0; k <= K; ++k) {
          double e = 0.0;
          for (std::size_t j = 0; j < ref.fields.size(); ++j) {
            double t = config.trace ? times[j + 1] : T;
            e = std::max(e, norm_of_difference(ref.fields[j], assemble(state, eps, k, t), config.norm));
          }
          errors[i][k] = e;
        }
      } catch (const ConfigError&) {
        throw;
      } catch (const std::exception& e) {
        failure[i] = e.what();
      }
    }
  };
  if (outer == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    std::exception_ptr first;
    std::mutex mu;
    for (int t = 0; t < outer; ++t) {
      threads.emplace_back([&]() {
        try {
          worker();
        } catch (...) {
          std::lock_guard<std::mutex> lock(mu);
          if (!first) first = std::current_exception();
          next = ne;
        }
      });
    }
    for (auto& t : threads) t.join();
    if (first) std::rethrow_exception(first);
  }

  for (int k = 0; k <= K; ++k) {
    std::vector<double> e(ne);
    for (std::size_t i = 0; i < ne; ++i) e[i] = errors[i][k];
    report.fits.push_back(fit_slope(config.eps, e, k));
  }
  for (std::size_t i = 0; i < ne; ++i) {
    if (!failure[i].empty()) report.failures.push_back("eps=" + num(config.eps[i]) + ": " + failure[i]);
    for (int k = 0; k <= K; ++k) {
      ReportRow row;
      row.preset = info.name;
      row.K = k;
      row.eps = config.eps[i];
      row.norm = norm_name(config.norm);
      row.error = errors[i][k];
      const SlopeFit& f = report.fits[k];
      if (f.reliable) row.slope = f.slope;
      if (f.points >= 2) row.r_squared = f.r_squared;
      double wc = 0.0;
      for (int j = 1; j <= k; ++j) wc = std::max(wc, state.w_closure_residual(j));
      row.w_closure_residual = wc;
      row.flow_residual = flow_residual;
      row.norm_drift = drift[i];
      if (config.record_timings) {
        row.engine_seconds = report.engine_seconds;
        row.reference_seconds = ref_seconds[i];
      }
      report.rows.push_back(row);
    }
  }
  std::stable_sort(report.rows.begin(), report.rows.end(), [](const ReportRow& a, const ReportRow& b) {
    if (a.eps != b.eps) return a.eps > b.eps;
    return a.K < b.K;
  });
  return report;
}

// ---------------------------------------------------------------------------

std::string format_report(const ConvergenceReport& report) {
  std::string out = kReportHeader;
  out += '\n';
  for (const auto& r : report.rows) {
    out += r.preset + ',' + std::to_string(r.K) + ',' + num(r.eps) + ',' + r.norm + ',' +
           num(r.error) + ',' + opt_num(r.slope) + ',' + opt_num(r.r_squared) + ',' +
           num(r.w_closure_residual) + ',' + num(r.flow_residual) + ',' + num(r.norm_drift) + ',' +
           opt_num(r.engine_seconds) + ',' + opt_num(r.reference_seconds) + '\n';
  }
  return out;
}

void write_report(const ConvergenceReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << format_report(report);
  out.flush();
  if (!out) throw IoError("failed writing '" + path + "'");
}

ConvergenceReport parse_report(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != kReportHeader) {
    throw InputError("report line 1: unexpected header");
  }
  ConvergenceReport report;
  int n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    auto f = split(line, ',');
    if (f.size() != 12) {
      throw InputError("report line " + std::to_string(n) + ": expected 12 fields, got " +
                       std::to_string(f.size()));
    }
    ReportRow r;
    r.preset = f[0];
    r.K = static_cast<int>(parse_double(f[1], n));
    r.eps = parse_double(f[2], n);
    r.norm = f[3];
    r.error = parse_double(f[4], n);
    r.slope = parse_optional(f[5], n);
    r.r_squared = parse_optional(f[6], n);
    r.w_closure_residual = parse_double(f[7], n);
    r.flow_residual = parse_double(f[8], n);
    r.norm_drift = parse_double(f[9], n);
    r.engine_seconds = parse_optional(f[10], n);
    r.reference_seconds = parse_optional(f[11], n);
    report.rows.push_back(r);
  }
  return report;
}

ConvergenceReport read_report(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_report(ss.str());
}

// ---------------------------------------------------------------------------

bool InvariantLedger::all_passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const InvariantCheck& c) { return c.passed; });
}

InvariantCheck divergence_check(const OscillatingExpansion& expansion, const TensorGrid& grid,
                                double horizon, double tolerance) {
  DivergenceReport rep = check_divergence(expansion, grid, horizon);
  std::string detail;
  if (rep.order >= 0 && !(rep.max_divergence <= tolerance)) {
    detail = "order " + std::to_string(rep.order) + " at x=" + point_text(rep.where) +
             ", t=" + num(rep.t) + ", tau=" + num(rep.tau);
  }
  return make_check("divergence", rep.max_divergence, tolerance, detail);
}

InvariantLedger run_invariants(const InvariantConfig& config) {
  const PresetInfo& info = preset_info(config.preset);
  PresetFields storage;
  const PresetFields& fields = fields_or_default(config.fields, storage, config.preset);
  int points = config.points > 0 ? config.points : (config.preset == PresetId::kBeam ? 64 : 16);
  GridPtr grid = make_grid(default_axes(config.preset, points), config.tau_points, info.theta);
  LimitModel model = preset_limit_model(config.preset, fields, 1);
  int workers = resolved_workers(config.workers);

  InvariantLedger ledger;
  ledger.preset = info.name;
  auto& checks = ledger.checks;

  auto samples = box_samples(*grid, 64, config.horizon);
  std::vector<double> taus{0.37, 1.9, 3.3, 5.1};
  checks.push_back(make_check("flow_closure_analytic", check_periodicity(*model.flow, samples), 1e-12));
  checks.push_back(make_check("flow_det_analytic", volume_defect(*model.flow, samples, taus), 1e-12));
  checks.push_back(make_check("flow_inverse_analytic", inverse_defect(*model.flow, samples, taus), 1e-12));
  checks.push_back(
      make_check("flow_closure_numeric", check_periodicity(*model.numeric_flow, samples), 1e-6));
  checks.push_back(make_check("flow_det_numeric", volume_defect(*model.numeric_flow, samples, taus), 1e-6));
  double agree = 0.0;
  for (const auto& s : samples) {
    for (double tau : taus) {
      agree = std::max(agree, (model.flow->map(tau, s.x, s.t, 0.0) -
                               model.numeric_flow->map(tau, s.x, s.t, 0.0)).norm());
    }
  }
  checks.push_back(make_check("flow_agreement", agree, 1e-6));
  if (config.preset == PresetId::kFLR4D) {
    bool r1 = flr_R1(kTwoPi) == Mat3::Zero() && flr_R1(0.0) == Mat3::Zero();
    bool r2 = flr_R2(kTwoPi) == Mat3::Identity() && flr_R2(0.0) == Mat3::Identity();
    checks.push_back(make_check("flr_R1_period", r1 ? 0.0 : 1.0, 0.0));
    checks.push_back(make_check("flr_R2_period", r2 ? 0.0 : 1.0, 0.0));
  }
  checks.push_back(divergence_check(model.expansion, *grid, config.horizon));

  ExpansionProblem pb;
  pb.grid = grid;
  pb.flow = model.flow;
  pb.expansion = model.expansion;
  pb.initial = sample_initial(config.initial, config.preset, grid);
  pb.horizon = config.horizon;

  ExpansionContext ctx(pb);
  VectorField at = ctx.a_tilde_field(0, 0.0, workers);
  double op = 0.0;
  for (std::size_t i = 0; i < grid->size(); ++i) {
    Point d = at.at(i) - closed_a_tilde(config.preset, fields, grid->node(i), grid->tau_points());
    op = std::max(op, d.cwiseAbs().maxCoeff());
  }
  checks.push_back(make_check("averaged_operator", op, 1e-10));

  EngineOptions opt;
  opt.order = 1;
  opt.checkpoints = config.checkpoints;
  opt.workers = workers;
  ExpansionEngine engine(pb, opt);
  engine.solve_order(0);
  double closure = 0.0;
  for (int m = 0; m <= config.checkpoints; ++m) {
    closure = std::max(closure, engine.compute_W(1, m)->relative_closure());
  }
  checks.push_back(make_check("w_closure", closure, 1e-6));
  {
    int m = config.checkpoints / 2;
    auto a = engine.compute_W(1, m);
    auto b = specialized_W(model, engine, 1, m);
    double d = 0.0;
    for (int l = 0; l < a->tau_points(); ++l) {
      for (std::size_t i = 0; i < a->nodes(); ++i) {
        d = std::max(d, std::abs(a->slice(l)[i] - b->slice(l)[i]));
      }
    }
    checks.push_back(make_check("preset_corrector", d, 1e-6));
  }
  checks.push_back(make_check("engine_norm_drift", engine.state().norm_drift(), 0.01));

  StiffProblem sp;
  sp.eps = config.eps;
  sp.slow = slow_field_from_expansion(model.expansion, config.eps);
  sp.fast = model.fast;
  sp.theta = info.theta;
  sp.initial = pb.initial;
  sp.horizon = config.horizon;
  sp.workers = workers;
  // Whole fast periods, where the gyration returns mass that left the box.
  double period = config.eps * info.theta;
  for (int n = 1; n * period <= config.horizon * (1.0 + 1e-12); ++n) {
    sp.output_times.push_back(n * period);
  }
  if (sp.output_times.empty()) throw ConfigError("invariants: horizon is shorter than one period");
  checks.push_back(make_check("reference_norm_drift", solve_direct(sp).norm_drift, 0.01));
  return ledger;
}

// ---------------------------------------------------------------------------

SourceOracleReport run_source_oracle(const SourceOracleConfig& c) {
  if (c.eps.size() < 2) throw ConfigError("source oracle: needs at least two eps values");
  int workers = resolved_workers(c.workers);
  double a = c.amplitude, T = c.horizon;
  auto grid = make_grid(default_axes(PresetId::kBeam, c.points), c.tau_points, kTwoPi);

  PresetFields fields;
  FieldForm e;
  e.kind = FormKind::kMode;
  e.amplitude = a;
  e.mode = 1;
  fields.orders.push_back({e});
  LimitModel model = preset_limit_model(PresetId::kBeam, fields, 0);

  auto psi = [](const Point& x) {
    double r = x[0] - 0.5, v = x[1];
    return std::exp(-(r * r + v * v) / 2.0);
  };
  auto grad_psi = [psi](const Point& x) {
    Point g(2);
    g << -(x[0] - 0.5), -x[1];
    return Point(g * psi(x));
  };
  auto rotate = [](double s, const Point& x) {
    Point y(2);
    y << x[0] * std::cos(s) + x[1] * std::sin(s), -x[0] * std::sin(s) + x[1] * std::cos(s);
    return y;
  };
  ScalarField g0 = ScalarField::sample(grid, psi);

  // H: dH/dt + a~_0 . grad H = -<dS/dt + alpha_0 . grad S>, H(0) = g0, with
  // S(t, tau, x) = (1 + t)(1 - cos tau) psi(x).
  ExpansionProblem pb;
  pb.grid = grid;
  pb.flow = model.flow;
  pb.expansion = model.expansion;
  pb.initial = g0;
  pb.horizon = T;
  ExpansionContext ctx(pb);
  int M = c.checkpoints;
  std::vector<double> times(M + 1);
  for (int m = 0; m <= M; ++m) times[m] = T * m / M;
  std::vector<VectorField> drift{ctx.a_tilde_field(0, 0.0, workers)};
  std::vector<ScalarField> sources;
  int nt = grid->tau_points();
  for (int m = 0; m <= M; ++m) {
    double t = times[m];
    sources.push_back(ScalarField::sample(
        grid,
        [&](const Point& x) {
          double acc = 0.0;
          Point gp = grad_psi(x);
          double p = psi(x);
          for (int l = 0; l < nt; ++l) {
            double tau = grid->tau(l);
            double w = 1.0 - std::cos(tau);
            acc += w * p + (1.0 + t) * w * ctx.alpha(0, t, tau, x).dot(gp);
          }
          return -acc / nt;
        },
        workers));
  }
  std::vector<ScalarField> H = solve_transport(drift, sources, g0, times, workers);

  SourceOracleReport out;
  for (double eps : c.eps) {
    StiffProblem sp;
    sp.eps = eps;
    sp.slow = [a, eps](double t, const Point&) {
      Point s(2);
      s << 0.0, a * std::cos(t / eps);
      return s;
    };
    sp.fast = model.fast;
    sp.theta = kTwoPi;
    sp.initial = g0;
    sp.horizon = T;
    sp.n_fast = c.n_fast;
    sp.workers = workers;
    sp.output_times.assign(times.begin() + 1, times.end());
    sp.step_multiple = M;
    SourceField f = [eps, psi, rotate](double t, const Point& x) {
      double tau = t / eps;
      return (1.0 + t) * std::sin(tau) * psi(rotate(-tau, x));
    };
    ReferenceSolution ref = solve_direct_with_source(sp, f);
    // The gap carries an eps sin(t/eps) factor, so take the sup over time.
    double worst = 0.0;
    for (int m = 0; m < M; ++m) {
      const ScalarField& g = ref.fields[m];
      double t = ref.times[m], tau = t / eps;
      ScalarField h = ScalarField::sample(
          grid,
          [&](const Point& y) {
            return interpolate(g, rotate(tau, y)) - (1.0 + t) * (1.0 - std::cos(tau)) * psi(y);
          },
          workers);
      worst = std::max(worst, norm_of_difference(h, H[m + 1]));
    }
    out.eps.push_back(eps);
    out.distance.push_back(worst);
  }
  out.fit = fit_slope(out.eps, out.distance);
  return out;
}

}  // namespace twoscale
