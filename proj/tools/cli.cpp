#include "cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <optional>

#include "twoscale/config.hpp"
#include "twoscale/errors.hpp"
#include "twoscale/flow.hpp"
#include "twoscale/harness.hpp"
#include "twoscale/models.hpp"
#include "twoscale/parallel.hpp"

namespace twoscale::cli {
namespace {

// --workers wins over TS_WORKERS; both must be positive integers.
int resolve_workers(int flag) {
  if (flag > 0) return flag;
  const char* env = std::getenv("TS_WORKERS");
  if (env == nullptr || *env == '\0') return 0;
  char* end = nullptr;
  long n = std::strtol(env, &end, 10);
  if (*end != '\0' || n <= 0 || n > 4096) {
    throw ConfigError(std::string("TS_WORKERS must be a positive integer, got '") + env + "'");
  }
  return static_cast<int>(n);
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3e", v);
  return buf;
}

int cmd_presets(std::ostream& out) {
  out << std::left << std::setw(7) << "name" << std::setw(6) << "dims" << std::setw(10) << "theta"
      << std::setw(14) << "variables" << std::setw(12) << "fields" << "description\n";
  for (const auto& p : preset_catalog()) {
    std::string comps;
    for (const auto& c : p.components) comps += (comps.empty() ? "" : ",") + c;
    char theta[32];
    std::snprintf(theta, sizeof(theta), "%.6f", p.theta);
    out << std::setw(7) << p.name << std::setw(6) << p.dims << std::setw(10) << theta
        << std::setw(14) << p.variables << std::setw(12) << comps << p.description << "\n";
  }
  return kExitOk;
}

int cmd_run(const std::string& config_path, const std::string& out_dir, int workers,
            std::ostream& out, std::ostream& err) {
  RunConfig cfg = load_run_config(config_path);
  cfg.sweep.workers = workers;
  std::string dir = out_dir.empty() ? cfg.output_directory : out_dir;
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory '" + dir + "': " + ec.message());

  ConvergenceReport report = run_sweep(cfg.sweep);
  std::string path = (std::filesystem::path(dir) / "report.csv").string();
  write_report(report, path);

  const PresetInfo& info = preset_info(cfg.sweep.preset);
  out << info.name << ": " << cfg.sweep.eps.size() << " eps values, K <= " << cfg.sweep.order
      << ", report " << path << "\n";
  for (const auto& f : report.fits) {
    out << "  K=" << f.K << "  slope ";
    if (f.points >= 2) {
      out << std::fixed << std::setprecision(3) << f.slope << "  R^2 " << f.r_squared
          << std::defaultfloat << (f.reliable ? "" : "  (unreliable)")
          << (f.dropped_largest ? "  (largest eps dropped)" : "");
    } else {
      out << "n/a";
    }
    out << "  expected " << f.K + 1 << "\n";
  }
  for (const auto& f : report.failures) err << "failed: " << f << "\n";
  return report.failures.empty() ? kExitOk : kExitCheckFailed;
}

int cmd_check(const std::string& preset, const std::string& config_path, int points, int workers,
              std::ostream& out) {
  InvariantConfig ic;
  ic.preset = parse_preset(preset);
  ic.points = points;
  ic.workers = workers;
  if (!config_path.empty()) {
    RunConfig cfg = load_run_config(config_path);
    if (cfg.sweep.preset != ic.preset) {
      throw ConfigError(config_path + ": preset is " + preset_info(cfg.sweep.preset).name +
                        ", not " + preset);
    }
    ic.fields = cfg.sweep.fields;
    ic.initial = cfg.sweep.initial;
  }
  InvariantLedger ledger = run_invariants(ic);
  for (const auto& c : ledger.checks) {
    out << (c.passed ? "PASS  " : "FAIL  ") << std::left << std::setw(24) << c.name << fmt(c.value)
        << " <= " << fmt(c.tolerance);
    if (!c.detail.empty()) out << "  " << c.detail;
    out << "\n";
  }
  out << ledger.preset << ": " << (ledger.all_passed() ? "all checks passed" : "checks failed")
      << "\n";
  return ledger.all_passed() ? kExitOk : kExitCheckFailed;
}

int cmd_flow_test(const std::string& preset, double tol, int substeps, std::ostream& out) {
  if (!(tol > 0.0) || !std::isfinite(tol)) throw ConfigError("--tol must be positive");
  if (substeps < 8) throw ConfigError("--substeps must be at least 8");
  PresetId id = parse_preset(preset);
  LimitModel model = preset_limit_model(id, default_preset_fields(id), 0, substeps);
  auto grid = make_grid(default_axes(id, 16), 16, model.theta);
  auto samples = box_samples(*grid, 64, 1.0);
  std::vector<double> taus{0.37, 1.9, 3.3, 5.1};
  bool ok = true;
  for (const auto& flow : {model.flow, model.numeric_flow}) {
    const char* kind = flow->kind() == FlowKind::kAnalytic ? "analytic" : "numeric";
    double closure = check_periodicity(*flow, samples);
    double det = volume_defect(*flow, samples, taus);
    double inv = inverse_defect(*flow, samples, taus);
    bool pass = closure <= tol && det <= tol && inv <= tol;
    ok = ok && pass;
    out << (pass ? "PASS  " : "FAIL  ") << std::left << std::setw(9) << kind << "closure "
        << fmt(closure) << "  |det-1| " << fmt(det) << "  inverse " << fmt(inv) << "\n";
  }
  return ok ? kExitOk : kExitCheckFailed;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Two-scale expansion engine and convergence harness", "twoscale"};
  app.require_subcommand(1);
  int workers = 0;
  app.add_option("--workers", workers, "Worker threads (default: TS_WORKERS, then all cores)")
      ->check(CLI::PositiveNumber);

  std::string config_path, out_dir, preset;
  double tol = 1e-6;
  int points = 0, substeps = 64;

  auto* run_cmd = app.add_subcommand("run", "Run a convergence sweep from a config file");
  run_cmd->add_option("--config", config_path, "Config file")->required();
  run_cmd->add_option("--out", out_dir, "Output directory (default: [output] directory)");

  auto* check_cmd = app.add_subcommand("check", "Run the invariant suite for a preset");
  check_cmd->add_option("--preset", preset, "beam, gc4d or flr4d")->required();
  check_cmd->add_option("--config", config_path, "Take fields and initial data from a config");
  check_cmd->add_option("--points", points, "Grid points per axis (default: 64 beam, 16 in 4D)")
      ->check(CLI::Range(8, 256));

  auto* flow_cmd = app.add_subcommand("flow-test", "Check closure and volume of the preset flows");
  flow_cmd->add_option("--preset", preset, "beam, gc4d or flr4d")->required();
  flow_cmd->add_option("--tol", tol, "Tolerance (default 1e-6)");
  flow_cmd->add_option("--substeps", substeps, "RK4 substeps per unit tau (default 64)");

  auto* presets_cmd = app.add_subcommand("presets", "List the preset catalog");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfigError;
  }

  try {
    int w = resolve_workers(workers);
    if (w > 0) set_default_workers(w);
    if (*presets_cmd) return cmd_presets(out);
    if (*run_cmd) return cmd_run(config_path, out_dir, w, out, err);
    if (*check_cmd) return cmd_check(preset, config_path, points, w, out);
    if (*flow_cmd) return cmd_flow_test(preset, tol, substeps, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitCheckFailed;
  }
  return kExitConfigError;
}

}  // namespace twoscale::cli
