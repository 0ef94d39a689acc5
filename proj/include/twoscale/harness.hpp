#pragma once

#include <optional>
#include <string>
#include <vector>

#include "twoscale/engine.hpp"
#include "twoscale/models.hpp"
#include "twoscale/numerics.hpp"

namespace twoscale {

// Gaussian initial data amp * exp(-|x - center|^2 / (2 width^2)).
struct InitialData {
  std::vector<double> center;  // empty means the preset default
  double width = 1.0;
  double amplitude = 1.0;
};

std::vector<double> default_initial_center(PresetId preset);
InitialFunction initial_function(const InitialData& data, PresetId preset, int dims);
ScalarField sample_initial(const InitialData& data, PresetId preset, GridPtr grid);

std::vector<double> default_eps_list();

struct SweepConfig {
  PresetId preset = PresetId::kBeam;
  PresetFields fields;
  // Highest order; every K' <= K is reported.
  int order = 0;
  std::vector<double> eps = default_eps_list();
  Norm norm = Norm::kL2;
  double horizon = 1.0;
  // Error as the max over all checkpoint times instead of at T only.
  bool trace = false;

  // Resolution. Empty axes means default_axes(preset, points); points = 0
  // means 128 for the beam and 24 in 4D.
  std::vector<Axis> axes;
  int points = 0;
  int tau_points = 32;
  int checkpoints = 32;
  int n_fast = 64;
  FlowKind flow_kind = FlowKind::kAnalytic;
  int substeps_per_unit = 64;
  InitialData initial;

  int workers = 0;
  // Wall-clock columns are left empty unless set, so that repeated runs
  // write identical files.
  bool record_timings = false;
  double memory_limit_bytes = 4.0e9;
};

// ConfigError naming the offending key.
void validate(const SweepConfig& config);
GridPtr sweep_grid(const SweepConfig& config);

struct ReportRow {
  std::string preset;
  int K = 0;
  double eps = 0.0;
  std::string norm = "2";
  double error = 0.0;
  std::optional<double> slope;
  std::optional<double> r_squared;
  double w_closure_residual = 0.0;
  double flow_residual = 0.0;
  double norm_drift = 0.0;
  std::optional<double> engine_seconds;
  std::optional<double> reference_seconds;
};

struct SlopeFit {
  int K = 0;
  double slope = 0.0;
  double r_squared = 0.0;
  int points = 0;
  bool reliable = false;
  bool dropped_largest = false;
};

// Least squares on (log eps, log error) over the finite positive errors.
// Reliable when R^2 >= 0.98 with at least 4 points; otherwise the largest
// eps is dropped and the fit retried once.
SlopeFit fit_slope(const std::vector<double>& eps, const std::vector<double>& errors, int K = 0);

struct ConvergenceReport {
  std::vector<ReportRow> rows;  // eps descending, then K ascending
  std::vector<SlopeFit> fits;   // one per K
  // Per-eps failures ("eps=...: message"); the affected rows hold NaN.
  std::vector<std::string> failures;
  double engine_seconds = 0.0;
  double engine_norm_drift = 0.0;

  double error(int K, double eps) const;
};

ConvergenceReport run_sweep(const SweepConfig& config);

inline constexpr const char* kReportHeader =
    "preset,K,eps,norm,error,slope_fit,r_squared,w_closure_residual,flow_residual,norm_drift,"
    "engine_seconds,reference_seconds";

std::string format_report(const ConvergenceReport& report);
void write_report(const ConvergenceReport& report, const std::string& path);
// Rows only. IoError on unreadable files, InputError on malformed content.
ConvergenceReport read_report(const std::string& path);
ConvergenceReport parse_report(const std::string& text);

// ---------------------------------------------------------------------------

struct InvariantCheck {
  std::string name;
  bool passed = false;
  double value = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

struct InvariantLedger {
  std::string preset;
  std::vector<InvariantCheck> checks;
  bool all_passed() const;
};

struct InvariantConfig {
  PresetId preset = PresetId::kBeam;
  PresetFields fields;  // empty means default_preset_fields
  int points = 0;       // 0: 64 for the beam, 16 in 4D
  int tau_points = 16;
  int checkpoints = 4;
  double horizon = 0.5;
  double eps = 1.0 / 16;
  InitialData initial;
  int workers = 0;
};

// Sampled divergence of every coefficient; fails with the worst location.
InvariantCheck divergence_check(const OscillatingExpansion& expansion, const TensorGrid& grid,
                                double horizon, double tolerance = 1e-6);

// Flow closure/volume/inverse checks for both flows, divergence, averaged
// operators against the closed forms, order-one corrector closure and its
// preset-form cross-check, and norm conservation of both solvers. FLR adds the
// exact period closure of R_1 and R_2.
InvariantLedger run_invariants(const InvariantConfig& config);

// ---------------------------------------------------------------------------
// Source-term oracle on the beam preset: f_eps = F(t, t/eps, x) with
// F(t, tau, x) = (1 + t) sin(tau) psi(X(-tau; x)) (zero mean along the flow)
// and A_eps = (0, a cos(t/eps)). Compares h_eps(T, y) = g_eps(T, X(T/eps; y))
// - S(T, T/eps, y) with the limit H(T) from the averaged transport problem.

struct SourceOracleConfig {
  std::vector<double> eps{1.0 / 8, 1.0 / 16, 1.0 / 32, 1.0 / 64};
  double amplitude = 0.5;  // a
  double horizon = 1.0;
  int points = 128;
  int tau_points = 32;
  int checkpoints = 64;
  int n_fast = 64;
  int workers = 0;
};

struct SourceOracleReport {
  std::vector<double> eps;
  std::vector<double> distance;  // max over checkpoints of the L2 norm of h_eps - H
  SlopeFit fit;
};

SourceOracleReport run_source_oracle(const SourceOracleConfig& config);

}  // namespace twoscale
