#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "twoscale/errors.hpp"
#include "twoscale/harness.hpp"

using namespace twoscale;

namespace {

SweepConfig small_beam_sweep() {
  SweepConfig c;
  c.preset = PresetId::kBeam;
  c.order = 1;
  c.eps = {1.0 / 8, 1.0 / 16, 1.0 / 32};
  c.points = 48;
  c.tau_points = 16;
  c.checkpoints = 8;
  c.n_fast = 32;
  c.horizon = 0.5;
  c.workers = 2;
  return c;
}

}  // namespace

TEST(FitSlope, RecoversPowerLaw) {
  std::vector<double> eps{1.0 / 8, 1.0 / 16, 1.0 / 32, 1.0 / 64, 1.0 / 128};
  std::vector<double> err;
  for (double e : eps) err.push_back(3.0 * e * e);
  SlopeFit f = fit_slope(eps, err, 1);
  EXPECT_EQ(f.K, 1);
  EXPECT_NEAR(f.slope, 2.0, 1e-12);
  EXPECT_NEAR(f.r_squared, 1.0, 1e-12);
  EXPECT_TRUE(f.reliable);
  EXPECT_FALSE(f.dropped_largest);
}

TEST(FitSlope, DropsLargestEpsWhenItSpoilsTheFit) {
  std::vector<double> eps{1.0 / 8, 1.0 / 16, 1.0 / 32, 1.0 / 64, 1.0 / 128};
  std::vector<double> err{10.0, 1.0 / 16, 1.0 / 32, 1.0 / 64, 1.0 / 128};
  SlopeFit f = fit_slope(eps, err);
  EXPECT_TRUE(f.dropped_largest);
  EXPECT_TRUE(f.reliable);
  EXPECT_NEAR(f.slope, 1.0, 1e-12);
  EXPECT_EQ(f.points, 4);
}

TEST(FitSlope, SkipsNonFiniteAndTooFewPoints) {
  SlopeFit f = fit_slope({0.1, 0.05}, {std::nan(""), 0.01});
  EXPECT_EQ(f.points, 1);
  EXPECT_FALSE(f.reliable);
}

TEST(Report, EmptyReportIsHeaderOnly) {
  ConvergenceReport r;
  EXPECT_EQ(format_report(r), std::string(kReportHeader) + "\n");
  EXPECT_TRUE(parse_report(format_report(r)).rows.empty());
}

TEST(Report, RoundTripKeepsEveryField) {
  ConvergenceReport r;
  for (double eps : default_eps_list()) {
    for (int k = 0; k <= 1; ++k) {
      ReportRow row;
      row.preset = "beam";
      row.K = k;
      row.eps = eps;
      row.error = 0.1234567890123 * std::pow(eps, k + 1);
      row.slope = k + 1.0;
      row.r_squared = 0.999;
      row.w_closure_residual = 1e-17;
      row.flow_residual = 3e-16;
      row.norm_drift = 1e-4;
      if (k == 1) row.reference_seconds = 0.5;
      r.rows.push_back(row);
    }
  }
  std::string text = format_report(r);
  ConvergenceReport back = parse_report(text);
  ASSERT_EQ(back.rows.size(), 12u);
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    const auto& a = r.rows[i];
    const auto& b = back.rows[i];
    EXPECT_EQ(a.preset, b.preset);
    EXPECT_EQ(a.K, b.K);
    EXPECT_EQ(a.eps, b.eps);
    EXPECT_EQ(a.error, b.error);
    EXPECT_EQ(a.slope, b.slope);
    EXPECT_EQ(a.r_squared, b.r_squared);
    EXPECT_EQ(a.w_closure_residual, b.w_closure_residual);
    EXPECT_EQ(a.flow_residual, b.flow_residual);
    EXPECT_EQ(a.norm_drift, b.norm_drift);
    EXPECT_EQ(a.engine_seconds, b.engine_seconds);
    EXPECT_EQ(a.reference_seconds, b.reference_seconds);
  }
  EXPECT_EQ(format_report(back), text);
}

TEST(Report, FileRoundTripAndErrors) {
  auto path = std::filesystem::temp_directory_path() / "twoscale_report_test.csv";
  ConvergenceReport r;
  ReportRow row;
  row.preset = "gc4d";
  row.error = 0.5;
  r.rows.push_back(row);
  write_report(r, path.string());
  EXPECT_EQ(read_report(path.string()).rows.size(), 1u);
  std::filesystem::remove(path);
  EXPECT_THROW(read_report(path.string()), IoError);
  EXPECT_THROW(parse_report("bad header\n"), InputError);
  EXPECT_THROW(parse_report(std::string(kReportHeader) + "\nbeam,0,0.1\n"), InputError);
}

TEST(Sweep, ValidationNamesTheKey) {
  auto expect_key = [](SweepConfig c, const std::string& key) {
    try {
      validate(c);
      ADD_FAILURE() << "no error for " << key;
    } catch (const ConfigError& e) {
      EXPECT_NE(std::string(e.what()).find(key), std::string::npos) << e.what();
    }
  };
  SweepConfig c;
  c.eps = {0.1, 0.2};
  expect_key(c, "eps");
  c = SweepConfig{};
  c.eps = {};
  expect_key(c, "eps");
  c = SweepConfig{};
  c.order = 4;
  expect_key(c, "K");
  c = SweepConfig{};
  c.horizon = -1.0;
  expect_key(c, "T");
  c = SweepConfig{};
  c.tau_points = 4;
  expect_key(c, "tau_points");
  c = SweepConfig{};
  c.axes = {Axis{-1, 1, 16}};
  expect_key(c, "bounds");
  EXPECT_NO_THROW(validate(SweepConfig{}));
}

TEST(Sweep, SmallBeamSweepReportsEveryRow) {
  SweepConfig c = small_beam_sweep();
  ConvergenceReport r = run_sweep(c);
  ASSERT_EQ(r.rows.size(), 6u);
  ASSERT_EQ(r.fits.size(), 2u);
  EXPECT_TRUE(r.failures.empty());
  for (const auto& row : r.rows) {
    EXPECT_EQ(row.preset, "beam");
    EXPECT_EQ(row.norm, "2");
    EXPECT_TRUE(std::isfinite(row.error));
    EXPECT_GT(row.error, 0.0);
    EXPECT_LE(row.flow_residual, 1e-12);
    EXPECT_LE(row.norm_drift, 0.01);
    EXPECT_FALSE(row.engine_seconds.has_value());
  }
  EXPECT_EQ(r.rows[0].eps, 1.0 / 8);
  EXPECT_EQ(r.rows[0].K, 0);
  EXPECT_EQ(r.rows[1].K, 1);
  // The first-order correction helps at the smallest eps.
  EXPECT_LT(r.error(1, 1.0 / 32), r.error(0, 1.0 / 32));
  EXPECT_THROW(r.error(2, 1.0 / 32), InputError);
}

TEST(Sweep, RepeatedRunsWriteIdenticalReports) {
  SweepConfig c = small_beam_sweep();
  c.order = 0;
  c.eps = {1.0 / 8, 1.0 / 16};
  EXPECT_EQ(format_report(run_sweep(c)), format_report(run_sweep(c)));
  c.record_timings = true;
  auto r = run_sweep(c);
  EXPECT_TRUE(r.rows[0].engine_seconds.has_value());
  EXPECT_TRUE(r.rows[0].reference_seconds.has_value());
}

TEST(Invariants, BeamDefaultPasses) {
  InvariantConfig c;
  c.workers = 2;
  InvariantLedger l = run_invariants(c);
  EXPECT_EQ(l.preset, "beam");
  EXPECT_GE(l.checks.size(), 10u);
  for (const auto& k : l.checks) EXPECT_TRUE(k.passed) << k.name << " = " << k.value;
  EXPECT_TRUE(l.all_passed());
}

TEST(Invariants, DivergenceCheckReportsLocation) {
  OscillatingExpansion e;
  e.coefficients.push_back([](double, double, const Point& x) {
    Point p(2);
    p << x[0], 0.0;  // div = 1
    return p;
  });
  auto grid = make_grid(default_axes(PresetId::kBeam, 16), 16, 2.0 * std::acos(-1.0));
  InvariantCheck c = divergence_check(e, *grid, 1.0);
  EXPECT_FALSE(c.passed);
  EXPECT_NEAR(c.value, 1.0, 1e-6);
  EXPECT_NE(c.detail.find("order 0"), std::string::npos) << c.detail;
  EXPECT_NE(c.detail.find("x=("), std::string::npos) << c.detail;
}

TEST(SourceOracle, RejectsSingleEps) {
  SourceOracleConfig c;
  c.eps = {0.1};
  EXPECT_THROW(run_source_oracle(c), ConfigError);
}

TEST(SourceOracle, DistanceShrinksWithEps) {
  SourceOracleConfig c;
  c.eps = {1.0 / 8, 1.0 / 16, 1.0 / 32};
  c.points = 48;
  c.checkpoints = 32;
  c.workers = 2;
  auto r = run_source_oracle(c);
  ASSERT_EQ(r.distance.size(), 3u);
  EXPECT_LT(r.distance[1], r.distance[0]);
  EXPECT_LT(r.distance[2], r.distance[1]);
}
