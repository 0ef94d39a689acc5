import math

import pytest

import twoscale


def test_presets_catalog():
    names = [p["name"] for p in twoscale.presets()]
    assert names == ["beam", "gc4d", "flr4d"]
    assert math.isclose(twoscale.presets()[0]["theta"], 2 * math.pi)


def test_parse_number_and_errors():
    assert twoscale.parse_number("1/16") == 0.0625
    with pytest.raises(twoscale.ConfigError):
        twoscale.parse_number("abc")
    assert issubclass(twoscale.ConfigError, twoscale.Error)


def test_fit_slope_recovers_power():
    eps = [1 / 8, 1 / 16, 1 / 32, 1 / 64]
    fit = twoscale.fit_slope(eps, [3 * e**2 for e in eps], K=1)
    assert fit.slope == pytest.approx(2.0, abs=1e-12)
    assert fit.reliable


def test_config_validation():
    c = twoscale.SweepConfig()
    c.eps = [0.125, 0.0]
    with pytest.raises(twoscale.ConfigError, match="eps"):
        c.validate()
    with pytest.raises(twoscale.ConfigError):
        c.preset = "tokamak"


def test_small_beam_sweep():
    c = twoscale.SweepConfig()
    c.preset = "beam"
    c.fields = [["gaussian_mode c=1 m=1 w=2"]]
    c.order = 1
    c.eps = [1 / 8, 1 / 16]
    c.horizon = 0.5
    c.points = 32
    c.tau_points = 16
    c.checkpoints = 4
    c.n_fast = 32
    report = twoscale.run_sweep(c)
    assert not report.failures
    assert len(report.rows) == 4
    assert all(math.isfinite(r["error"]) for r in report.rows)
    csv = report.to_csv().splitlines()
    assert csv[0].startswith("preset,K,eps,norm,error")
    assert len(csv) == 5
    assert twoscale.run_sweep(c).to_csv() == report.to_csv()


def test_report_round_trip(tmp_path):
    c = twoscale.SweepConfig()
    c.eps = [1 / 8, 1 / 16]
    c.horizon = 0.25
    c.points = 24
    c.tau_points = 16
    c.checkpoints = 2
    c.n_fast = 32
    report = twoscale.run_sweep(c)
    path = tmp_path / "report.csv"
    report.write(str(path))
    back = twoscale.read_report(str(path))
    assert [r["error"] for r in back.rows] == [r["error"] for r in report.rows]


def test_beam_invariants_pass():
    checks = twoscale.run_invariants("beam", points=32)
    assert checks
    failed = [c["name"] for c in checks if not c["passed"]]
    assert not failed
