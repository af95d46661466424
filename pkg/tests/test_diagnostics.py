import numpy as np
import pytest

from fracpme.citations import CITATIONS
from fracpme.diagnostics import (
    COLUMNS,
    DiagnosticsSeries,
    Verdict,
    check_comparison,
    check_extinction_time,
    check_homogeneity,
    check_l1_contraction,
    check_lp_monotone,
    check_mass,
    check_no_extinction,
    check_positivity,
    check_retention,
    check_time_derivative_bound,
    critical_mass_drift,
    detect_extinction,
    fit_smoothing_rate,
    mass_leak_scaling,
    parameter_continuity,
    run_diagnostics,
    smoothing_window,
    time_derivative_bound,
    verdicts_to_csv,
    verdicts_to_json,
)
from fracpme.grid import Field, make_grid
from fracpme.operators import FracParams
from fracpme.semigroup import Schedule, Trajectory, evolve


def bump(g, amp=1.0, w=1.0):
    x = g.axis()
    return Field(g, amp * np.maximum(1 - (x / w) ** 2, 0.0) ** 2)


def synthetic(g, arrays, params, times=None):
    # short rows are repeated to fill the grid
    times = times if times is not None else list(np.arange(len(arrays)) * 0.1)
    fields = [Field(g, np.resize(np.asarray(a, float), g.shape)) for a in arrays]
    return Trajectory(times, fields, [None] * len(fields), params, "symbol", 0.1,
                      steps=list(range(len(fields))), energy=[0.0] * len(fields))


@pytest.fixture(scope="module")
def run_m2():
    g = make_grid(1, 4.0, 64)
    p = FracParams(1, 1.0, 2.0)
    return evolve(bump(g), Schedule(1.0, 20), p, "kernel-torus")


def test_verdict_validation_and_serialization():
    with pytest.raises(ValueError):
        Verdict("x", True, 1.0, 1.0, "no.such.label")
    v = Verdict("x", np.bool_(True), np.float64(0.5), 1.0, "comparison", {"arr": np.arange(2)})
    assert v.passed is True
    assert v.line() == "[PASS] x: measured=0.5 tol=1"
    import json

    assert json.loads(verdicts_to_json([v]))[0]["details"]["arr"] == [0, 1]
    csv = verdicts_to_csv([v, Verdict("y", False, float("nan"), None, "positivity")])
    assert csv.splitlines()[0] == "name,pass,measured,tolerance,reference"
    assert csv.splitlines()[2].startswith("y,0,")


def test_series_roundtrip_bit_exact(run_m2):
    s = run_diagnostics(run_m2)
    back = DiagnosticsSeries.from_csv(s.to_csv())
    for c in COLUMNS:
        assert np.array_equal(back[c], s[c])
    head = s.to_loglog_csv().splitlines()[0].split(",")
    assert "log10_linf" in head and "log10_min" not in head
    with pytest.raises(ValueError):
        DiagnosticsSeries({c: [1.0, 1.0] for c in COLUMNS})


def test_series_columns(run_m2):
    s = run_diagnostics(run_m2)
    assert len(s) == 21
    assert np.all(s["l1"] == pytest.approx(s["mass"]))
    assert s.domain_length == 8.0
    assert np.all(np.diff(s["energy"]) >= 0)


def test_mass_torus(run_m2):
    v = check_mass(run_diagnostics(run_m2))
    assert v.passed and v.measured < 1e-12


def test_mass_window_branches():
    g = make_grid(1, 4.0, 64, "freespace")
    sub = evolve(bump(g), Schedule(1.0, 10), FracParams(1, 0.5, 1 / 3), "kernel-freespace")
    v = check_mass(run_diagnostics(sub))
    assert v.name == "mass-loss" and v.passed
    sup = evolve(bump(g), Schedule(1.0, 10), FracParams(1, 0.5, 2.0), "kernel-freespace")
    s = run_diagnostics(sup)
    assert not check_mass(s, tol=1e-12).passed  # the window leaks
    assert check_mass(s, tol=1e-12, flux_bound=0.2).passed


def test_mass_leak_scaling_m2():
    v = mass_leak_scaling(1.0, 2.0, radii=(25, 50, 100))
    assert v.passed
    assert v.measured == pytest.approx(-1.0, abs=0.05)
    with pytest.raises(ValueError):
        mass_leak_scaling(1.0, 0.3, dim=2)


def test_critical_drift_decreases():
    v = critical_mass_drift(radii=(4, 6, 8), h=0.5)
    assert v.passed


def test_lp_monotone_detects_growth():
    g = make_grid(1, 1.0, 8)
    p = FracParams(1, 1.0, 2.0)
    tr = synthetic(g, [np.ones(8), 0.9 * np.ones(8), 1.2 * np.ones(8)], p)
    assert not check_lp_monotone(tr, 2).passed
    assert check_lp_monotone(synthetic(g, [np.ones(8), 0.9 * np.ones(8)], p), np.inf).passed
    s = run_diagnostics(tr)
    assert not check_lp_monotone(s, 1).passed
    assert not check_lp_monotone(s, 3.0).passed  # m + 1 column
    with pytest.raises(ValueError):
        check_lp_monotone(s, 5.0)


def test_lp_monotone_on_run(run_m2):
    for p in (1, 1.5, 2, 3, np.inf):
        assert check_lp_monotone(run_m2, p).passed


def test_order_checks_detect_violations():
    g = make_grid(1, 1.0, 8)
    p = FracParams(1, 1.0, 2.0)
    a = synthetic(g, [[0, 0, 0, 0], [0, 0.5, 0, 0]], p)
    b = synthetic(g, [[1, 1, 1, 1], [0, 0, 0, 0]], p)
    assert not check_comparison(a, b).passed
    assert not check_l1_contraction(a, b).passed
    assert check_l1_contraction(b, a).passed
    with pytest.raises(ValueError):
        check_comparison(b, a)
    with pytest.raises(ValueError):
        check_comparison(a, synthetic(g, [[1, 1, 1, 1]], p))


def test_positivity():
    g = make_grid(1, 1.0, 8)
    p = FracParams(1, 1.0, 2.0)
    assert not check_positivity(synthetic(g, [[1, 0, 0, 0], [1, 0, 0.1, 0.1]], p)).passed
    # the datum itself may vanish somewhere
    assert check_positivity(synthetic(g, [[1, 0, 0, 0], [1, 0.1, 0.1, 0.1]], p)).passed
    assert check_positivity(synthetic(g, [[0, 0, 0, 0]], p)).details["vacuous"]
    with pytest.raises(ValueError):
        check_positivity(synthetic(g, [[-1, 0, 0, 0]], p))


def test_positivity_on_runs(run_m2):
    assert check_positivity(run_m2).passed
    g = make_grid(1, 3.0, 32, "dirichlet")
    tr = evolve(bump(g), Schedule(1.0, 10), FracParams(1, 1.0, 0.5), "dirichlet")
    assert check_positivity(tr).passed


def test_time_derivative_bound_formula_and_check(run_m2):
    assert time_derivative_bound(FracParams(1, 1.0, 3.0), 2.0, 1.0) == pytest.approx(0.5)
    assert time_derivative_bound(FracParams(2, 0.5, 1.0), 1.0, 1.0) == pytest.approx(8.0)
    assert check_time_derivative_bound(run_m2).passed
    g = make_grid(1, 1.0, 8)
    fast = synthetic(g, [[1, 1, 1, 1], [1, 1, 1, 1], [0, 0, 0, 0]], FracParams(1, 1.0, 2.0), times=[0, 0.1, 0.101])
    assert not check_time_derivative_bound(fast).passed


@pytest.mark.parametrize("m", (0.5, 1.0, 2.0))
def test_homogeneity_on_runs(m):
    g = make_grid(1, 4.0, 48)
    tr = evolve(bump(g), Schedule(1.0, 20), FracParams(1, 1.0, m), "kernel-torus")
    assert check_homogeneity(tr).passed


def test_homogeneity_detects_fast_decay():
    g = make_grid(1, 1.0, 8)
    tr = synthetic(g, [[1, 1, 1, 1], [1, 1, 1, 1], [0.1, 0.1, 0.1, 0.1]], FracParams(1, 1.0, 2.0))
    assert not check_homogeneity(tr).passed


def test_retention(run_m2):
    assert check_retention(run_m2).passed
    g = make_grid(1, 1.0, 8)
    tr = synthetic(g, [[1] * 4, [1] * 4, [0.1] * 4], FracParams(1, 1.0, 2.0))
    assert not check_retention(tr).passed
    with pytest.raises(ValueError):
        check_retention(synthetic(g, [[1] * 4], FracParams(1, 1.0, 0.5)))


def test_extinction_checks(run_m2):
    assert check_no_extinction(run_m2).passed
    g = make_grid(1, 1.0, 8)
    p = FracParams(1, 1.0, 0.5)
    tr = synthetic(g, [[1] * 4, [0.5] * 4, [0.0] * 4], p, times=[0.0, 0.5, 1.0])
    assert detect_extinction(tr) == 1.0
    assert check_extinction_time(tr, 1.05).passed
    assert not check_extinction_time(tr, 2.0).passed
    assert not check_no_extinction(tr).passed
    assert not check_extinction_time(synthetic(g, [[1] * 4, [1] * 4], p), 1.0).passed


def test_smoothing_window_and_rate():
    g = make_grid(1, 50.0, 512)
    x = g.axis()
    p = FracParams(1, 1.0, 2.0)
    f = Field(g, np.exp(-(x / 0.1) ** 2))
    tr = evolve(f, Schedule(20.0, 400, snapshots=60), p, "symbol")
    s = run_diagnostics(tr)
    w = smoothing_window(s)
    assert w is not None and w[0] >= 5 * s.tau
    v = fit_smoothing_rate(s)
    assert v.passed, v.to_dict()
    assert v.details["auto_window"]
    with pytest.raises(ValueError):
        fit_smoothing_rate(s, window=(19.9, 20.0))


def test_no_window_raises():
    g = make_grid(1, 2.0, 16)
    tr = evolve(bump(g, 1, 1.9), Schedule(0.1, 2), FracParams(1, 1.0, 2.0))
    s = run_diagnostics(tr)
    assert smoothing_window(s) is None
    with pytest.raises(ValueError):
        fit_smoothing_rate(s)


def test_parameter_continuity_in_m():
    g = make_grid(1, 4.0, 32)
    ladder = [FracParams(1, 1.0, m) for m in (1.4, 1.2, 1.1, 1.05, 1.0)]
    r = parameter_continuity(bump(g), ladder, 0.5, n=10)
    assert r.verdict.passed
    assert r.distances.shape == (5, 5)
    assert np.allclose(r.distances, r.distances.T)
    assert r.to_dict()["verdict"]["reference"] == "continuity.parameters"


def test_citation_labels_are_described():
    assert all(isinstance(v, str) and v for v in CITATIONS.values())
