import json

import numpy as np
import pytest
from sklearn.base import clone

from fracpme.grid import Field, make_grid, mass, norm_lp
from fracpme.operators import FracParams
from fracpme.resolvent import (
    NonConvergence,
    Resolvent,
    ResolventOptions,
    SolveReport,
    fixed_point_resolvent,
    resolvent,
    resolvent_linear,
    t_contraction_gap,
)
from fracpme.semigroup import Schedule, evolve

MODES = ("symbol", "kernel-torus", "kernel-freespace", "dirichlet")
BOUNDARY = {"symbol": "torus", "kernel-torus": "torus", "kernel-freespace": "freespace", "dirichlet": "dirichlet"}


def bump(g, amp=1.0, w=1.0):
    x = g.axis()
    v = amp * np.maximum(1 - (x / w) ** 2, 0.0) ** 2
    if g.dim == 2:
        v = np.outer(v, v)
    return Field(g, v)


def test_m1_matches_closed_form():
    g = make_grid(1, 4.0, 64)
    f = bump(g)
    u, rep = resolvent(f, 0.1, FracParams(1, 0.8, 1.0))
    assert rep.converged
    assert np.allclose(u.values, resolvent_linear(f, 0.1, 0.8).values, atol=1e-12)


@pytest.mark.parametrize("mode", MODES)
@pytest.mark.parametrize("m", (0.5, 1.0, 2.0))
def test_positive_and_bounded(mode, m):
    g = make_grid(1, 4.0, 48, BOUNDARY[mode])
    f = bump(g, 2.0)
    u, rep = resolvent(f, 0.2, FracParams(1, 1.0, m), mode)
    assert rep.converged
    assert u.values.min() >= -1e-13
    assert norm_lp(u, np.inf) <= norm_lp(f, np.inf) + 1e-12


@pytest.mark.parametrize("m", (0.4, 1.0, 2.5))
def test_mass_identity_on_torus(m):
    # integral of A(...) vanishes on the torus
    g = make_grid(1, 4.0, 64)
    f = bump(g)
    u, _ = resolvent(f, 0.3, FracParams(1, 1.3, m), "kernel-torus")
    assert mass(u) == pytest.approx(mass(f), abs=1e-12)


@pytest.mark.parametrize("m", (0.5, 2.0))
def test_delta_datum_against_fixed_point(m):
    # [DERIVED] independent linearly preconditioned fixed-point solver
    g = make_grid(1, 2.0, 32)
    v = np.zeros(32)
    v[16] = 1.0 / g.spacing
    f = Field(g, v)
    p = FracParams(1, 1.0, m)
    u, _ = resolvent(f, 0.05, p, "kernel-torus", ResolventOptions(residual_tol_abs=1e-13))
    w, iters = fixed_point_resolvent(f, 0.05, p, "kernel-torus", tol=1e-14)
    assert iters > 1
    assert np.max(np.abs(u.values - w.values)) <= 1e-9 * np.max(u.values)


@pytest.mark.parametrize("mode", ("kernel-torus", "kernel-freespace"))
@pytest.mark.parametrize("m", (0.5, 1.0, 3.0))
def test_t_contraction(mode, m, rng):
    g = make_grid(1, 4.0, 48, BOUNDARY[mode])
    p = FracParams(1, 0.7, m)
    for _ in range(3):
        g1 = Field(g, np.abs(rng.standard_normal(48)) * bump(g, 1, 3).values)
        g2 = Field(g, np.abs(rng.standard_normal(48)) * bump(g, 1, 3).values)
        assert t_contraction_gap(g1, g2, 0.1, p, mode) <= 1e-12


def test_two_dimensional_step():
    g = make_grid(2, 3.0, 16)
    f = bump(g)
    u, rep = resolvent(f, 0.1, FracParams(2, 1.0, 2.0))
    assert rep.converged and u.values.min() > 0
    assert mass(u) == pytest.approx(mass(f), rel=1e-12)


def test_rejects_nan_and_bad_tau():
    g = make_grid(1, 1.0, 16)
    v = np.ones(16)
    v[3] = np.nan
    with pytest.raises(ValueError, match="finite"):
        resolvent(Field(g, v), 0.1, FracParams(1, 1.0, 2.0))
    # overflow inside Newton surfaces as a floating-point error, not a silent NaN
    with np.errstate(all="ignore"), pytest.raises(FloatingPointError):
        resolvent(Field(g, np.full(16, 1e200)), 1e10, FracParams(1, 1.0, 4.0))
    with pytest.raises(ValueError):
        resolvent(Field(g, np.ones(16)), 0.0, FracParams(1, 1.0, 2.0))
    with pytest.raises(ValueError):
        ResolventOptions(max_newton_iters=0)
    with pytest.raises(ValueError):
        ResolventOptions(residual_tol_abs=-1)


def test_nonconvergence_carries_partial_trajectory():
    g = make_grid(1, 2.0, 32)
    f = bump(g, 50.0, 0.5)
    opts = ResolventOptions(max_newton_iters=1, residual_tol_abs=1e-14)
    with pytest.raises(NonConvergence) as info:
        evolve(f, Schedule(1.0, 4), FracParams(1, 1.0, 3.0), opts=opts)
    err = info.value
    assert err.partial.status == "failed"
    assert not err.report.converged
    assert err.partial.times[-1] > 0


def test_report_json_roundtrip():
    g = make_grid(1, 2.0, 16)
    _, rep = resolvent(bump(g), 0.1, FracParams(1, 1.0, 2.0))
    d = json.loads(rep.to_json())
    assert d["converged"] and d["variable"] == "u"
    assert d["residual"] <= 1e-10
    assert d["residual_history"][0] >= d["residual_history"][-1]
    assert SolveReport(**d).to_dict() == d


def test_estimator_interface():
    g = make_grid(1, 2.0, 16)
    est = Resolvent(tau=0.1, sigma=1.0, m=0.5, mode="symbol")
    assert clone(est).get_params() == est.get_params()
    est.fit(g)
    f = bump(g)
    u = est.transform(f)
    assert isinstance(u, Field)
    batch = est.transform(np.stack([f.flat, 2 * f.flat]))
    assert batch.shape == (2, 16)
    assert np.allclose(batch[0], u.flat)
    assert est.reports_[0].variable == "w"
    with pytest.raises(ValueError):
        est.transform(np.ones((2, 5)))
    with pytest.raises(TypeError):
        Resolvent().fit(np.ones(3))
