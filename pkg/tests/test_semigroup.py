import json

import numpy as np
import pytest
from sklearn.base import clone

from fracpme.grid import Field, load_field, make_grid, norm_lp
from fracpme.operators import FracParams
from fracpme.reference import linear_solution
from fracpme.semigroup import CrandallLiggett, Schedule, evolve, refine_convergence, step


def bump(g, amp=1.0, w=1.0):
    x = g.axis()
    return Field(g, amp * np.maximum(1 - (x / w) ** 2, 0.0) ** 2)


def test_schedule():
    s = Schedule(2.0, 8)
    assert s.tau == 0.25
    assert list(s.snapshot_indices()) == list(range(9))
    idx = Schedule(1.0, 100, snapshots=5).snapshot_indices()
    assert idx[0] == 0 and idx[-1] == 100 and len(idx) <= 7
    assert s.ladder() == [8, 16, 32]
    for bad in ((0.0, 4), (1.0, 0), (1.0, 2.5)):
        with pytest.raises(ValueError):
            Schedule(*bad)


def test_zero_field_stays_zero():
    g = make_grid(1, 2.0, 16)
    tr = evolve(Field(g, np.zeros(16)), Schedule(1.0, 5), FracParams(1, 1.0, 2.0))
    assert len(tr) == 6
    assert all(np.all(f.values == 0) for f in tr.fields)


def test_m1_single_step_is_resolvent():
    g = make_grid(1, 4.0, 64)
    f = bump(g)
    tr = evolve(f, Schedule(0.1, 1), FracParams(1, 1.0, 1.0))
    w = np.fft.ifft(np.fft.fft(f.values) / (1 + 0.1 * np.abs(g.frequencies())))
    assert np.allclose(tr.final.values, w.real, atol=1e-12)


def test_local_error_is_second_order():
    # one step of tau vs two of tau/2 differ by O(tau^2)
    g = make_grid(1, 4.0, 64)
    f = bump(g, 1, 2)
    p = FracParams(1, 1.0, 2.0)
    d = []
    for tau in (0.04, 0.02, 0.01):
        one = evolve(f, Schedule(tau, 1), p).final
        two = evolve(f, Schedule(tau, 2), p).final
        d.append(norm_lp(one - two, 1))
    assert 1.8 < np.log2(d[0] / d[1]) < 2.2
    assert 1.8 < np.log2(d[1] / d[2]) < 2.2


def test_first_order_against_linear_solution():
    g = make_grid(1, 8.0, 64)
    f = bump(g, 1, 2)
    ref = linear_solution(f, 0.5, 1.0)
    r = refine_convergence(f, 0.5, FracParams(1, 1.0, 1.0), ladder=(16, 32, 64, 128), reference=ref)
    assert all(0.9 < o < 1.1 for o in r.error_orders)
    assert all(0.9 < o < 1.1 for o in r.orders)
    with pytest.raises(ValueError):
        refine_convergence(f, 0.5, FracParams(1, 1.0, 1.0), ladder=(16, 32))


@pytest.mark.parametrize("m", (0.5, 2.0))
def test_restart_is_consistent(m):
    # evolving to T then continuing equals one run of twice as many steps
    g = make_grid(1, 4.0, 48)
    f = bump(g)
    p = FracParams(1, 1.0, m)
    full = evolve(f, Schedule(1.0, 20), p)
    first = evolve(f, Schedule(0.5, 10), p)
    second = evolve(first.final, Schedule(0.5, 10), p)
    assert np.allclose(second.final.values, full.final.values, atol=1e-12)


def test_step_is_resolvent():
    g = make_grid(1, 4.0, 32)
    f = bump(g)
    u, rep = step(f, 0.1, FracParams(1, 1.0, 2.0))
    assert rep.converged
    assert np.allclose(u.values, evolve(f, Schedule(0.1, 1), FracParams(1, 1.0, 2.0)).final.values)


def test_comparison_along_orbit():
    g = make_grid(1, 4.0, 48, "freespace")
    f1 = bump(g, 1.0)
    f2 = bump(g, 1.5, 1.3)
    p = FracParams(1, 0.8, 0.6)
    t1 = evolve(f1, Schedule(1.0, 10), p, "kernel-freespace")
    t2 = evolve(f2, Schedule(1.0, 10), p, "kernel-freespace")
    for a, b in zip(t1.fields, t2.fields):
        assert np.all(a.values <= b.values + 1e-12)


def test_snapshot_subset_and_energy():
    g = make_grid(1, 4.0, 32)
    tr = evolve(bump(g), Schedule(1.0, 50, snapshots=4), FracParams(1, 1.0, 2.0))
    assert tr.steps[0] == 0 and tr.steps[-1] == 50
    assert len(tr) < 51
    assert np.all(np.diff(tr.energy) >= 0)
    assert tr.status == "complete"


def test_extinction_stops_early():
    g = make_grid(1, 3.0, 32, "dirichlet")
    tr = evolve(bump(g, 0.5), Schedule(5.0, 200), FracParams(1, 1.0, 0.3), "dirichlet")
    assert tr.status == "extinct"
    assert tr.times[-1] < 5.0


@pytest.mark.parametrize("fmt", ("bin", "csv"))
def test_save_trajectory(tmp_path, fmt):
    g = make_grid(1, 4.0, 32)
    tr = evolve(bump(g), Schedule(0.5, 5), FracParams(1, 1.0, 2.0))
    path = tr.save(tmp_path / "run", fmt)
    meta = json.loads(path.read_text())
    assert meta["times"] == tr.times
    assert len(meta["snapshots"]) == 6
    back = load_field(tmp_path / "run" / meta["snapshots"][-1], g)
    assert np.allclose(back.values, tr.final.values, rtol=0, atol=1e-15)


def test_estimator():
    g = make_grid(1, 4.0, 32)
    est = CrandallLiggett(sigma=1.0, m=2.0, T=0.5, n_steps=5)
    assert clone(est).get_params() == est.get_params()
    est.fit(g)
    f = bump(g)
    u = est.transform(f)
    assert np.allclose(u.values, evolve(f, Schedule(0.5, 5), FracParams(1, 1.0, 2.0)).final.values)
    assert est.transform(np.stack([f.flat, f.flat])).shape == (2, 32)
    assert est.trajectory_.times[-1] == pytest.approx(0.5)
