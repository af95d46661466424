"""Implicit Euler (Crandall-Liggett) time stepping through the resolvent."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .grid import Field, Grid, as_field, norm_lp, save_field
from .resolvent import NonConvergence, ResolventOptions, SolveReport, get_operator, odd_power, resolvent
from .operators import FracParams

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Schedule:
    """``n`` uniform steps of size ``T/n``.

    ``snapshots=None`` keeps every step; an integer keeps that many
    geometrically spaced step indices (plus ``0`` and ``n``).
    """

    T: float
    n: int
    snapshots: int | None = None

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError(f"final time must be positive, got {self.T}")
        if int(self.n) != self.n or self.n < 1:
            raise ValueError(f"step count must be a positive integer, got {self.n}")

    @property
    def tau(self) -> float:
        return self.T / self.n

    def snapshot_indices(self) -> np.ndarray:
        if self.snapshots is None or self.snapshots >= self.n:
            return np.arange(self.n + 1)
        geo = np.geomspace(1, self.n, int(self.snapshots))
        return np.unique(np.concatenate([[0], np.round(geo).astype(int), [self.n]]))

    def ladder(self, levels=3, factor=2) -> list:
        return [self.n * factor**k for k in range(levels)]


@dataclass
class Trajectory:
    times: list
    fields: list
    reports: list
    params: FracParams
    mode: str
    tau: float
    steps: list = field(default_factory=list)
    energy: list = field(default_factory=list)
    status: str = "complete"

    def __len__(self):
        return len(self.times)

    @property
    def grid(self) -> Grid:
        return self.fields[0].grid

    @property
    def final(self) -> Field:
        return self.fields[-1]

    def values(self) -> np.ndarray:
        return np.stack([f.values for f in self.fields])

    def at(self, t) -> Field:
        i = int(np.argmin(np.abs(np.asarray(self.times) - t)))
        return self.fields[i]

    def save(self, directory, fmt="bin") -> Path:
        """Write one field file per snapshot plus ``trajectory.json``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        names = []
        for k, fld in enumerate(self.fields):
            name = f"snapshot_{k:05d}.{'csv' if fmt == 'csv' else 'bin'}"
            save_field(fld, directory / name)
            names.append(name)
        manifest = {
            "params": self.params.to_dict(),
            "mode": self.mode,
            "tau": self.tau,
            "status": self.status,
            "grid": self.grid.to_dict(),
            "times": [float(t) for t in self.times],
            "steps": [int(s) for s in self.steps],
            "snapshots": names,
            "reports": [r.to_dict() if r is not None else None for r in self.reports],
        }
        path = directory / "trajectory.json"
        path.write_text(json.dumps(manifest, indent=1))
        return path


def step(u_prev, tau, params, mode="symbol", opts=None, operator=None):
    return resolvent(u_prev, tau, params, mode, opts, operator)


def evolve(f, schedule: Schedule, params: FracParams, mode="symbol", opts=None,
           extinction_tol=None, operator=None, stop_on_extinction=True) -> Trajectory:
    """Run ``schedule.n`` implicit steps from ``f``.

    Stops early with status ``"extinct"`` once ``||u||_inf`` drops below
    ``extinction_tol`` (default ``1e-8 ||f||_inf``).  A failed Newton solve
    raises :class:`NonConvergence` carrying the partial trajectory.
    """
    opts = opts or ResolventOptions()
    if operator is None:
        operator = get_operator(f.grid, params.sigma, mode)
    f = as_field(operator.grid, f)
    tau = schedule.tau
    fmax = norm_lp(f, np.inf)
    if extinction_tol is None:
        extinction_tol = 1e-8 * fmax
    keep = set(schedule.snapshot_indices().tolist())
    traj = Trajectory([0.0], [f], [None], params, mode, tau, steps=[0], energy=[0.0])
    energy = 0.0
    u = f
    if fmax == 0:
        for k in range(1, schedule.n + 1):
            if k in keep:
                traj.times.append(k * tau)
                traj.fields.append(u)
                traj.reports.append(SolveReport(converged=True, residual=0.0))
                traj.steps.append(k)
                traj.energy.append(0.0)
        return traj
    for k in range(1, schedule.n + 1):
        u, rep = step(u, tau, params, mode, opts, operator)
        energy += tau * operator.quadratic_form(odd_power(u.values, params.m))
        extinct = norm_lp(u, np.inf) < extinction_tol
        if k in keep or extinct or not rep.converged:
            traj.times.append(k * tau)
            traj.fields.append(u)
            traj.reports.append(rep)
            traj.steps.append(k)
            traj.energy.append(energy)
        if not rep.converged:
            traj.status = "failed"
            raise NonConvergence(f"step {k} did not converge (residual {rep.residual:.3e})", rep, traj)
        if extinct and stop_on_extinction:
            traj.status = "extinct"
            log.info("extinct at t=%g", k * tau)
            break
    return traj


@dataclass
class RefinementResult:
    ladder: list
    distances: list
    orders: list
    errors: list | None = None
    error_orders: list | None = None


def _orders(ladder, d):
    out = []
    for k in range(len(d) - 1):
        if d[k] > 0 and d[k + 1] > 0:
            out.append(float(np.log(d[k] / d[k + 1]) / np.log(ladder[k + 1] / ladder[k])))
        else:
            out.append(float("nan"))
    return out


def refine_convergence(f, T, params, mode="symbol", ladder=(16, 32, 64), opts=None, reference=None) -> RefinementResult:
    """Final-time ``L^1`` distances along a step-count ladder.

    ``distances[k] = ||u_{n_k}(T) - u_{n_{k+1}}(T)||_1``; if ``reference`` is
    given, ``errors[k] = ||u_{n_k}(T) - reference||_1`` as well.
    """
    ladder = [int(n) for n in ladder]
    if len(ladder) < 3:
        raise ValueError("refinement needs at least three step counts")
    finals = [
        evolve(f, Schedule(T, n, snapshots=2), params, mode, opts, stop_on_extinction=False).final
        for n in ladder
    ]
    dist = [norm_lp(finals[k] - finals[k + 1], 1) for k in range(len(finals) - 1)]
    res = RefinementResult(ladder, dist, _orders(ladder[:-1], dist) if len(dist) > 1 else [])
    if reference is not None:
        errs = [norm_lp(u - reference, 1) for u in finals]
        res.errors = errs
        res.error_orders = _orders(ladder, errs)
    return res


class CrandallLiggett(TransformerMixin, BaseEstimator):
    """Estimator-style evolution operator ``f -> u(T)``.

    ``transform`` returns the final field(s); the last trajectory is kept in
    ``trajectory_``.
    """

    def __init__(self, sigma=1.0, m=1.0, mode="symbol", T=1.0, n_steps=64, residual_tol_abs=1e-10):
        self.sigma = sigma
        self.m = m
        self.mode = mode
        self.T = T
        self.n_steps = n_steps
        self.residual_tol_abs = residual_tol_abs

    def fit(self, X, y=None):
        if not isinstance(X, Grid):
            raise TypeError("fit expects a Grid")
        self.grid_ = X
        self.params_ = FracParams(X.dim, float(self.sigma), float(self.m))
        self.schedule_ = Schedule(float(self.T), int(self.n_steps))
        self.operator_ = get_operator(X, float(self.sigma), self.mode)
        return self

    def evolve(self, f) -> Trajectory:
        check_is_fitted(self, "operator_")
        f = as_field(self.grid_, f if isinstance(f, Field) else np.asarray(f, dtype=float))
        opts = ResolventOptions(residual_tol_abs=self.residual_tol_abs)
        self.trajectory_ = evolve(f, self.schedule_, self.params_, self.mode, opts, operator=self.operator_)
        return self.trajectory_

    def transform(self, X):
        check_is_fitted(self, "operator_")
        if isinstance(X, Field):
            return self.evolve(X).final
        Xa = np.asarray(X, dtype=float)
        n = self.grid_.size
        if Xa.size == n:
            return self.evolve(Xa.reshape(self.grid_.shape)).final.values.reshape(Xa.shape)
        if Xa.ndim != 2 or Xa.shape[1] != n:
            raise ValueError(f"expected arrays with {n} values per row, got shape {Xa.shape}")
        return np.stack([self.evolve(row.reshape(self.grid_.shape)).final.flat for row in Xa])
