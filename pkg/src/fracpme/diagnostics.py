"""Pass/fail checks over trajectories.

Every check is one-sided with an explicit slack and returns a
:class:`Verdict`.  The quantities shared by most checks are collected once
per trajectory in a :class:`DiagnosticsSeries`.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .citations import CITATIONS
from .grid import Boundary, Field, make_grid, mass, norm_lp, positive_part_integral
from .operators import FracParams
from .semigroup import Schedule, Trajectory, evolve

log = logging.getLogger(__name__)

COLUMNS = ("t", "mass", "l1", "l2", "lmp1", "linf", "min", "energy")
TORUS_MODES = ("symbol", "kernel-torus")


@dataclass
class Verdict:
    name: str
    passed: bool
    measured: object
    tolerance: object
    reference: str
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.reference not in CITATIONS:
            raise ValueError(f"unknown reference label {self.reference!r}")
        self.passed = bool(self.passed)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "passed": self.passed,
            "measured": _jsonable(self.measured),
            "tolerance": _jsonable(self.tolerance),
            "reference": self.reference,
            "details": _jsonable(self.details),
        }

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: measured={_short(self.measured)} tol={_short(self.tolerance)}"


def _short(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return [_jsonable(x) for x in v.tolist()]
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if np.isfinite(v) else str(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    return v


def verdicts_to_json(verdicts) -> str:
    return json.dumps([v.to_dict() for v in verdicts], indent=1)


def verdicts_to_csv(verdicts) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["name", "pass", "measured", "tolerance", "reference"])
    for v in verdicts:
        w.writerow([v.name, int(v.passed), json.dumps(_jsonable(v.measured)), json.dumps(_jsonable(v.tolerance)), v.reference])
    return buf.getvalue()


# --- series -------------------------------------------------------------------


@dataclass
class DiagnosticsSeries:
    """One row per snapshot: the columns of :data:`COLUMNS`."""

    data: dict
    params: FracParams | None = None
    mode: str | None = None
    tau: float | None = None
    steps: np.ndarray | None = None
    domain_length: float | None = None

    def __post_init__(self):
        for c in COLUMNS:
            self.data[c] = np.asarray(self.data[c], dtype=float)
        t = self.data["t"]
        if t.size > 1 and np.any(np.diff(t) <= 0):
            raise ValueError("series times must be strictly increasing")

    def __getitem__(self, col) -> np.ndarray:
        return self.data[col]

    def __len__(self):
        return len(self.data["t"])

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(COLUMNS) + "\n")
        for i in range(len(self)):
            buf.write(",".join("%.17g" % self.data[c][i] for c in COLUMNS) + "\n")
        return buf.getvalue()

    def to_loglog_csv(self) -> str:
        """Plot-ready table: every column plus ``log10`` companions (blank when undefined)."""
        cols = list(COLUMNS) + [f"log10_{c}" for c in COLUMNS if c not in ("min",)]
        buf = io.StringIO()
        buf.write(",".join(cols) + "\n")
        for i in range(len(self)):
            row = ["%.17g" % self.data[c][i] for c in COLUMNS]
            for c in COLUMNS:
                if c == "min":
                    continue
                v = self.data[c][i]
                row.append("%.17g" % np.log10(v) if v > 0 else "")
            buf.write(",".join(row) + "\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "DiagnosticsSeries":
        rows = list(csv.DictReader(io.StringIO(text)))
        return cls({c: [float(r[c]) for r in rows] for c in COLUMNS})

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_csv())
        return path


def run_diagnostics(traj: Trajectory) -> DiagnosticsSeries:
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    p = traj.params
    rows = {c: [] for c in COLUMNS}
    for t, u, e in zip(traj.times, traj.fields, traj.energy):
        rows["t"].append(t)
        rows["mass"].append(mass(u))
        rows["l1"].append(norm_lp(u, 1))
        rows["l2"].append(norm_lp(u, 2))
        rows["lmp1"].append(norm_lp(u, max(p.m + 1, 1.0)))
        rows["linf"].append(norm_lp(u, np.inf))
        rows["min"].append(float(np.min(u.values)))
        rows["energy"].append(e)
    g = traj.grid
    return DiagnosticsSeries(rows, p, traj.mode, traj.tau, np.asarray(traj.steps), (2 * g.half_length) ** g.dim)


def _step_gaps(series_or_traj) -> np.ndarray:
    steps = getattr(series_or_traj, "steps", None)
    if steps is None or len(steps) == 0:
        return np.ones(max(len(series_or_traj) - 1, 0))
    return np.diff(np.asarray(steps, dtype=float))


# --- mass -----------------------------------------------------------------------


def check_mass(series: DiagnosticsSeries, params: FracParams | None = None, mode=None, tol=1e-10,
               flux_bound=0.0) -> Verdict:
    """Torus: relative drift ``<= tol``.  Window, ``m >= m*``: drift ``<= tol +
    flux_bound``.  Window, ``m < m*``: mass strictly decreasing."""
    params = params or series.params
    mode = mode or series.mode
    M = series["mass"]
    M0 = M[0]
    scale = abs(M0) if M0 != 0 else 1.0
    drift = float(np.max(np.abs(M - M0)) / scale) if len(M) else 0.0
    if mode in TORUS_MODES:
        return Verdict("mass-conservation", drift <= tol, drift, tol, "mass.conservation", {"mode": mode})
    if params.m >= params.m_star:
        bound = tol + flux_bound
        return Verdict("mass-conservation", drift <= bound, drift, bound, "mass.conservation",
                       {"mode": mode, "flux_bound": flux_bound})
    dM = np.diff(M)
    worst = float(np.max(dM)) if dM.size else 0.0
    return Verdict("mass-loss", dM.size > 0 and worst < 0, worst, "< 0", "mass.loss-subcritical",
                   {"mode": mode, "final_relative_loss": float((M0 - M[-1]) / scale)})


def _bump(grid, width=1.5, amplitude=1.0):
    x = grid.axis()
    prof = np.where(np.abs(x) < width, np.cos(np.pi * x / (2 * width)) ** 2, 0.0)
    out = prof
    for _ in range(grid.dim - 1):
        out = np.multiply.outer(out, prof)
    return Field(grid, amplitude * out)


def mass_leak_scaling(sigma, m, radii=(25, 50, 100, 200), h=0.5, T=1.0, n=10, tol=0.3, dim=1) -> Verdict:
    """Relative mass lost through a zero-exterior window of radius ``R``.

    The leak is fitted as ``C R^s`` and compared with the cutoff exponent
    ``-sigma + N (p - 1)/p``, ``p = max(1, 1/m)``; the verdict passes when
    ``|s - target| <= tol |target|``.
    """
    params = FracParams(dim, float(sigma), float(m))
    if params.m < params.m_star:
        raise ValueError("the cutoff scaling applies for m >= m_star")
    leaks = []
    for R in radii:
        M = int(round(2 * R / h))
        M += M % 2
        grid = make_grid(dim, R, M, Boundary.FreeSpaceWindow)
        f = _bump(grid)
        tr = evolve(f, Schedule(T, n, snapshots=2), params, "kernel-freespace")
        leaks.append((mass(f) - mass(tr.final)) / mass(f))
    p = max(1.0, 1.0 / m)
    target = -sigma + dim * (p - 1) / p
    slope = float(np.polyfit(np.log(radii), np.log(leaks), 1)[0])
    ok = abs(slope - target) <= tol * abs(target)
    return Verdict("mass-leak-scaling", ok, slope, {"target": target, "relative": tol}, "mass.cutoff-scaling",
                   {"radii": list(radii), "leaks": leaks, "sigma": sigma, "m": m, "h": h, "T": T})


def critical_mass_drift(radii=(6, 8, 12), h=0.5, T=0.5, n=10, sigma=1.0, dim=2) -> Verdict:
    """Critical line ``m = m*``: drift must decrease as the window grows."""
    m = (dim - sigma) / dim
    params = FracParams(dim, sigma, m)
    drifts = []
    for R in radii:
        M = int(round(2 * R / h))
        M += M % 2
        grid = make_grid(dim, R, M, Boundary.FreeSpaceWindow)
        f = _bump(grid)
        tr = evolve(f, Schedule(T, n, snapshots=2), params, "kernel-freespace")
        drifts.append((mass(f) - mass(tr.final)) / mass(f))
    ok = bool(np.all(np.diff(drifts) < 0))
    return Verdict("critical-mass-drift", ok, drifts, "decreasing in R", "mass.conservation",
                   {"radii": list(radii), "m": m, "sigma": sigma, "dim": dim})


# --- norms and ordering -------------------------------------------------------------


_COLUMN_FOR_P = {1.0: "l1", 2.0: "l2", np.inf: "linf"}


def check_lp_monotone(data, p, slack=1e-9) -> Verdict:
    """``||u(t)||_p`` nonincreasing, allowing ``slack`` per step (relative to ``||f||_p``)."""
    p = np.inf if p in ("inf", np.inf) else float(p)
    if isinstance(data, Trajectory):
        vals = np.array([norm_lp(u, p) for u in data.fields])
    else:
        params = data.params
        col = _COLUMN_FOR_P.get(p)
        if col is None and params is not None and np.isclose(p, params.m + 1):
            col = "lmp1"
        if col is None:
            raise ValueError(f"series has no column for p={p}; pass the trajectory")
        vals = data[col]
    gaps = _step_gaps(data)
    scale = max(vals[0], 1.0) if len(vals) else 1.0
    inc = np.diff(vals) - slack * gaps * scale
    worst = float(np.max(np.diff(vals))) if len(vals) > 1 else 0.0
    ok = bool(np.all(inc <= 0)) if inc.size else True
    return Verdict(f"lp-monotone(p={p:g})", ok, worst, f"{slack:g}/step", "lp.monotone")


def _paired(t1: Trajectory, t2: Trajectory):
    if len(t1) != len(t2) or not np.allclose(t1.times, t2.times):
        raise ValueError("trajectories must share snapshot times")
    return zip(t1.fields, t2.fields)


def check_l1_contraction(t1: Trajectory, t2: Trajectory, slack=1e-8) -> Verdict:
    """``int (u1 - u2)_+`` nonincreasing across snapshots, slack per step."""
    vals = np.array([positive_part_integral(a - b) for a, b in _paired(t1, t2)])
    gaps = _step_gaps(t1)
    inc = np.diff(vals)
    ok = bool(np.all(inc <= slack * gaps)) if inc.size else True
    worst = float(np.max(inc)) if inc.size else 0.0
    return Verdict("l1-order-contraction", ok, worst, f"{slack:g}/step", "l1.order-contraction",
                   {"initial": float(vals[0]), "final": float(vals[-1])})


def check_comparison(t1: Trajectory, t2: Trajectory, slack=1e-9) -> Verdict:
    """``f1 <= f2`` implies ``u1 <= u2 + k slack`` at snapshot step ``k``."""
    if np.any(t1.fields[0].values > t2.fields[0].values):
        raise ValueError("comparison needs ordered data f1 <= f2")
    worst = 0.0
    ok = True
    for k, (a, b) in zip(t1.steps, _paired(t1, t2)):
        excess = float(np.max(a.values - b.values))
        worst = max(worst, excess)
        ok &= excess <= max(k, 1) * slack
    return Verdict("comparison", ok, worst, f"{slack:g}/step", "comparison")


# --- smoothing ------------------------------------------------------------------------


def smoothing_window(series: DiagnosticsSeries, resolve_factor=10.0, saturate_fraction=0.1, min_steps=5):
    """Auto window from the spread proxy ``W(t) = ||u||_1 / ||u||_inf``.

    Starts once ``t >= min_steps tau`` and ``W >= resolve_factor W(0)`` (the
    datum no longer matters) and ends before ``W`` exceeds
    ``saturate_fraction`` of the domain length (the period is felt).
    """
    t = series["t"]
    W = series["l1"] / np.maximum(series["linf"], 1e-300)
    if series.domain_length is None:
        raise ValueError("series carries no domain length")
    tau = series.tau or 0.0
    lo_ok = (t >= min_steps * tau) & (W >= resolve_factor * W[0]) & (t > 0)
    hi_ok = W <= saturate_fraction * series.domain_length
    if not lo_ok.any():
        return None
    i0 = int(np.argmax(lo_ok))
    over = np.nonzero(~hi_ok[i0:])[0]
    i1 = i0 + (int(over[0]) if over.size else len(t) - i0)
    if i1 <= i0:
        return None
    return float(t[i0]), float(t[i1 - 1])


def fit_smoothing_rate(series: DiagnosticsSeries, params: FracParams | None = None, p=1.0, window=None,
                       tol=0.15, two_sided=True, min_points=6) -> Verdict:
    """Least-squares slope of ``log ||u||_inf`` against ``log t`` on a window.

    The bound is one-sided (``slope >= -gamma_p - tol``); with
    ``two_sided=True`` the slope must also lie within ``tol`` of ``-gamma_p``.
    """
    params = params or series.params
    target = -params.gamma_p(p)
    auto = window is None
    if auto:
        window = smoothing_window(series)
        if window is None:
            raise ValueError("no admissible smoothing window in this series")
    t, linf = series["t"], series["linf"]
    sel = (t >= window[0]) & (t <= window[1]) & (t > 0) & (linf > 0)
    if sel.sum() < min_points:
        raise ValueError(f"smoothing window {window} holds {int(sel.sum())} snapshots; need {min_points}")
    slope = float(np.polyfit(np.log(t[sel]), np.log(linf[sel]), 1)[0])
    ok = abs(slope - target) <= tol if two_sided else slope >= target - tol
    log.info("smoothing window %s (auto=%s), slope %.4f vs %.4f", window, auto, slope, target)
    return Verdict("smoothing-rate", ok, slope, {"target": target, "abs": tol}, "smoothing.l1-linf",
                   {"window": list(window), "auto_window": auto, "points": int(sel.sum()), "p": p})


# --- extinction and positivity -----------------------------------------------------------


def detect_extinction(traj: Trajectory, tol=None):
    """First snapshot time with ``||u||_inf < tol`` (default ``1e-8 ||f||_inf``), else ``None``."""
    f0 = norm_lp(traj.fields[0], np.inf)
    if tol is None:
        tol = 1e-8 * f0
    for t, u in zip(traj.times[1:], traj.fields[1:]):
        if norm_lp(u, np.inf) < tol:
            return float(t)
    return None


def _interior(u: Field) -> np.ndarray:
    if u.grid.boundary is Boundary.DirichletBox:
        return u.values[u.grid.interior_mask()]
    return u.values.ravel()


def check_positivity(traj: Trajectory, floor=1e-13) -> Verdict:
    """``min u >= floor ||u||_inf`` at every snapshot with ``t > 0`` before extinction."""
    f = traj.fields[0]
    if np.any(f.values < 0):
        raise ValueError("positivity needs a nonnegative datum")
    if not np.any(f.values > 0):
        return Verdict("positivity", True, 0.0, floor, "positivity", {"vacuous": True})
    t_ext = detect_extinction(traj)
    worst = np.inf
    for t, u in zip(traj.times[1:], traj.fields[1:]):
        if t_ext is not None and t >= t_ext:
            break
        v = _interior(u)
        worst = min(worst, float(v.min() / np.abs(v).max()))
    ok = worst >= floor
    return Verdict("positivity", ok, worst, floor, "positivity", {"extinction_time": t_ext})


def time_derivative_bound(params: FracParams, t, l1_datum) -> float:
    if params.m == 1:
        return 2 * params.dim * l1_datum / (params.sigma * t)
    return 2 * l1_datum / (abs(params.m - 1) * t)


def check_time_derivative_bound(traj: Trajectory, params: FracParams | None = None, safety=1.5) -> Verdict:
    """``||u(t+dt) - u(t)||_1 / dt <= safety * bound(t)`` for snapshots with ``t > 0``."""
    params = params or traj.params
    f1 = norm_lp(traj.fields[0], 1)
    worst = 0.0
    for k in range(1, len(traj) - 1):
        t0, t1 = traj.times[k], traj.times[k + 1]
        q = norm_lp(traj.fields[k + 1] - traj.fields[k], 1) / (t1 - t0)
        b = time_derivative_bound(params, t0, f1)
        if b > 0:
            worst = max(worst, q / b)
    return Verdict("time-derivative-bound", worst <= safety, worst, safety, "time-derivative.l1",
                   {"safety_factor": safety})


def check_homogeneity(traj: Trajectory, params: FracParams | None = None, slack=1e-9) -> Verdict:
    """Discrete ``(m-1) t_k (u_k - u_{k-1})/dt + u_k >= -slack`` (``m = 1``: ``sigma t u_t + N u``)."""
    params = params or traj.params
    if np.any(traj.fields[0].values < 0):
        raise ValueError("homogeneity estimate needs a nonnegative datum")
    scale = max(norm_lp(traj.fields[0], np.inf), 1e-300)
    worst = np.inf
    for k in range(1, len(traj)):
        dt = traj.times[k] - traj.times[k - 1]
        t = traj.times[k]
        du = (traj.fields[k].values - traj.fields[k - 1].values) / dt
        u = traj.fields[k].values
        if params.m == 1:
            val = params.sigma * t * du + params.dim * u
        else:
            val = (params.m - 1) * t * du + u
        worst = min(worst, float(val.min() / scale))
    if not np.isfinite(worst):
        worst = 0.0
    return Verdict("homogeneity", worst >= -slack, worst, -slack, "homogeneity")


def check_retention(traj: Trajectory, params: FracParams | None = None, slack=1e-9) -> Verdict:
    """``t^{1/(m-1)} u`` nodewise nondecreasing over snapshots with ``t > 0``."""
    params = params or traj.params
    if params.m <= 1:
        raise ValueError("retention is checked for m > 1 only")
    if np.any(traj.fields[0].values < 0):
        raise ValueError("retention needs a nonnegative datum")
    a = 1.0 / (params.m - 1)
    scale = max(norm_lp(traj.fields[0], np.inf), 1e-300)
    worst = 0.0
    prev = None
    for t, u in zip(traj.times, traj.fields):
        if t <= 0:
            continue
        cur = t**a * u.values
        if prev is not None:
            # drop relative to t^a ||f||_inf
            worst = max(worst, float(np.max(prev - cur)) / (t**a * scale))
        prev = cur
    return Verdict("retention", worst <= slack, worst, slack, "retention")


# --- extinction against a reference ----------------------------------------------------------


def check_extinction_time(traj: Trajectory, T_ref, rel_tol=0.1, tol=None) -> Verdict:
    t_num = detect_extinction(traj, tol)
    if t_num is None:
        return Verdict("extinction-time", False, None, rel_tol, "extinction.whole-space", {"T_ref": T_ref})
    err = abs(t_num - T_ref) / T_ref
    return Verdict("extinction-time", err <= rel_tol, err, rel_tol, "extinction.whole-space",
                   {"T_num": t_num, "T_ref": T_ref})


def check_no_extinction(traj: Trajectory, tol=None) -> Verdict:
    t_num = detect_extinction(traj, tol)
    return Verdict("no-extinction", t_num is None, t_num, None, "extinction.none")


# --- parameter continuity --------------------------------------------------------------------


@dataclass
class ContinuityResult:
    labels: list
    distances: np.ndarray
    to_target: list
    verdict: Verdict

    def to_dict(self) -> dict:
        return {"labels": self.labels, "distances": self.distances.tolist(), "to_target": self.to_target,
                "verdict": self.verdict.to_dict()}


def sup_l1_distance(t1: Trajectory, t2: Trajectory) -> float:
    return max(norm_lp(a - b, 1) for a, b in _paired(t1, t2))


def parameter_continuity(f: Field, params_list, T, mode="kernel-torus", n=50, target=None, snapshots=None,
                         reference="continuity.parameters") -> ContinuityResult:
    """Pairwise ``sup_{t <= T} ||u_i - u_j||_1`` over a parameter ladder.

    ``target`` (default: the last entry) is the limit parameter; the verdict
    asks the distances of the ladder rungs to it to decrease over the final
    three rungs.
    """
    params_list = list(params_list)
    if target is None:
        target = params_list[-1]
        rungs = params_list[:-1]
    else:
        rungs = params_list
    every = params_list if target in params_list else params_list + [target]
    sched = Schedule(T, n, snapshots)
    trajs = {p: evolve(f, sched, p, mode, stop_on_extinction=False) for p in every}
    D = np.zeros((len(every), len(every)))
    for i, a in enumerate(every):
        for j in range(i + 1, len(every)):
            D[i, j] = D[j, i] = sup_l1_distance(trajs[a], trajs[every[j]])
    to_target = [sup_l1_distance(trajs[p], trajs[target]) for p in rungs]
    tail = to_target[-3:]
    ok = len(tail) == 3 and bool(np.all(np.diff(tail) < 0))
    labels = [p.to_dict() for p in every]
    v = Verdict("parameter-continuity", ok, to_target, "decreasing over last 3 rungs", reference,
                {"rungs": [p.to_dict() for p in rungs], "target": target.to_dict()})
    return ContinuityResult(labels, D, to_target, v)
