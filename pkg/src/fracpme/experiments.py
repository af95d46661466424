"""Configuration-driven experiments and their artifact bundles.

A config is a JSON object::

    {"schema_version": 1, "experiment": "mass-conservation",
     "grid": {"dim": 1, "half_length": 10, "points_per_dim": 128},
     "params": {"sigma": 1.0, "m": 2.0}, "mode": "kernel-torus",
     "schedule": {"T": 1.0, "n": 100},
     "datum": {"kind": "bump", "center": 0.0, "width": 2.0, "mass": 1.0},
     "checks": {"mass": {"tol": 1e-10}}}

Missing sections fall back to the experiment's defaults.  ``run_experiment``
writes one directory per run holding ``manifest.json``, ``series.csv``,
``plot.csv``, ``verdicts.json``, ``verdicts.csv`` and the trajectory
snapshots.
"""

from __future__ import annotations

import copy
import json
import logging
import os
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .diagnostics import (
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
    verdicts_to_csv,
    verdicts_to_json,
)
from .extension import cross_validate
from .grid import Boundary, Field, load_field, make_grid, mass, multiply_spectrum, norm_lp
from .inequalities import (
    Ensemble,
    check_energy_identity,
    estimate_hls_constant,
    estimate_ngn_constant,
    linear_energy_identity,
    stability_verdict,
    sv_ensemble_verdict,
)
from .operators import MODES, FracParams, apply_dirichlet, heat_kernel, mode_boundary, symbol_multiplier
from .reference import (
    calibrate_extinction_profile,
    linear_solution,
    ode_limit_solution,
    separated_extinction,
    spatial_profile,
)
from .resolvent import NonConvergence, ResolventOptions, t_contraction_gap
from .semigroup import Schedule, Trajectory, evolve

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
OUTPUT_ENV = "FRACPME_OUTPUT"


class ConfigError(ValueError):
    """Invalid experiment configuration; ``errors`` maps field paths to messages."""

    def __init__(self, errors: dict):
        self.errors = dict(errors)
        super().__init__("; ".join(f"{k}: {v}" for k, v in self.errors.items()))


# --- config ---------------------------------------------------------------------------


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("datum",):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def set_path(cfg: dict, path: str, value) -> dict:
    """Return a copy of ``cfg`` with the dotted ``path`` set to ``value``."""
    out = copy.deepcopy(cfg)
    keys = path.split(".")
    node = out
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError({path: f"{k!r} is not a section"})
    node[keys[-1]] = value
    return out


@dataclass
class ExperimentConfig:
    raw: dict

    @property
    def name(self) -> str:
        return self.raw["experiment"]

    @property
    def params(self) -> FracParams:
        p = self.raw["params"]
        return FracParams(int(self.raw["grid"]["dim"]), float(p["sigma"]), float(p["m"]))

    @property
    def mode(self) -> str:
        return self.raw["mode"]

    @property
    def grid(self):
        g = self.raw["grid"]
        boundary = g.get("boundary") or mode_boundary(self.mode)
        return make_grid(int(g["dim"]), float(g["half_length"]), int(g["points_per_dim"]), boundary)

    @property
    def schedule(self) -> Schedule:
        s = self.raw["schedule"]
        return Schedule(float(s["T"]), int(s["n"]), s.get("snapshots"))

    def check(self, name, key, default):
        return self.raw.get("checks", {}).get(name, {}).get(key, default)

    @property
    def solver(self) -> ResolventOptions:
        return ResolventOptions(**self.raw.get("solver", {}))

    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)


def _validate(cfg: dict) -> None:
    errors = {}
    if cfg.get("schema_version") != SCHEMA_VERSION:
        errors["schema_version"] = f"expected {SCHEMA_VERSION}, got {cfg.get('schema_version')!r}"
    name = cfg.get("experiment")
    if name not in REGISTRY:
        errors["experiment"] = f"unknown experiment {name!r}"
    g = cfg.get("grid", {})
    try:
        if int(g.get("dim", 0)) not in (1, 2):
            errors["grid.dim"] = "must be 1 or 2"
    except (TypeError, ValueError):
        errors["grid.dim"] = "must be an integer"
    try:
        if not float(g.get("half_length", 0)) > 0:
            errors["grid.half_length"] = "must be positive"
    except (TypeError, ValueError):
        errors["grid.half_length"] = "must be a number"
    try:
        M = int(g.get("points_per_dim", 0))
        if M < 8 or M % 2:
            errors["grid.points_per_dim"] = "must be an even integer >= 8"
    except (TypeError, ValueError):
        errors["grid.points_per_dim"] = "must be an integer"
    p = cfg.get("params", {})
    sigma = p.get("sigma")
    if not isinstance(sigma, (int, float)) or not 0 < sigma < 2:
        errors["params.sigma"] = "must lie in (0, 2)"
    m = p.get("m")
    if not isinstance(m, (int, float)) or not m > 0:
        errors["params.m"] = "must be positive"
    if cfg.get("mode") not in MODES:
        errors["mode"] = f"must be one of {MODES}"
    s = cfg.get("schedule", {})
    T, n = s.get("T"), s.get("n")
    if not isinstance(T, (int, float)) or not T > 0:
        errors["schedule.T"] = "must be positive"
    if not isinstance(n, int) or n < 1:
        errors["schedule.n"] = "must be a positive integer"
    if "tau" in s:
        tau = s["tau"]
        if not isinstance(tau, (int, float)) or not tau > 0:
            errors["schedule.tau"] = "must be positive"
        elif isinstance(T, (int, float)) and T > 0 and isinstance(n, int) and n > 0 and not np.isclose(tau, T / n):
            errors["schedule.tau"] = "inconsistent with T / n"
    for cname, opts in cfg.get("checks", {}).items():
        for k, v in (opts or {}).items():
            if k.startswith("tol") and (not isinstance(v, (int, float)) or not v > 0):
                errors[f"checks.{cname}.{k}"] = "tolerances must be positive"
    d = cfg.get("datum", {})
    if d.get("kind") not in DATUMS:
        errors["datum.kind"] = f"must be one of {sorted(DATUMS)}"
    if errors:
        raise ConfigError(errors)


def load_config(source) -> ExperimentConfig:
    """Build a validated config from a dict, a JSON string or a path."""
    if isinstance(source, Path) or (isinstance(source, str) and source.endswith(".json")):
        if not Path(source).exists():
            raise ConfigError({"path": f"no such config file {str(source)!r}"})
        raw = json.loads(Path(source).read_text())
    elif isinstance(source, str):
        raw = json.loads(source)
    else:
        raw = copy.deepcopy(dict(source))
    name = raw.get("experiment")
    if name in REGISTRY:
        raw = _merge(REGISTRY[name].defaults, raw)
    _validate(raw)
    return ExperimentConfig(raw)


# --- initial data -----------------------------------------------------------------------


def _datum_bump(grid, spec):
    c = float(spec.get("center", 0.0))
    w = float(spec.get("width", 1.0))
    r = grid.radius(c)
    if spec.get("shape", "cos2") == "gaussian":
        v = np.exp(-(r**2) / (2 * w**2))
    else:
        v = np.where(r < w, np.cos(np.pi * r / (2 * w)) ** 2, 0.0)
    if grid.boundary is Boundary.DirichletBox:
        v = np.where(grid.interior_mask(), v, 0.0)
    fld = Field(grid, v)
    if "mass" in spec:
        fld = fld * (float(spec["mass"]) / mass(fld))
    elif "amplitude" in spec:
        fld = fld * float(spec["amplitude"])
    return fld


def _datum_heat(grid, spec):
    return heat_kernel(grid, float(spec.get("sigma", spec.get("order", 1.0))), float(spec["t0"]),
                       spec.get("center", 0.0))


def _datum_separated(grid, spec):
    prof = spatial_profile(grid, float(spec["sigma"]), float(spec.get("c", 1.0)), spec.get("center", 0.0))
    return prof * float(spec.get("amplitude", 1.0))


def _datum_random(grid, spec):
    ens = Ensemble(grid, 1, spec.get("ensemble", "bumps"), int(spec.get("seed", 0)))
    v = ens.fields()[0]
    if spec.get("nonnegative", False):
        v = v.with_values(np.abs(v.values))
    return v


def _datum_file(grid, spec):
    return load_field(spec["path"], grid)


DATUMS = {
    "bump": _datum_bump,
    "heat_kernel": _datum_heat,
    "separated_profile": _datum_separated,
    "random": _datum_random,
    "from_file": _datum_file,
    "zero": lambda grid, spec: Field.zeros(grid),
}


def make_datum(cfg: ExperimentConfig, grid=None) -> Field:
    grid = grid or cfg.grid
    spec = dict(cfg.raw["datum"])
    if spec["kind"] in ("heat_kernel",) and "sigma" not in spec:
        spec["sigma"] = cfg.params.sigma
    if spec["kind"] == "separated_profile" and "sigma" not in spec:
        spec["sigma"] = cfg.params.sigma
    return DATUMS[spec["kind"]](grid, spec)


# --- outcomes and registry ------------------------------------------------------------------


@dataclass
class Outcome:
    verdicts: list
    trajectory: Trajectory | None = None
    extras: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ExperimentSpec:
    name: str
    description: str
    reference: str
    defaults: dict
    runner: object


REGISTRY: dict = {}


def _base(**over) -> dict:
    cfg = {
        "schema_version": SCHEMA_VERSION,
        "grid": {"dim": 1, "half_length": 10.0, "points_per_dim": 128},
        "params": {"sigma": 1.0, "m": 2.0},
        "mode": "kernel-torus",
        "schedule": {"T": 1.0, "n": 100},
        "datum": {"kind": "bump", "center": 0.0, "width": 2.0, "amplitude": 1.0},
        "checks": {},
        "seed": 0,
    }
    return _merge(cfg, over)


def register(name, description, reference, **defaults):
    def deco(fn):
        REGISTRY[name] = ExperimentSpec(name, description, reference, _base(experiment=name, **defaults), fn)
        return fn

    return deco


def list_experiments() -> list:
    return [{"name": s.name, "description": s.description, "reference": s.reference, "defaults": s.defaults}
            for s in REGISTRY.values()]


def _evolve(cfg: ExperimentConfig, f=None, params=None, **kw) -> Trajectory:
    f = make_datum(cfg) if f is None else f
    return evolve(f, cfg.schedule, params or cfg.params, cfg.mode, cfg.solver, **kw)


@register(
    "linear-kernel-check",
    "m = 1 implicit Euler run from a heat-kernel datum against the exact kernel solution",
    "semigroup.linear-kernel",
    params={"sigma": 1.0, "m": 1.0},
    mode="symbol",
    schedule={"T": 0.5, "n": 64},
    datum={"kind": "heat_kernel", "t0": 1.0},
    checks={"kernel": {"tol_rel": 1e-3}, "discrete": {"tol_rel": 1e-10}, "order": {"lo": 0.8, "hi": 1.2}},
)
def _linear_kernel(cfg: ExperimentConfig) -> Outcome:
    p = cfg.params
    if p.m != 1:
        raise ConfigError({"params.m": "linear-kernel-check needs m = 1"})
    f = make_datum(cfg)
    sched = cfg.schedule
    traj = _evolve(cfg, f)
    exact = linear_solution(f, sched.T, p.sigma)
    f1 = norm_lp(f, 1)
    err = norm_lp(traj.final - exact, 1) / f1
    tol = cfg.check("kernel", "tol_rel", 1e-3)
    lam = symbol_multiplier(f.grid, p.sigma)
    discrete = multiply_spectrum(f, (1.0 + sched.tau * lam) ** (-sched.n))
    derr = norm_lp(traj.final - discrete, 1) / f1
    dtol = cfg.check("discrete", "tol_rel", 1e-10)
    errs = []
    ladder = [sched.n, 2 * sched.n, 4 * sched.n]
    for n in ladder:
        u = multiply_spectrum(f, (1.0 + sched.T / n * lam) ** (-n))
        errs.append(norm_lp(u - exact, 1))
    orders = [float(np.log2(errs[k] / errs[k + 1])) for k in range(2)]
    lo, hi = cfg.check("order", "lo", 0.8), cfg.check("order", "hi", 1.2)
    verdicts = [
        Verdict("linear-vs-kernel", err <= tol, err, tol, "semigroup.linear-kernel", {"l1_error": err * f1}),
        Verdict("linear-vs-discrete-oracle", derr <= dtol, derr, dtol, "semigroup.linear-kernel"),
        Verdict("linear-tau-order", all(lo <= o <= hi for o in orders), orders, [lo, hi], "semigroup.linear-kernel",
                {"ladder": ladder, "errors": errs}),
    ]
    return Outcome(verdicts, traj)


@register(
    "mass-conservation",
    "mass drift over a full run (torus: structural conservation, window: loss below m_star)",
    "mass.conservation",
)
def _mass(cfg: ExperimentConfig) -> Outcome:
    traj = _evolve(cfg)
    series = run_diagnostics(traj)
    v = check_mass(series, cfg.params, cfg.mode, tol=cfg.check("mass", "tol", 1e-10),
                   flux_bound=cfg.check("mass", "flux_bound", 0.0))
    return Outcome([v], traj)


@register(
    "mass-leak-scaling",
    "mass lost through zero-exterior windows of growing radius against the cutoff exponent",
    "mass.cutoff-scaling",
    mode="kernel-freespace",
    checks={"scaling": {"radii": [25, 50, 100, 200], "h": 0.5, "tol": 0.3, "T": 1.0, "n": 10}},
)
def _leak(cfg: ExperimentConfig) -> Outcome:
    p = cfg.params
    c = cfg.raw["checks"].get("scaling", {})
    v = mass_leak_scaling(p.sigma, p.m, tuple(c.get("radii", (25, 50, 100, 200))), c.get("h", 0.5), c.get("T", 1.0),
                          c.get("n", 10), c.get("tol", 0.3), p.dim)
    return Outcome([v])


@register(
    "critical-mass",
    "critical exponent m = m_star in two dimensions: window drift decreasing in R",
    "mass.conservation",
    grid={"dim": 2, "half_length": 6.0, "points_per_dim": 24},
    params={"sigma": 1.0, "m": 0.5},
    mode="kernel-freespace",
    checks={"critical": {"radii": [6, 8, 12], "h": 0.5, "T": 0.5, "n": 10}},
)
def _critical(cfg: ExperimentConfig) -> Outcome:
    c = cfg.raw["checks"].get("critical", {})
    v = critical_mass_drift(tuple(c.get("radii", (6, 8, 12))), c.get("h", 0.5), c.get("T", 0.5), c.get("n", 10),
                            cfg.params.sigma, cfg.params.dim)
    return Outcome([v])


@register(
    "extinction-separated",
    "separated-variables extinction solution below m_star: extinction time, mass loss, profile error",
    "extinction.separated",
    grid={"dim": 1, "half_length": 200.0, "points_per_dim": 1024},
    params={"sigma": 0.5, "m": 1.0 / 3.0},
    mode="kernel-freespace",
    schedule={"T": 1.2, "n": 240},
    datum={"kind": "separated_profile", "c": 1.0, "center": 0.0},
    checks={"extinction": {"T": 1.0, "tol_rel": 0.1}, "profile": {"tol_rel": 0.08, "collar": 0.125}},
)
def _extinction(cfg: ExperimentConfig) -> Outcome:
    p = cfg.params
    grid = cfg.grid
    if grid.boundary is not Boundary.FreeSpaceWindow:
        raise ConfigError({"mode": "extinction-separated runs on the zero-exterior window"})
    expected_m = (p.dim - p.sigma) / (p.dim + p.sigma)
    if not np.isclose(p.m, expected_m):
        raise ConfigError({"params.m": f"separated family needs m = (N - sigma)/(N + sigma) = {expected_m:.6g}"})
    T_ext = float(cfg.check("extinction", "T", 1.0))
    d = cfg.raw["datum"]
    cal = calibrate_extinction_profile(grid, p.sigma, float(d.get("c", 1.0)), d.get("center", 0.0), T_ext)
    f = separated_extinction(grid, cal.params, 0.0)
    traj = evolve(f, cfg.schedule, p, cfg.mode, cfg.solver)
    series = run_diagnostics(traj)
    v_time = check_extinction_time(traj, T_ext, cfg.check("extinction", "tol_rel", 0.1))
    v_mass = check_mass(series, p, cfg.mode)
    collar = cfg.check("profile", "collar", 0.125) * grid.half_length
    keep = grid.radius(cal.params.center) <= grid.half_length - collar
    t_mid = 0.5 * T_ext
    u_mid = traj.at(t_mid)
    t_used = traj.times[int(np.argmin(np.abs(np.asarray(traj.times) - t_mid)))]
    ref = separated_extinction(grid, cal.params, t_used)
    err = float(np.max(np.abs(u_mid.values - ref.values)[keep]) / np.max(np.abs(ref.values)[keep]))
    ptol = cfg.check("profile", "tol_rel", 0.08)
    v_prof = Verdict("separated-profile", err <= ptol, err, ptol, "extinction.separated",
                     {"t": t_used, "collar": collar, "calibration": cal.to_dict()})
    return Outcome([v_time, v_mass, v_prof], traj, {"calibration": cal.to_dict()})


@register(
    "smoothing-rate",
    "log-log decay slope of the sup norm from a narrow unit-mass bump",
    "smoothing.l1-linf",
    grid={"dim": 1, "half_length": 50.0, "points_per_dim": 512},
    params={"sigma": 1.0, "m": 2.0},
    schedule={"T": 20.0, "n": 400},
    datum={"kind": "bump", "shape": "gaussian", "width": 0.1, "mass": 1.0},
    checks={"smoothing": {"tol": 0.15}},
)
def _smoothing(cfg: ExperimentConfig) -> Outcome:
    traj = _evolve(cfg)
    series = run_diagnostics(traj)
    win = cfg.check("smoothing", "window", None)
    v = fit_smoothing_rate(series, cfg.params, 1.0, tuple(win) if win else None, cfg.check("smoothing", "tol", 0.15))
    return Outcome([v], traj)


@register(
    "property-suite",
    "Lp monotonicity, order contraction, comparison, positivity, retention, homogeneity, time-derivative bound",
    "lp.monotone",
    schedule={"T": 2.0, "n": 100},
    checks={"second_datum": {"center": 3.0, "width": 1.0, "amplitude": 0.5}},
)
def _properties(cfg: ExperimentConfig) -> Outcome:
    p = cfg.params
    grid = cfg.grid
    f1 = make_datum(cfg)
    if np.any(f1.values < 0):
        raise ConfigError({"datum": "property-suite needs a nonnegative datum"})
    extra = _datum_bump(grid, {"kind": "bump", **cfg.raw["checks"].get("second_datum", {})})
    f2 = f1 + extra
    f3 = _datum_bump(grid, {"kind": "bump", "center": -0.1 * grid.half_length, "width": 1.5, "amplitude": 0.8})
    a = _evolve(cfg, f1)
    b = _evolve(cfg, f2)
    c = _evolve(cfg, f3)
    s = run_diagnostics(a)
    vs = [check_lp_monotone(s, q) for q in (1.0, 2.0, p.m + 1, np.inf)]
    vs.append(check_lp_monotone(a, 1.5))
    vs += [check_l1_contraction(a, b), check_l1_contraction(b, a), check_l1_contraction(a, c),
           check_l1_contraction(c, a), check_comparison(a, b), check_positivity(a), check_homogeneity(a),
           check_time_derivative_bound(a, safety=cfg.check("time_derivative", "safety", 1.5))]
    if p.m > 1:
        vs.append(check_retention(a))
    if p.m >= 1:
        vs.append(check_no_extinction(a))
    return Outcome(vs, a)


@register(
    "energy-identity",
    "dissipated energy plus the remaining L^(m+1) norm against the initial L^(m+1) norm",
    "energy.identity",
    checks={"energy": {"tol": 0.03}, "linear": {"tol": 1e-8}},
)
def _energy(cfg: ExperimentConfig) -> Outcome:
    traj = _evolve(cfg)
    vs = [check_energy_identity(traj, cfg.params, cfg.check("energy", "tol", 0.03))]
    if cfg.params.m == 1 and cfg.grid.boundary is Boundary.PeriodicTorus:
        vs.append(linear_energy_identity(traj.fields[0], cfg.schedule.T, cfg.params.sigma,
                                         tol=cfg.check("linear", "tol", 1e-8)))
    return Outcome(vs, traj)


@register(
    "parameter-continuity",
    "sup-in-time L1 distances along a parameter ladder approaching a limit value",
    "continuity.parameters",
    schedule={"T": 1.0, "n": 50},
    checks={"ladder": {"param": "m", "values": [2.0, 1.9, 1.81, 1.801], "target": 1.8}},
)
def _continuity(cfg: ExperimentConfig) -> Outcome:
    lad = cfg.raw["checks"]["ladder"]
    name = lad.get("param", "m")
    if name not in ("m", "sigma"):
        raise ConfigError({"checks.ladder.param": "must be 'm' or 'sigma'"})
    base = cfg.params

    def mk(v):
        return FracParams(base.dim, float(v) if name == "sigma" else base.sigma, float(v) if name == "m" else base.m)

    ladder = [mk(v) for v in lad["values"]]
    ref = "continuity.sigma-to-2" if name == "sigma" else "continuity.parameters"
    res = parameter_continuity(make_datum(cfg), ladder, cfg.schedule.T, cfg.mode, cfg.schedule.n,
                               target=mk(lad["target"]), reference=ref)
    return Outcome([res.verdict], None, {"distances": res.to_dict()})


@register(
    "dirichlet-suite",
    "bounded domain with the spectral operator: eigenmodes, extinction for m < 1, retention for m > 1",
    "extinction.bounded",
    grid={"dim": 1, "half_length": 1.0, "points_per_dim": 64},
    params={"sigma": 1.0, "m": 0.5},
    mode="dirichlet",
    schedule={"T": 4.0, "n": 200},
    datum={"kind": "bump", "width": 1.0, "amplitude": 1.0},
    checks={"eigen": {"tol": 1e-12}},
)
def _dirichlet(cfg: ExperimentConfig) -> Outcome:
    p = cfg.params
    grid = cfg.grid
    X = grid.coordinates()
    L = grid.half_length
    k = 1
    phi = np.ones(grid.shape)
    for x in X:
        phi = phi * np.sin(np.pi * k * (x + L) / (2 * L))
    phi = Field(grid, phi)
    lam = grid.dim * (np.pi / (2 * L)) ** 2
    out = apply_dirichlet(phi, p.sigma)
    eig_err = float(np.max(np.abs(out.values - lam ** (p.sigma / 2) * phi.values)) / lam ** (p.sigma / 2))
    etol = cfg.check("eigen", "tol", 1e-12)
    vs = [Verdict("dirichlet-eigenmode", eig_err <= etol, eig_err, etol, "bounded.spectral")]
    traj = _evolve(cfg, stop_on_extinction=True)
    if p.m < 1:
        t_ext = detect_extinction(traj)
        vs.append(Verdict("bounded-extinction", t_ext is not None, t_ext, "finite", "extinction.bounded"))
    else:
        vs.append(check_no_extinction(traj))
        if p.m > 1:
            vs.append(check_retention(traj))
    vs.append(check_positivity(traj))
    return Outcome(vs, traj)


@register(
    "ode-limit",
    "small sigma against the pointwise ODE solution (peak proximity only)",
    "ode-limit",
    grid={"dim": 1, "half_length": 20.0, "points_per_dim": 256},
    params={"sigma": 0.15, "m": 2.0},
    mode="symbol",
    schedule={"T": 1.0, "n": 50},
    datum={"kind": "bump", "shape": "gaussian", "width": 0.8, "amplitude": 1.0},
    checks={"peak": {"tol_rel": 0.1}},
)
def _ode(cfg: ExperimentConfig) -> Outcome:
    f = make_datum(cfg)
    traj = _evolve(cfg, f)
    ode = ode_limit_solution(f, cfg.schedule.T, cfg.params.m)
    i = np.unravel_index(np.argmax(f.values), f.values.shape)
    rel = float(abs(traj.final.values[i] / ode.values[i] - 1))
    l1 = norm_lp(traj.final - ode, 1) / max(norm_lp(ode, 1), 1e-300)
    tol = cfg.check("peak", "tol_rel", 0.1)
    return Outcome([Verdict("ode-limit-peak", rel <= tol, rel, tol, "ode-limit", {"l1_relative_reported": l1})], traj)


@register(
    "operator-cross-validation",
    "extension Dirichlet-to-Neumann flux against the Fourier symbol on a band-limited field",
    "operator.cross-validation",
    mode="symbol",
    checks={"extension": {"tol": 0.02, "J": 512}},
)
def _crossval(cfg: ExperimentConfig) -> Outcome:
    grid = cfg.grid
    v = Ensemble(grid, 1, "bandlimited", int(cfg.raw.get("seed", 0))).fields()[0]
    rep = cross_validate(v, cfg.params.sigma, J=int(cfg.check("extension", "J", 512)))
    tol = cfg.check("extension", "tol", 0.02)
    return Outcome([Verdict("extension-vs-symbol", rep.max_relative_error <= tol, rep.max_relative_error, tol,
                            "operator.cross-validation")], None, {"report": json.loads(rep.to_json())})


@register(
    "resolvent-contraction",
    "T-contraction gap of the resolvent over random pairs, ordered and unordered",
    "resolvent.t-contraction",
    checks={"pairs": {"count": 100, "tau": 0.1, "tol": 1e-8}},
)
def _contraction(cfg: ExperimentConfig) -> Outcome:
    c = cfg.raw["checks"]["pairs"]
    grid = cfg.grid
    rng = np.random.default_rng(int(cfg.raw.get("seed", 0)))
    gaps = []
    for k in range(int(c.get("count", 100))):
        g1 = rng.standard_normal(grid.shape)
        g2 = g1 - np.abs(rng.standard_normal(grid.shape)) if k % 2 == 0 else rng.standard_normal(grid.shape)
        gaps.append(t_contraction_gap(Field(grid, g1), Field(grid, g2), float(c.get("tau", 0.1)), cfg.params,
                                      cfg.mode, cfg.solver))
    tol = c.get("tol", 1e-8)
    worst = float(max(gaps))
    return Outcome([Verdict("t-contraction", worst <= tol, worst, tol, "resolvent.t-contraction",
                            {"count": len(gaps), "median_gap": float(np.median(gaps))})])


@register(
    "inequalities",
    "Stroock-Varopoulos margins and NGN / HLS constant stability across two resolutions",
    "inequality.stroock-varopoulos",
    checks={"sv": {"count": 200, "tol": 1e-10}, "constants": {"coarse": 256, "fine": 512, "count": 50, "tol": 0.2}},
)
def _inequalities(cfg: ExperimentConfig) -> Outcome:
    grid = cfg.grid
    seed = int(cfg.raw.get("seed", 0))
    sv = cfg.raw["checks"]["sv"]
    vs = [sv_ensemble_verdict(Ensemble(grid, int(sv.get("count", 200)), kind, seed), rel=sv.get("tol", 1e-10))
          for kind in ("bandlimited", "bumps", "rough")]
    cc = cfg.raw["checks"]["constants"]
    grids = [make_grid(grid.dim, grid.half_length, int(cc[k])) for k in ("coarse", "fine")]
    cnt = int(cc.get("count", 50))
    gamma = 0.5
    ngn = [estimate_ngn_constant(Ensemble(g, cnt, "bumps", seed), 1.0, 2.0, gamma) for g in grids]
    vs.append(stability_verdict(*ngn, tol=cc.get("tol", 0.2)))
    hls = [estimate_hls_constant(Ensemble(g, cnt, "bumps", seed), 1.5, gamma) for g in grids]
    vs.append(stability_verdict(*hls, tol=cc.get("tol", 0.2)))
    return Outcome(vs)


# --- running ----------------------------------------------------------------------------------


def output_root(explicit=None) -> Path:
    return Path(explicit or os.environ.get(OUTPUT_ENV, "runs"))


@dataclass
class Bundle:
    path: Path | None
    status: str
    verdicts: list
    series: DiagnosticsSeries | None = None
    extras: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.status == "complete" and all(v.passed for v in self.verdicts)


def _manifest(cfg: ExperimentConfig, status, runtime, extras) -> dict:
    return {
        "config": cfg.to_dict(),
        "status": status,
        "runtime_seconds": runtime,
        "seed": cfg.raw.get("seed", 0),
        "versions": {"fracpme": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "extras": extras,
    }


def run_experiment(config, out_dir=None, write=True) -> Bundle:
    """Run one experiment; with ``write`` the bundle lands in ``out_dir``
    (default ``$FRACPME_OUTPUT/<experiment>``)."""
    cfg = config if isinstance(config, ExperimentConfig) else load_config(config)
    spec = REGISTRY[cfg.name]
    t0 = time.perf_counter()
    status = "complete"
    try:
        outcome = spec.runner(cfg)
    except NonConvergence as exc:
        log.error("experiment %s failed: %s", cfg.name, exc)
        status = "failed"
        outcome = Outcome([], exc.partial, {"error": str(exc)})
    runtime = time.perf_counter() - t0
    series = run_diagnostics(outcome.trajectory) if outcome.trajectory is not None else None
    bundle = Bundle(None, status, outcome.verdicts, series, outcome.extras)
    if write:
        path = Path(out_dir) if out_dir is not None else output_root() / cfg.name
        path.mkdir(parents=True, exist_ok=True)
        (path / "manifest.json").write_text(json.dumps(_manifest(cfg, status, runtime, outcome.extras), indent=1,
                                                       default=_json_default))
        (path / "verdicts.json").write_text(verdicts_to_json(outcome.verdicts))
        (path / "verdicts.csv").write_text(verdicts_to_csv(outcome.verdicts))
        if series is not None:
            (path / "series.csv").write_text(series.to_csv())
            (path / "plot.csv").write_text(series.to_loglog_csv())
            outcome.trajectory.save(path / "snapshots")
        bundle.path = path
    return bundle


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def sweep(config, param_path: str, values, out_dir=None, jobs=1) -> list:
    """One run per value of the dotted ``param_path``, each in its own subdirectory."""
    cfg = config if isinstance(config, ExperimentConfig) else load_config(config)
    root = Path(out_dir) if out_dir is not None else output_root() / f"{cfg.name}-sweep"
    configs = [load_config(set_path(cfg.raw, param_path, v)) for v in values]
    dirs = [root / f"{param_path}={v}" for v in values]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(run_experiment, [c.raw for c in configs], dirs))
    return [run_experiment(c, d) for c, d in zip(configs, dirs)]


# --- reference comparison --------------------------------------------------------------------


@dataclass
class ComparisonReport:
    oracle: str
    times: list
    errors: dict
    ladder: list
    final_errors: list
    orders: list

    def to_dict(self) -> dict:
        return dict(self.__dict__)


ORACLES = ("linear", "separated", "ode")


def compare_reference(config) -> ComparisonReport:
    """Per-snapshot L1/L2/Linf errors against ``config["reference"]`` plus a step ladder."""
    cfg = config if isinstance(config, ExperimentConfig) else load_config(config)
    oracle = cfg.raw.get("reference", "linear")
    p = cfg.params
    if oracle not in ORACLES:
        raise ConfigError({"reference": f"must be one of {ORACLES}"})
    if oracle == "linear" and (p.m != 1 or cfg.grid.boundary is not Boundary.PeriodicTorus):
        raise ConfigError({"reference": "the linear oracle needs m = 1 on the torus"})
    if oracle == "ode" and p.m < 1:
        raise ConfigError({"reference": "the ODE oracle needs m >= 1"})
    f = make_datum(cfg)
    cal = None
    if oracle == "separated":
        if cfg.grid.boundary is not Boundary.FreeSpaceWindow:
            raise ConfigError({"reference": "the separated oracle needs the zero-exterior window"})
        d = cfg.raw["datum"]
        cal = calibrate_extinction_profile(cfg.grid, p.sigma, float(d.get("c", 1.0)), d.get("center", 0.0),
                                           float(cfg.check("extinction", "T", 1.0)))
        f = separated_extinction(cfg.grid, cal.params, 0.0)

    def exact(t):
        if oracle == "linear":
            return f if t == 0 else linear_solution(f, t, p.sigma)
        if oracle == "ode":
            return ode_limit_solution(f, t, p.m)
        if t >= cal.params.T:
            return Field.zeros(cfg.grid)
        return separated_extinction(cfg.grid, cal.params, t)

    traj = evolve(f, cfg.schedule, p, cfg.mode, cfg.solver)
    errors = {"l1": [], "l2": [], "linf": []}
    for t, u in zip(traj.times, traj.fields):
        e = u - exact(t)
        errors["l1"].append(norm_lp(e, 1))
        errors["l2"].append(norm_lp(e, 2))
        errors["linf"].append(norm_lp(e, np.inf))
    n = cfg.schedule.n
    ladder = [n, 2 * n, 4 * n]
    T = cfg.schedule.T
    finals = [norm_lp(evolve(f, Schedule(T, k, 2), p, cfg.mode, cfg.solver, stop_on_extinction=False).final
                      - exact(T), 1) for k in ladder]
    orders = [float(np.log2(finals[k] / finals[k + 1])) if finals[k + 1] > 0 and finals[k] > 0 else float("nan")
              for k in range(2)]
    return ComparisonReport(oracle, [float(t) for t in traj.times], errors, ladder, finals, orders)
