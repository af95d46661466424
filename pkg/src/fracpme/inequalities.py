"""Functional inequalities checked on seeded discrete ensembles.

Stroock-Varopoulos type checks use the kernel operator on the torus: its
off-diagonal weights are nonnegative, and for such matrices the discrete
inequality holds exactly, so negative margins beyond roundoff signal a bug.
Constant estimates use the Fourier symbol for the fractional derivatives and
are judged only by their stability across two resolutions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .diagnostics import Verdict
from .grid import Boundary, Field, Grid, Spectrum, forward_transform, inverse_transform, norm_lp
from .operators import DiscreteOperator, apply_symbol
from .reference import linear_solution
from .resolvent import get_operator, odd_power
from .semigroup import Trajectory

KINDS = ("bandlimited", "bumps", "rough")


@dataclass(frozen=True)
class Ensemble:
    """``count`` reproducible random fields of one ``kind`` on ``grid``.

    ``bumps`` and ``bandlimited`` members are continuum functions sampled at
    the nodes, so the same seed on a finer grid yields the same functions.
    """

    grid: Grid
    count: int = 200
    kind: str = "bandlimited"
    seed: int = 0
    max_wavenumber: int = 8

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown ensemble kind {self.kind!r}; choose from {KINDS}")
        if self.count < 1:
            raise ValueError("count must be positive")

    def on(self, grid: Grid) -> "Ensemble":
        return Ensemble(grid, self.count, self.kind, self.seed, self.max_wavenumber)

    def fields(self) -> list:
        rng = np.random.default_rng(self.seed)
        return [self._member(rng) for _ in range(self.count)]

    def __iter__(self):
        return iter(self.fields())

    def _member(self, rng) -> Field:
        g = self.grid
        X = g.coordinates()
        L = g.half_length
        if self.kind == "bandlimited":
            # random trigonometric polynomial with |k_a| <= K, sampled exactly by one inverse FFT
            K = self.max_wavenumber
            if 2 * K >= g.points_per_dim:
                raise ValueError("max_wavenumber must stay below M/2")
            ks = np.arange(-K, K + 1)
            kk = np.stack(np.meshgrid(*([ks] * g.dim), indexing="ij"), axis=-1).reshape(-1, g.dim)
            amp = rng.normal(size=len(kk)) / (1.0 + np.linalg.norm(kk, axis=1))
            phase = rng.uniform(0, 2 * np.pi, size=len(kk))
            coeffs = np.zeros(g.shape, dtype=complex)
            coeffs[tuple((kk % g.points_per_dim).T)] = (2 * L) ** g.dim * amp * np.exp(1j * phase)
            return inverse_transform(Spectrum(g, coeffs))
        if self.kind == "bumps":
            v = np.zeros(g.shape)
            for _ in range(int(rng.integers(1, 4))):
                c = rng.uniform(-L / 4, L / 4, size=g.dim)
                w = rng.uniform(0.05, 0.15) * L
                a = rng.uniform(0.2, 1.0) * rng.choice([-1.0, 1.0])
                r2 = sum((x - ci) ** 2 for x, ci in zip(X, c))
                v = v + a * np.exp(-r2 / (2 * w**2))
            return Field(g, v)
        return Field(g, rng.standard_normal(g.shape))

    def describe(self) -> dict:
        return {"kind": self.kind, "count": self.count, "seed": self.seed, "grid": self.grid.to_dict()}


@dataclass(frozen=True)
class Margin:
    lhs: float
    rhs: float

    @property
    def margin(self) -> float:
        return self.lhs - self.rhs

    @property
    def scale(self) -> float:
        return abs(self.lhs) + abs(self.rhs)

    def ok(self, rel=1e-10) -> bool:
        return self.margin >= -rel * max(self.scale, 1e-300)


def _kernel_operator(grid: Grid, gamma, operator=None) -> DiscreteOperator:
    if operator is not None:
        return operator
    if grid.boundary is not Boundary.PeriodicTorus:
        raise ValueError("inequality checks run on a PeriodicTorus grid")
    return get_operator(grid, float(gamma), "kernel-torus")


def check_stroock_varopoulos(v: Field, gamma, q, operator=None) -> Margin:
    """``<|v|^{q-2} v, A v>`` against ``4(q-1)/q^2 <A |v|^{q/2}, |v|^{q/2}>``."""
    if not 0 < gamma < 2:
        raise ValueError("gamma must lie in (0, 2)")
    if not q > 1:
        raise ValueError("q must exceed 1")
    A = _kernel_operator(v.grid, gamma, operator)
    vals = v.values
    lhs = v.grid.cell_volume * float(np.sum(odd_power(vals, q - 1) * A.apply_values(vals)))
    rhs = 4 * (q - 1) / q**2 * A.quadratic_form(Field(v.grid, np.abs(vals) ** (q / 2)))
    return Margin(lhs, rhs)


@dataclass(frozen=True)
class SignPair:
    """``(psi, Psi)`` with ``psi' = (Psi')^2``."""

    name: str
    psi: object
    Psi: object


def identity_pair() -> SignPair:
    return SignPair("identity", lambda s: s, lambda s: s)


def power_pair(q) -> SignPair:
    """``psi = |s|^{q-2}s``, ``Psi = (2 sqrt(q-1)/q) |s|^{q/2-1} s``."""
    c = 2 * np.sqrt(q - 1) / q
    return SignPair(f"power(q={q:g})", lambda s: odd_power(s, q - 1), lambda s: c * odd_power(s, q / 2))


def smoothed_sign_pair(eps) -> SignPair:
    """``psi = tanh(s/eps)``, ``Psi = 2 sqrt(eps) arctan(tanh(s/(2 eps)))``."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    return SignPair(
        f"smoothed-sign(eps={eps:g})",
        lambda s: np.tanh(s / eps),
        lambda s: 2 * np.sqrt(eps) * np.arctan(np.tanh(s / (2 * eps))),
    )


def check_generalized_sv(v: Field, gamma, pair: SignPair, operator=None) -> Margin:
    A = _kernel_operator(v.grid, gamma, operator)
    vals = v.values
    lhs = v.grid.cell_volume * float(np.sum(pair.psi(vals) * A.apply_values(vals)))
    rhs = A.quadratic_form(Field(v.grid, pair.Psi(vals)))
    return Margin(lhs, rhs)


def sv_ensemble_verdict(ensemble: Ensemble, gammas=(0.5, 1.0, 1.5), qs=(1.5, 3.0), rel=1e-10) -> Verdict:
    fields = ensemble.fields()
    worst = np.inf
    count = 0
    for gamma in gammas:
        op = _kernel_operator(ensemble.grid, gamma)
        for q in qs:
            for v in fields:
                mg = check_stroock_varopoulos(v, gamma, q, op)
                worst = min(worst, mg.margin / max(mg.scale, 1e-300))
                count += 1
    return Verdict("stroock-varopoulos", worst >= -rel, worst, -rel, "inequality.stroock-varopoulos",
                   {"checks": count, "gammas": list(gammas), "qs": list(qs), **ensemble.describe()})


# --- constants ------------------------------------------------------------------------


def ngn_exponents(N, p, r, gamma):
    """``(r2, alpha)`` with ``r2 = N(rp + r - p)/(r(N - gamma))``, ``alpha = p(r-1)/r``."""
    if not N > gamma:
        raise ValueError("the exponent formula needs N > gamma")
    r2 = N * (r * p + r - p) / (r * (N - gamma))
    return r2, p * (r - 1) / r


def hls_exponent(N, r, gamma):
    if not r > 1:
        raise ValueError("r must exceed 1")
    if not N > gamma * r:
        raise ValueError(f"HLS needs N > gamma r (got N={N}, gamma r={gamma * r:g})")
    return N * r / (N - gamma * r)


@dataclass
class ConstantEstimate:
    name: str
    sup: float
    ratios: list = field(repr=False)
    exponents: dict = field(default_factory=dict)
    ensemble: dict = field(default_factory=dict)

    def to_json(self) -> str:
        q = np.quantile(self.ratios, [0, 0.5, 1]).tolist() if self.ratios else []
        return json.dumps({"name": self.name, "sup": self.sup, "quantiles": q, "exponents": self.exponents,
                           "ensemble": self.ensemble})


def _frac_derivative(v: Field, gamma) -> Field:
    return apply_symbol(v, gamma)


def estimate_ngn_constant(ensemble: Ensemble, p, r, gamma) -> ConstantEstimate:
    N = ensemble.grid.dim
    r2, alpha = ngn_exponents(N, p, r, gamma)
    ratios = []
    for v in ensemble:
        den = norm_lp(_frac_derivative(v, gamma), r) * norm_lp(v, p) ** alpha
        if den > 0:
            ratios.append(norm_lp(v, r2) ** (alpha + 1) / den)
    return ConstantEstimate("ngn", float(max(ratios)), ratios, {"p": p, "r": r, "gamma": gamma, "r2": r2,
                                                                 "alpha": alpha}, ensemble.describe())


def estimate_hls_constant(ensemble: Ensemble, r, gamma) -> ConstantEstimate:
    N = ensemble.grid.dim
    r1 = hls_exponent(N, r, gamma)
    ratios = []
    for v in ensemble:
        den = norm_lp(_frac_derivative(v, gamma), r)
        if den > 0:
            ratios.append(norm_lp(v, r1) / den)
    return ConstantEstimate("hls", float(max(ratios)), ratios, {"r": r, "gamma": gamma, "r1": r1},
                            ensemble.describe())


def stability_verdict(coarse: ConstantEstimate, fine: ConstantEstimate, tol=0.2) -> Verdict:
    rel = abs(fine.sup - coarse.sup) / max(coarse.sup, 1e-300)
    ref = "inequality.ngn" if coarse.name == "ngn" else "inequality.hls"
    return Verdict(f"{coarse.name}-stability", rel <= tol, rel, tol, ref,
                   {"coarse": coarse.sup, "fine": fine.sup, "exponents": coarse.exponents,
                    "coarse_grid": coarse.ensemble.get("grid"), "fine_grid": fine.ensemble.get("grid")})


# --- energy identity --------------------------------------------------------------------


def check_energy_identity(traj: Trajectory, params=None, tol=0.03) -> Verdict:
    """``E(T) + ||u(T)||_{m+1}^{m+1}/(m+1)`` against ``||f||_{m+1}^{m+1}/(m+1)``."""
    params = params or traj.params
    q = params.m + 1
    rhs = norm_lp(traj.fields[0], q) ** q / q
    lhs = traj.energy[-1] + norm_lp(traj.final, q) ** q / q
    if rhs == 0:
        return Verdict("energy-identity", lhs == 0, 0.0, tol, "energy.identity")
    rel = abs(lhs - rhs) / rhs
    return Verdict("energy-identity", rel <= tol, rel, tol, "energy.identity",
                   {"lhs": lhs, "rhs": rhs, "m": params.m, "tau": traj.tau})


def linear_energy_identity(f: Field, T, sigma, nodes=96, tol=1e-8) -> Verdict:
    """``m = 1``: quadrature in time of ``||(-Delta)^{sigma/4} u(s)||^2`` for the exact solution.

    The dissipation rate is smooth but stiff near ``s = 0``; Gauss-Legendre
    nodes are placed in ``log`` spacing panels to resolve it.
    """
    g = f.grid
    edges = np.concatenate([[0.0], T * np.geomspace(1e-6, 1.0, 13)])
    z, w = np.polynomial.legendre.leggauss(nodes // 8 or 8)
    diss = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        for zi, wi in zip(z, w):
            s = 0.5 * (b - a) * zi + 0.5 * (a + b)
            u = linear_solution(f, s, sigma)
            diss += 0.5 * (b - a) * wi * float(g.cell_volume * np.sum(u.values * apply_symbol(u, sigma).values))
    lhs = diss + 0.5 * norm_lp(linear_solution(f, T, sigma), 2) ** 2
    rhs = 0.5 * norm_lp(f, 2) ** 2
    rel = abs(lhs - rhs) / rhs if rhs > 0 else abs(lhs)
    return Verdict("energy-identity-linear", rel <= tol, rel, tol, "energy.identity", {"lhs": lhs, "rhs": rhs})


def spectral_energy(f: Field, sigma) -> float:
    """``sum |omega|^sigma |f_hat|^2 / vol``, the continuum seminorm of the samples."""
    c = forward_transform(f).coeffs
    vol = (2 * f.grid.half_length) ** f.grid.dim
    return float(np.sum(f.grid.frequency_magnitude() ** sigma * np.abs(c) ** 2) / vol)


__all__ = [
    "Ensemble", "Margin", "SignPair", "identity_pair", "power_pair", "smoothed_sign_pair",
    "check_stroock_varopoulos", "check_generalized_sv", "sv_ensemble_verdict", "ngn_exponents",
    "hls_exponent", "ConstantEstimate", "estimate_ngn_constant", "estimate_hls_constant",
    "stability_verdict", "check_energy_identity", "linear_energy_identity", "spectral_energy",
]
