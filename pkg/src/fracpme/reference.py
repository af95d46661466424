"""Closed-form and calibrated reference solutions."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .grid import Boundary, Field, Grid, multiply_spectrum
from .operators import DiscreteOperator, _check_sigma, normalization_constant


def linear_solution(f: Field, t: float, sigma: float) -> Field:
    """``m = 1`` solution: spectral multiplication by ``exp(-|omega|^sigma t)``."""
    if not t > 0:
        raise ValueError(f"linear_solution needs t > 0, got {t}")
    if f.grid.boundary is not Boundary.PeriodicTorus:
        raise ValueError("linear_solution needs a PeriodicTorus grid")
    return multiply_spectrum(f, np.exp(-f.grid.frequency_magnitude() ** sigma * t))


def ode_limit_solution(f: Field, t: float, m: float) -> Field:
    """Pointwise solution of ``u' + |u|^{m-1} u = 0``, the ``sigma -> 0`` limit."""
    if m < 1:
        raise ValueError("the pointwise ODE formula is used for m >= 1 only")
    v = f.values
    if m == 1:
        return f.with_values(v * np.exp(-t))
    a = np.abs(v)
    with np.errstate(divide="ignore", over="ignore"):
        base = np.where(a > 0, a ** (1 - m), np.inf) + (m - 1) * t
    return f.with_values(np.sign(v) * base ** (-1.0 / (m - 1)))


# --- separated-variables extinction family ------------------------------------


@dataclass(frozen=True)
class ExtinctionProfileParams:
    """``u(x,t) = b (T - t)^alpha [c + |x - a|^2]^{-(N+sigma)/2}``."""

    sigma: float
    dim: int
    c: float
    center: tuple
    T: float
    b: float
    alpha: float

    @property
    def m(self) -> float:
        return (self.dim - self.sigma) / (self.dim + self.sigma)

    def __post_init__(self):
        _check_sigma(self.sigma)
        if not self.dim > self.sigma:
            raise ValueError("the separated family needs N > sigma")
        if not (self.c > 0 and self.b > 0 and self.T > 0):
            raise ValueError("c, b and T must be positive")


def printed_time_exponent(N, sigma) -> float:
    return (N + sigma) / (2 * N)


def separated_time_exponent(N, sigma) -> float:
    """``1/(1-m)`` with ``m = (N - sigma)/(N + sigma)``."""
    return (N + sigma) / (2 * sigma)


def spatial_profile(grid: Grid, sigma, c, center=0.0, power=1.0) -> Field:
    N = grid.dim
    r2 = grid.radius(center) ** 2
    return Field(grid, (c + r2) ** (-power * (N + sigma) / 2))


def profile_constant(N, sigma, c) -> float:
    """Continuum ``mu`` with ``(-Delta)^{sigma/2} phi^m = mu phi``.

    ``(-Delta)^{s}(1+|x|^2)^{-(N-2s)/2} = 2^{2s} Gamma((N+2s)/2)/Gamma((N-2s)/2)
    (1+|x|^2)^{-(N+2s)/2}``, rescaled to ``c + |x|^2``.
    """
    return float(
        2.0**sigma * special.gamma((N + sigma) / 2) / special.gamma((N - sigma) / 2) * c ** (sigma / 2)
    )


def _whole_line_operator(grid: Grid, sigma, c, center, extend=4) -> np.ndarray:
    """Lattice operator applied to the untruncated ``phi^m`` at window nodes.

    The lattice is extended ``extend`` windows to each side; in 1D the part
    of the sum beyond the extended lattice is added by Gauss-Legendre
    quadrature of the continuum kernel.
    """
    N, M, L = grid.dim, grid.points_per_dim, grid.half_length
    K = int(extend)
    big = Grid(N, L * (2 * K + 1), M * (2 * K + 1), Boundary.FreeSpaceWindow)
    op = DiscreteOperator(big, sigma, "kernel-freespace")
    expo = (N - sigma) / 2
    phim_big = spatial_profile(big, sigma, c, center).values ** ((N - sigma) / (N + sigma))
    out = op.apply_values(phim_big)
    sl = (slice(K * M, (K + 1) * M),) * N
    out = out[sl]
    if N == 1:
        R = big.half_length
        C = normalization_constant(1, sigma)
        z, wz = np.polynomial.legendre.leggauss(96)
        s = (z + 1) / (2 * R)
        ws = wz / (2 * R)
        y = 1.0 / s
        x = grid.axis()[:, None] - float(np.ravel(center)[0])
        dens = (c + y**2) ** (-expo) / s**2
        tail = C * np.sum(ws * dens * (np.abs(x - y) ** (-(1 + sigma)) + np.abs(x + y) ** (-(1 + sigma))), axis=1)
        out = out - tail
    return out


@dataclass
class CalibrationResult:
    params: ExtinctionProfileParams
    mu: float
    mu_continuum: float
    ratio: Field = field(repr=False)
    ratio_cv: float = 0.0
    ratio_cv_zero_exterior: float = 0.0
    core_radius: float = 0.0
    residuals: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        p = self.params
        return {
            "sigma": p.sigma, "dim": p.dim, "m": p.m, "c": p.c, "center": list(p.center), "T": p.T,
            "b": p.b, "alpha": p.alpha, "mu": self.mu, "mu_continuum": self.mu_continuum,
            "ratio_cv": self.ratio_cv, "ratio_cv_zero_exterior": self.ratio_cv_zero_exterior,
            "core_radius": self.core_radius,
            "alpha_printed": printed_time_exponent(p.dim, p.sigma),
            "alpha_separation": separated_time_exponent(p.dim, p.sigma),
            "residuals": self.residuals,
        }


class CalibrationError(RuntimeError):
    pass


def calibrate_extinction_profile(grid: Grid, sigma, c=1.0, center=0.0, T=1.0, cv_tol=0.02,
                                 core_radius=None, extend=4) -> CalibrationResult:
    """Fit ``mu``, ``alpha`` and ``b`` of the separated extinction solution.

    ``rho = A(phi^m)/phi`` is evaluated with the lattice kernel on the
    untruncated profile and must be constant (coefficient of variation at
    most ``cv_tol``) on ``|x - a| <= core_radius`` (default ``L/4``).  The
    time exponent is the candidate, among the printed ``(N+sigma)/(2N)`` and
    the separation value ``(N+sigma)/(2 sigma)``, with the smaller mid-run
    residual in the discrete equation; ``b`` then solves ``alpha b = mu b^m``.
    """
    _check_sigma(sigma)
    N = grid.dim
    if not N > sigma:
        raise ValueError("the separated family needs N > sigma")
    if grid.boundary is not Boundary.FreeSpaceWindow:
        raise ValueError("calibration runs on a FreeSpaceWindow grid")
    m = (N - sigma) / (N + sigma)
    center = tuple(np.broadcast_to(np.asarray(center, dtype=float), (N,)).tolist())
    if core_radius is None:
        core_radius = grid.half_length / 4
    phi = spatial_profile(grid, sigma, c, center)
    Aphim = _whole_line_operator(grid, sigma, c, center, extend)
    rho = Aphim / phi.values
    core = grid.radius(center) <= core_radius
    cv = float(np.std(rho[core]) / np.mean(rho[core]))
    zero_ext = DiscreteOperator(grid, sigma, "kernel-freespace").apply_values(phi.values**m) / phi.values
    cv0 = float(np.std(zero_ext[core]) / np.mean(zero_ext[core]))
    if cv > cv_tol:
        raise CalibrationError(f"ratio is not constant on the core (cv={cv:.3g} > {cv_tol}); window too small")
    idx = np.unravel_index(np.argmin(grid.radius(center)), grid.shape)
    mu = float(rho[idx])

    residuals = {}
    for name, alpha in (("printed", printed_time_exponent(N, sigma)), ("separation", separated_time_exponent(N, sigma))):
        b = (mu / alpha) ** (1.0 / (1.0 - m))
        s = 0.5 * T  # remaining time T - t at mid-run
        ut = -alpha * b * s ** (alpha - 1) * phi.values
        op_term = b**m * s ** (alpha * m) * Aphim
        res = ut + op_term
        residuals[name] = {
            "alpha": alpha,
            "b": b,
            "relative_residual": float(np.linalg.norm(res[core]) / np.linalg.norm(ut[core])),
        }
    best = min(residuals, key=lambda k: residuals[k]["relative_residual"])
    alpha, b = residuals[best]["alpha"], residuals[best]["b"]
    params = ExtinctionProfileParams(float(sigma), N, float(c), center, float(T), float(b), float(alpha))
    return CalibrationResult(
        params, mu, profile_constant(N, sigma, c), Field(grid, rho), cv, cv0, float(core_radius), residuals
    )


def separated_extinction(grid: Grid, params: ExtinctionProfileParams, t: float) -> Field:
    if t >= params.T:
        raise ValueError(f"the separated solution is defined for t < T = {params.T}")
    prof = spatial_profile(grid, params.sigma, params.c, params.center)
    return prof * (params.b * (params.T - t) ** params.alpha)
