"""One implicit step: solve ``u + tau A(|u|^{m-1} u) = g``.

``A`` is any of the discrete fractional Laplacians.  The system is the
optimality condition of a strictly convex functional, and it is solved by
damped Newton.  For ``m >= 1`` the unknown is ``u`` (Jacobian
``I + tau A diag(m|u|^{m-1})``); for ``m < 1`` the unknown is
``w = |u|^{m-1} u`` (Jacobian ``diag((1/m)|w|^{1/m-1}) + tau A``), which keeps
every Jacobian entry bounded.
"""

from __future__ import annotations

import enum
import functools
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg as sla
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .grid import Field, Grid, as_field, positive_part_integral
from .operators import DiscreteOperator, FracParams, symbol_multiplier

log = logging.getLogger(__name__)


class Variable(str, enum.Enum):
    U = "u"
    W = "w"
    AUTO = "auto"


class NonConvergence(RuntimeError):
    """Newton did not reach the residual tolerance."""

    def __init__(self, message, report=None, partial=None):
        super().__init__(message)
        self.report = report
        self.partial = partial


@dataclass(frozen=True)
class ResolventOptions:
    max_newton_iters: int = 60
    residual_tol_abs: float = 1e-10
    damping_floor: float = 2.0**-20
    variable: Variable = Variable.AUTO
    epsilon_floor: float = 1e-14
    polish: bool = True

    def __post_init__(self):
        if self.max_newton_iters < 1:
            raise ValueError("max_newton_iters must be >= 1")
        if not (self.residual_tol_abs > 0 and self.damping_floor > 0 and self.epsilon_floor > 0):
            raise ValueError("tolerances must be positive")
        object.__setattr__(self, "variable", Variable(self.variable))

    def resolve_variable(self, m) -> Variable:
        if self.variable is Variable.AUTO:
            return Variable.U if m >= 1 else Variable.W
        return self.variable


@dataclass
class SolveReport:
    iterations: int = 0
    residual: float = np.inf
    damping_events: int = 0
    converged: bool = False
    variable: str = "u"
    contraction_slack: float | None = None
    residual_history: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@functools.lru_cache(maxsize=32)
def get_operator(grid: Grid, sigma: float, mode: str, image_periods=None) -> DiscreteOperator:
    return DiscreteOperator(grid, float(sigma), mode, image_periods)


def odd_power(s, a):
    """``|s|^{a-1} s``."""
    return np.sign(s) * np.abs(s) ** a


def _wnorm(r, cell):
    return float(np.sqrt(cell * np.dot(r, r)))


def resolvent_linear(g: Field, tau: float, sigma: float) -> Field:
    """Closed-form ``m = 1`` step in the Fourier symbol basis."""
    from .grid import multiply_spectrum

    if not tau >= 0:
        raise ValueError("tau must be nonnegative")
    return multiply_spectrum(g, 1.0 / (1.0 + tau * symbol_multiplier(g.grid, sigma)))


def resolvent(g, tau, params: FracParams, mode="symbol", opts: ResolventOptions | None = None, operator=None):
    """Return ``(u, SolveReport)`` for ``u + tau A(|u|^{m-1}u) = g``."""
    opts = opts or ResolventOptions()
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    if operator is None:
        operator = get_operator(g.grid, params.sigma, mode)
    grid = operator.grid
    g = as_field(grid, g)
    mask = operator.mask
    gv = g.flat[mask]
    if not np.all(np.isfinite(gv)):
        raise FloatingPointError("resolvent data contains non-finite values")
    m = float(params.m)
    A = operator.matrix()
    cell = grid.cell_volume
    var = opts.resolve_variable(m)
    report = SolveReport(variable=var.value)

    if var is Variable.U:
        x = gv.copy()

        def residual(x):
            return x + tau * (A @ odd_power(x, m)) - gv

        def direction(x, r):
            d = m * np.maximum(np.abs(x), opts.epsilon_floor) ** (m - 1) if m != 1 else np.ones_like(x)
            Jm = tau * A * d[None, :]
            Jm[np.diag_indices_from(Jm)] += 1.0
            return np.linalg.solve(Jm, -r)

        def to_u(x):
            return x

    else:
        x = odd_power(gv, m)
        q = 1.0 / m

        def residual(x):
            return odd_power(x, q) + tau * (A @ x) - gv

        def direction(x, r):
            d = q * np.abs(x) ** (q - 1) + opts.epsilon_floor
            Jm = tau * A.copy()
            Jm[np.diag_indices_from(Jm)] += d
            try:
                return sla.cho_solve(sla.cho_factor(Jm, check_finite=False), -r, check_finite=False)
            except np.linalg.LinAlgError:
                return np.linalg.solve(Jm, -r)

        def to_u(x):
            return odd_power(x, q)

    r = residual(x)
    res = _wnorm(r, cell)
    report.residual_history.append(res)
    for it in range(opts.max_newton_iters):
        if res <= opts.residual_tol_abs:
            break
        dx = direction(x, r)
        lam = 1.0
        while True:
            xn = x + lam * dx
            rn = residual(xn)
            resn = _wnorm(rn, cell)
            if not np.isfinite(resn):
                raise FloatingPointError(f"non-finite residual at Newton iteration {it} (step {lam:g})")
            if resn <= (1 - 1e-4 * lam) * res or lam <= opts.damping_floor:
                break
            lam *= 0.5
            report.damping_events += 1
        x, r, res = xn, rn, resn
        report.iterations = it + 1
        report.residual_history.append(res)
    if opts.polish and res <= opts.residual_tol_abs and res > 0:
        # one extra full step drives the residual to roundoff, so conserved
        # quantities do not accumulate the tolerance over long runs
        xn = x + direction(x, r)
        rn = residual(xn)
        resn = _wnorm(rn, cell)
        if np.isfinite(resn) and resn < res:
            x, r, res = xn, rn, resn
            report.residual_history.append(res)
    report.residual = res
    report.converged = res <= opts.residual_tol_abs
    if not report.converged:
        log.warning("resolvent did not converge: residual %.3e after %d iterations", res, report.iterations)
    out = np.zeros(grid.size)
    out[mask] = to_u(x)
    return Field(grid, out.reshape(grid.shape)), report


def fixed_point_resolvent(g, tau, params: FracParams, mode="symbol", tol=1e-12, max_iter=200000, operator=None):
    """Independent slow solver: linearly preconditioned fixed-point iteration.

    ``m >= 1``: ``u <- (I + tau c A)^{-1}(g + tau A(c u - u^m))`` with
    ``c >= max m|u|^{m-1}``; ``m < 1``: ``w <- (c I + tau A)^{-1}(g - w^{1/m} + c w)``.
    Both maps are monotone contractions for these choices of ``c``.
    """
    if operator is None:
        operator = get_operator(g.grid, params.sigma, mode)
    grid = operator.grid
    mask = operator.mask
    gv = as_field(grid, g).flat[mask]
    A = operator.matrix()
    m = float(params.m)
    n = len(gv)
    gmax = np.max(np.abs(gv)) if gv.size else 0.0
    if m >= 1:
        c = max(m * gmax ** (m - 1), 1e-300)
        lu = sla.lu_factor(np.eye(n) + tau * c * A)
        x = gv.copy()
        for it in range(max_iter):
            xn = sla.lu_solve(lu, gv + tau * (A @ (c * x - odd_power(x, m))))
            if np.max(np.abs(xn - x)) <= tol * max(gmax, 1e-300):
                x = xn
                break
            x = xn
        u = x
    else:
        q = 1.0 / m
        c = max(q * (gmax ** (1 - m)) ** (q - 1), 1e-300) if gmax > 0 else 1.0
        lu = sla.lu_factor(c * np.eye(n) + tau * A)
        x = odd_power(gv, m)
        for it in range(max_iter):
            xn = sla.lu_solve(lu, gv - odd_power(x, q) + c * x)
            if np.max(np.abs(xn - x)) <= tol * max(np.max(np.abs(x)), 1e-300):
                x = xn
                break
            x = xn
        u = odd_power(x, q)
    out = np.zeros(grid.size)
    out[mask] = u
    return Field(grid, out.reshape(grid.shape)), it + 1


def t_contraction_gap(g1, g2, tau, params, mode="symbol", opts=None) -> float:
    """``int (u1 - u2)_+ - int (g1 - g2)_+`` for the two resolvent solutions."""
    u1, r1 = resolvent(g1, tau, params, mode, opts)
    u2, r2 = resolvent(g2, tau, params, mode, opts)
    gap = positive_part_integral(u1 - u2) - positive_part_integral(g1 - g2)
    r1.contraction_slack = r2.contraction_slack = gap
    return gap


class Resolvent(TransformerMixin, BaseEstimator):
    """Estimator-style implicit step ``g -> (I + tau A_{m,sigma})^{-1} g``.

    ``fit(grid)`` builds the operator; ``transform`` accepts a field, a
    flat value array, or a batch of rows.
    """

    def __init__(self, tau=0.01, sigma=1.0, m=1.0, mode="symbol", max_newton_iters=60,
                 residual_tol_abs=1e-10, variable="auto"):
        self.tau = tau
        self.sigma = sigma
        self.m = m
        self.mode = mode
        self.max_newton_iters = max_newton_iters
        self.residual_tol_abs = residual_tol_abs
        self.variable = variable

    def _options(self):
        return ResolventOptions(
            max_newton_iters=self.max_newton_iters,
            residual_tol_abs=self.residual_tol_abs,
            variable=Variable(self.variable),
        )

    def fit(self, X, y=None):
        if not isinstance(X, Grid):
            raise TypeError("fit expects a Grid")
        self.grid_ = X
        self.params_ = FracParams(X.dim, float(self.sigma), float(self.m))
        self.operator_ = get_operator(X, float(self.sigma), self.mode)
        self.reports_ = []
        return self

    def _solve(self, values):
        u, rep = resolvent(Field(self.grid_, values), self.tau, self.params_, self.mode,
                           self._options(), self.operator_)
        self.reports_.append(rep)
        return u

    def transform(self, X):
        check_is_fitted(self, "operator_")
        if isinstance(X, Field):
            return self._solve(X.values)
        Xa = np.asarray(X, dtype=float)
        n = self.grid_.size
        if Xa.size == n:
            return self._solve(Xa).values.reshape(Xa.shape)
        if Xa.ndim != 2 or Xa.shape[1] != n:
            raise ValueError(f"expected arrays with {n} values per row, got shape {Xa.shape}")
        return np.stack([self._solve(row).flat for row in Xa])
