"""Discrete realizations of the fractional Laplacian ``(-Delta)^{sigma/2}``.

Four operator modes act on :class:`~fracpme.grid.Field` objects:

``symbol``
    Fourier multiplier ``|omega|^sigma`` on the torus.
``kernel-torus``
    hypersingular lattice sum ``C h^N sum_j (u_i - u_j)/|x_i - x_j|^{N+sigma}``
    over the periodized lattice, plus a nearest-neighbour singular-cell term.
``kernel-freespace``
    the same lattice sum on ``Z^N`` with the field extended by zero outside
    the window.
``dirichlet``
    spectral operator ``sum_k lambda_k^{sigma/2} u_k phi_k`` in the sine basis.

The singular-cell weight is ``c(sigma) C h^{-sigma}`` on the second difference,
with ``c = -zeta(sigma - 1)`` in 1D and ``c = -zeta(sigma/2) beta(sigma/2)`` in
2D (``beta`` is the Dirichlet beta function).  These are the constants that
cancel the ``|theta|^2`` defect between the lattice sum and the continuum
symbol, so the kernel operator is consistent with ``|omega|^sigma`` to order
``h^{4 - sigma}`` on smooth data while keeping every off-diagonal weight
nonnegative.
"""

from __future__ import annotations

import functools
import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

import mpmath
import numpy as np
from scipy import signal, special
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .grid import Boundary, Field, Grid, as_field, multiply_spectrum

MODES = ("symbol", "kernel-torus", "kernel-freespace", "dirichlet")

_MODE_BOUNDARY = {
    "symbol": Boundary.PeriodicTorus,
    "kernel-torus": Boundary.PeriodicTorus,
    "kernel-freespace": Boundary.FreeSpaceWindow,
    "dirichlet": Boundary.DirichletBox,
}

DENSE_LIMIT = 4096


def _check_sigma(sigma):
    if not 0 < sigma < 2:
        raise ValueError(f"sigma must lie in (0, 2), got {sigma}")


def normalization_constant(N, sigma) -> float:
    """``C_{N,sigma}`` of the hypersingular-integral representation."""
    _check_sigma(sigma)
    return float(
        2.0 ** (sigma - 1)
        * sigma
        * special.gamma((N + sigma) / 2)
        / (np.pi ** (N / 2) * special.gamma(1 - sigma / 2))
    )


def extension_constant(sigma) -> float:
    """``mu_sigma``, the Dirichlet-to-Neumann normalization of the extension."""
    _check_sigma(sigma)
    return float(2.0 ** (sigma - 1) * special.gamma(sigma / 2) / special.gamma(1 - sigma / 2))


def mode_boundary(mode: str) -> Boundary:
    if mode not in _MODE_BOUNDARY:
        raise ValueError(f"unknown operator mode {mode!r}; choose from {MODES}")
    return _MODE_BOUNDARY[mode]


# --- critical exponents ---------------------------------------------------


@dataclass(frozen=True)
class FracParams:
    dim: int
    sigma: float
    m: float

    def __post_init__(self):
        _check_sigma(self.sigma)
        if not self.m > 0:
            raise ValueError(f"m must be positive, got {self.m}")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")

    @property
    def m_star(self) -> float:
        return max(self.dim - self.sigma, 0.0) / self.dim

    @property
    def p_star(self) -> float:
        return (1 - self.m) * self.dim / self.sigma

    def gamma_p(self, p=1.0) -> float:
        return 1.0 / (self.m - 1 + self.sigma * p / self.dim)

    def delta_p(self, p=1.0) -> float:
        return self.sigma * p * self.gamma_p(p) / self.dim

    def to_dict(self) -> dict:
        return {"dim": self.dim, "sigma": self.sigma, "m": self.m}


def critical_exponents(N, sigma, m, p=1.0):
    """Return ``(m_star, p_star, gamma_p, delta_p)``."""
    fp = FracParams(N, sigma, m)
    return fp.m_star, fp.p_star, fp.gamma_p(p), fp.delta_p(p)


# --- lattice constants ------------------------------------------------------


@functools.lru_cache(maxsize=None)
def singular_cell_constant(N, sigma) -> float:
    """Weight ``c(sigma)`` of the nearest-neighbour correction (see module doc)."""
    _check_sigma(sigma)
    if N == 1:
        return float(-mpmath.zeta(sigma - 1))
    if N == 2:
        s = sigma / 2
        beta = mpmath.power(4, -s) * (mpmath.zeta(s, 0.25) - mpmath.zeta(s, 0.75))
        return float(-mpmath.zeta(s) * beta)
    raise ValueError("only N in {1, 2} is supported")


@functools.lru_cache(maxsize=None)
def lattice_zeta(N, sigma) -> float:
    """``sum_{j in Z^N, j != 0} |j|^{-(N + sigma)}``."""
    if N == 1:
        return float(2 * mpmath.zeta(1 + sigma))
    s = 1 + sigma / 2
    beta = mpmath.power(4, -s) * (mpmath.zeta(s, 0.25) - mpmath.zeta(s, 0.75))
    return float(4 * mpmath.zeta(s) * beta)


def _torus_tail_2d(sigma, K, M, sym) -> np.ndarray:
    """Images outside the ``(2K+1)^2`` block, as a corrected continuum integral.

    The exterior integral over the square shifted by the offset ``d`` is
    expanded to second order in ``d``, and the cell-midpoint rule is
    corrected by its ``M^2/24`` Laplacian term.
    """
    s = 2 + sigma
    a = (K + 0.5) * M
    E0 = a ** (-sigma) * _square_exterior_integral(sigma)
    eta = np.linspace(-1, 1, 4001)
    J = np.trapezoid((1 + eta**2) ** (-s / 2 - 1), eta)
    H = 2 * s * a ** (-s) * J
    d2 = sym[:, None] ** 2 + sym[None, :] ** 2
    return (E0 + H * (0.5 * d2 - M**2 / 12.0)) / M**2


def _square_exterior_integral(sigma) -> float:
    # int over R^2 minus [-1,1]^2 of |z|^{-(2+sigma)} dz
    th = np.linspace(0, np.pi / 4, 2001)
    vals = np.cos(th) ** sigma
    return float(8.0 / sigma * np.trapezoid(vals, th))


# --- kernel tables ----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class KernelTable:
    """Pairwise weights of the lattice hypersingular sum for one grid and sigma.

    ``weights`` is indexed by index offset: for the torus it has shape
    ``(M,)*N`` (offset ``d`` mod ``M``); for the free-space window it has shape
    ``(2M-1,)*N`` centred on offset zero.  The central entry is zero.
    ``diagonal`` is the row sum including exterior lattice nodes.
    """

    grid: Grid
    sigma: float
    mode: str
    image_periods: int | None
    weights: np.ndarray
    diagonal: float
    correction: float

    def key(self) -> tuple:
        g = self.grid
        return (g.dim, g.points_per_dim, g.half_length, self.sigma, self.mode, self.image_periods)

    def matches(self, grid: Grid, sigma: float) -> bool:
        return (
            grid.dim == self.grid.dim
            and grid.points_per_dim == self.grid.points_per_dim
            and grid.half_length == self.grid.half_length
            and float(sigma) == self.sigma
        )

    @functools.cached_property
    def torus_multiplier(self) -> np.ndarray:
        """Eigenvalues of the circulant kernel operator on the FFT lattice."""
        if self.mode != "kernel-torus":
            raise ValueError("multiplier only exists for the torus table")
        stencil = -self.weights.copy()
        stencil[(0,) * self.grid.dim] = self.diagonal
        return np.fft.fftn(stencil).real

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / f"kernel_{cache_key(*self.key())}.npz"
        np.savez(
            path,
            dim=self.grid.dim,
            half_length=self.grid.half_length,
            points_per_dim=self.grid.points_per_dim,
            boundary=int(self.grid.boundary),
            sigma=self.sigma,
            mode=self.mode,
            image_periods=-1 if self.image_periods is None else self.image_periods,
            weights=self.weights,
            diagonal=self.diagonal,
            correction=self.correction,
        )
        return path

    @classmethod
    def load(cls, path) -> "KernelTable":
        z = np.load(path, allow_pickle=False)
        grid = Grid(int(z["dim"]), float(z["half_length"]), int(z["points_per_dim"]), Boundary(int(z["boundary"])))
        ip = int(z["image_periods"])
        return cls(
            grid=grid,
            sigma=float(z["sigma"]),
            mode=str(z["mode"]),
            image_periods=None if ip < 0 else ip,
            weights=z["weights"],
            diagonal=float(z["diagonal"]),
            correction=float(z["correction"]),
        )


def cache_key(N, M, L, sigma, mode, image_periods) -> str:
    text = f"{N}|{M}|{L!r}|{sigma!r}|{mode}|{image_periods}"
    return hashlib.sha1(text.encode()).hexdigest()[:16]


def build_kernel_table(grid: Grid, sigma: float, mode=None, image_periods=None, cache_dir=None) -> KernelTable:
    """Precompute the lattice weights for ``grid``.

    ``image_periods=None`` sums the torus images exactly in 1D (Hurwitz zeta)
    and uses 4 periods in 2D; integer values truncate the image sum.  In both
    truncated cases the far images are replaced by their continuum integral.
    """
    _check_sigma(sigma)
    sigma = float(sigma)
    if mode is None:
        mode = "kernel-freespace" if grid.boundary is Boundary.FreeSpaceWindow else "kernel-torus"
    if mode not in ("kernel-torus", "kernel-freespace"):
        raise ValueError(f"kernel tables exist for kernel modes only, got {mode!r}")
    if cache_dir is not None:
        path = Path(cache_dir) / f"kernel_{cache_key(grid.dim, grid.points_per_dim, grid.half_length, sigma, mode, image_periods)}.npz"
        if path.exists():
            return KernelTable.load(path)

    N, M, h = grid.dim, grid.points_per_dim, grid.spacing
    C = normalization_constant(N, sigma)
    scale = C * h ** (-sigma)
    c = singular_cell_constant(N, sigma)
    s = N + sigma

    if mode == "kernel-torus":
        if N == 1 and image_periods is None:
            d = np.arange(1, M) / M
            w = np.zeros(M)
            w[1:] = M ** (-s) * (special.zeta(s, d) + special.zeta(s, 1 - d))
        else:
            K = 4 if image_periods is None else int(image_periods)
            offs = np.arange(M)
            imgs = np.arange(-K, K + 1) * M
            if N == 1:
                D = np.abs(offs[:, None] + imgs[None, :]).astype(float)
                with np.errstate(divide="ignore"):
                    w = np.where(D > 0, D ** (-s), 0.0).sum(axis=1)
                # images beyond +-K: midpoint-corrected continuum sum
                for d in (offs, -offs):
                    a = (K + 0.5) * M + d
                    w += a ** (-sigma) / (sigma * M) - s * M * a ** (-s - 1) / 24.0
            else:
                sym = (offs + M // 2) % M - M // 2
                w = np.zeros((M, M))
                for n1 in imgs:
                    for n2 in imgs:
                        D2 = (sym[:, None] + n1) ** 2 + (sym[None, :] + n2) ** 2
                        with np.errstate(divide="ignore"):
                            w += np.where(D2 > 0, D2.astype(float) ** (-s / 2), 0.0)
                w += _torus_tail_2d(sigma, K, M, sym)
            w[(0,) * N] = 0.0
        # nearest-neighbour singular-cell correction
        for ax in range(N):
            for sgn in (1, -1):
                idx = [0] * N
                idx[ax] = sgn % M
                w[tuple(idx)] += c
        w = w * scale
        diag = float(w.sum())
    else:
        offs = np.arange(-(M - 1), M)
        if N == 1:
            D = np.abs(offs).astype(float)
        else:
            D = np.sqrt(offs[:, None] ** 2 + offs[None, :] ** 2).astype(float)
        with np.errstate(divide="ignore"):
            w = np.where(D > 0, D ** (-s), 0.0)
        centre = (M - 1,) * N
        for ax in range(N):
            for sgn in (1, -1):
                idx = list(centre)
                idx[ax] += sgn
                w[tuple(idx)] += c
        w = w * scale
        # row sum over the full lattice: exterior nodes hold zero
        diag = float(scale * (lattice_zeta(N, sigma) + 2 * N * c))

    table = KernelTable(grid, sigma, mode, image_periods, w, diag, float(c))
    if cache_dir is not None:
        table.save(cache_dir)
    return table


# --- operator applications --------------------------------------------------


def symbol_multiplier(grid: Grid, sigma: float) -> np.ndarray:
    return grid.frequency_magnitude() ** sigma


def apply_symbol(fld: Field, sigma: float) -> Field:
    _check_sigma(sigma)
    if fld.grid.boundary is not Boundary.PeriodicTorus:
        raise ValueError("apply_symbol needs a PeriodicTorus grid")
    return multiply_spectrum(fld, symbol_multiplier(fld.grid, sigma))


def apply_kernel(fld: Field, sigma: float, kernel_table: KernelTable | None = None) -> Field:
    grid = fld.grid
    if kernel_table is None:
        kernel_table = build_kernel_table(grid, sigma)
    if not kernel_table.matches(grid, sigma):
        raise ValueError("kernel table was built for a different grid or sigma")
    if kernel_table.mode == "kernel-torus":
        if grid.boundary is not Boundary.PeriodicTorus:
            raise ValueError("torus kernel table applied to a non-torus grid")
        return multiply_spectrum(fld, kernel_table.torus_multiplier)
    if grid.boundary is Boundary.DirichletBox:
        raise ValueError("kernel operators do not act on DirichletBox grids")
    u = fld.values
    conv = signal.fftconvolve(u, kernel_table.weights, mode="same")
    return Field(grid, kernel_table.diagonal * u - conv)


def apply_dirichlet(fld: Field, sigma: float) -> Field:
    _check_sigma(sigma)
    if fld.grid.boundary is not Boundary.DirichletBox:
        raise ValueError("apply_dirichlet needs a DirichletBox grid")
    return multiply_spectrum(fld, symbol_multiplier(fld.grid, sigma))


def heat_kernel(grid: Grid, sigma: float, t: float, center=0.0) -> Field:
    """Periodized fractional heat kernel ``K_sigma(x - center, t)`` on the torus."""
    _check_sigma_closed(sigma)
    if not t > 0:
        raise ValueError(f"heat_kernel needs t > 0, got {t}")
    if grid.boundary is not Boundary.PeriodicTorus:
        raise ValueError("heat_kernel needs a PeriodicTorus grid")
    from .grid import Spectrum, inverse_transform

    w = grid.frequencies()
    W = np.meshgrid(*([w] * grid.dim), indexing="ij")
    center = np.broadcast_to(np.asarray(center, dtype=float), (grid.dim,))
    shift = np.exp(-1j * sum(Wa * ca for Wa, ca in zip(W, center)))
    coeffs = np.exp(-grid.frequency_magnitude() ** sigma * t) * shift
    return inverse_transform(Spectrum(grid, coeffs))


def _check_sigma_closed(sigma):
    # the heat kernel is also meaningful at sigma = 2 (Gaussian)
    if not 0 < sigma <= 2:
        raise ValueError(f"sigma must lie in (0, 2], got {sigma}")


# --- operator object used by the solvers -------------------------------------


class DiscreteOperator:
    """A fixed discrete fractional Laplacian on one grid.

    Acts on full fields; ``matrix()`` returns the dense matrix restricted to
    the unknown nodes (all nodes except a Dirichlet boundary).
    """

    def __init__(self, grid: Grid, sigma: float, mode: str, image_periods=None, cache_dir=None):
        _check_sigma(sigma)
        expected = mode_boundary(mode)
        if grid.boundary is not expected:
            raise ValueError(f"mode {mode!r} needs a {expected.name} grid, got {grid.boundary.name}")
        self.grid = grid
        self.sigma = float(sigma)
        self.mode = mode
        self.table = None
        if mode.startswith("kernel"):
            self.table = build_kernel_table(grid, sigma, mode, image_periods, cache_dir)
        self.mask = grid.interior_mask().ravel()
        self._matrix = None

    @property
    def n_unknowns(self) -> int:
        return int(self.mask.sum())

    def apply_values(self, values: np.ndarray) -> np.ndarray:
        v = np.asarray(values, dtype=float).reshape(self.grid.shape)
        if self.mode == "symbol":
            mult = symbol_multiplier(self.grid, self.sigma)
            out = np.fft.ifftn(np.fft.fftn(v) * mult).real
        elif self.mode == "kernel-torus":
            out = np.fft.ifftn(np.fft.fftn(v) * self.table.torus_multiplier).real
        elif self.mode == "kernel-freespace":
            out = self.table.diagonal * v - signal.fftconvolve(v, self.table.weights, mode="same")
        else:
            out = multiply_spectrum(
                Field(self.grid, np.where(self.grid.interior_mask(), v, 0.0)),
                symbol_multiplier(self.grid, self.sigma),
            ).values
        return out

    def __call__(self, fld) -> Field:
        fld = as_field(self.grid, fld)
        return Field(self.grid, self.apply_values(fld.values))

    def quadratic_form(self, fld) -> float:
        """``h^N <v, A v>``, the discrete ``||(-Delta)^{sigma/4} v||_2^2``."""
        fld = as_field(self.grid, fld)
        return float(self.grid.cell_volume * np.sum(fld.values * self.apply_values(fld.values)))

    def matrix(self) -> np.ndarray:
        if self._matrix is None:
            if self.n_unknowns > DENSE_LIMIT:
                raise MemoryError(f"dense operator with {self.n_unknowns} unknowns exceeds the limit {DENSE_LIMIT}")
            self._matrix = self._build_matrix()
            self._matrix.setflags(write=False)
        return self._matrix

    def _build_matrix(self) -> np.ndarray:
        g = self.grid
        M, N = g.points_per_dim, g.dim
        idx = np.indices(g.shape).reshape(N, -1)
        if self.mode in ("symbol", "kernel-torus"):
            if self.mode == "symbol":
                mult = symbol_multiplier(g, self.sigma)
            else:
                mult = self.table.torus_multiplier
            col = np.fft.ifftn(mult).real
            diff = tuple((idx[a][:, None] - idx[a][None, :]) % M for a in range(N))
            return col[diff]
        if self.mode == "kernel-freespace":
            W = self.table.weights
            diff = tuple(idx[a][:, None] - idx[a][None, :] + (M - 1) for a in range(N))
            A = -W[diff]
            A[np.diag_indices_from(A)] = self.table.diagonal
            return A
        # Dirichlet: orthonormal sine transform on interior nodes
        k = np.arange(1, M)
        S = np.sqrt(2.0 / M) * np.sin(np.pi * np.outer(k, k) / M)
        lam = symbol_multiplier(g, self.sigma).ravel()
        if N == 2:
            S = np.kron(S, S)
        return (S.T * lam) @ S


class FractionalLaplacian(TransformerMixin, BaseEstimator):
    """Estimator-style wrapper: ``fit(grid)`` prepares the operator,
    ``transform(values)`` applies it to one field or a batch of fields."""

    def __init__(self, sigma=1.0, mode="symbol", image_periods=None):
        self.sigma = sigma
        self.mode = mode
        self.image_periods = image_periods

    def fit(self, X, y=None):
        if not isinstance(X, Grid):
            raise TypeError("fit expects a Grid")
        self.operator_ = DiscreteOperator(X, self.sigma, self.mode, self.image_periods)
        self.grid_ = X
        return self

    def transform(self, X):
        check_is_fitted(self, "operator_")
        if isinstance(X, Field):
            return self.operator_(X)
        Xa = np.asarray(X, dtype=float)
        n = self.grid_.size
        if Xa.size == n:
            return self.operator_.apply_values(Xa).reshape(Xa.shape)
        if Xa.ndim != 2 or Xa.shape[1] != n:
            raise ValueError(f"expected arrays with {n} values per row, got shape {Xa.shape}")
        return np.stack([self.operator_.apply_values(row).ravel() for row in Xa])


def periodized_cauchy(x, t, period) -> np.ndarray:
    """``sum_n (1/pi) t / (t^2 + (x + n P)^2)`` in closed form."""
    a = 2 * math.pi / period
    return (1.0 / period) * np.sinh(a * t) / (np.cosh(a * t) - np.cos(a * np.asarray(x)))
