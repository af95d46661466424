"""Uniform grids, nodal fields, discrete transforms and norms.

Every field lives on a box ``[-L, L)^N`` sampled at ``x_i = -L + i h`` with
``h = 2L / M``.  Three boundary modes share this node layout:

``PeriodicTorus``
    the box is a torus; transforms are FFTs.
``FreeSpaceWindow``
    the box is a window into ``R^N``; the field is zero outside it.
``DirichletBox``
    nodes with ``i = 0`` on any axis lie on the boundary and carry zero;
    the remaining ``(M - 1)^N`` nodes are expanded in the sine eigenbasis.
"""

from __future__ import annotations

import enum
import io
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import fft as sfft


class Boundary(enum.IntEnum):
    PeriodicTorus = 0
    FreeSpaceWindow = 1
    DirichletBox = 2

    @classmethod
    def parse(cls, value) -> "Boundary":
        if isinstance(value, Boundary):
            return value
        if isinstance(value, str):
            key = value.replace("-", "").replace("_", "").lower()
            aliases = {
                "periodictorus": cls.PeriodicTorus,
                "torus": cls.PeriodicTorus,
                "periodic": cls.PeriodicTorus,
                "freespacewindow": cls.FreeSpaceWindow,
                "freespace": cls.FreeSpaceWindow,
                "dirichletbox": cls.DirichletBox,
                "dirichlet": cls.DirichletBox,
            }
            if key in aliases:
                return aliases[key]
        return cls(int(value))


@dataclass(frozen=True)
class Grid:
    """Uniform tensor grid on ``[-L, L)^N``."""

    dim: int
    half_length: float
    points_per_dim: int
    boundary: Boundary = Boundary.PeriodicTorus

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if not self.half_length > 0 or not np.isfinite(self.half_length):
            raise ValueError(f"half_length must be positive, got {self.half_length}")
        M = self.points_per_dim
        if int(M) != M or M < 8 or M % 2:
            raise ValueError(f"points_per_dim must be an even integer >= 8, got {M}")
        object.__setattr__(self, "points_per_dim", int(M))
        object.__setattr__(self, "half_length", float(self.half_length))
        object.__setattr__(self, "boundary", Boundary.parse(self.boundary))

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_length / self.points_per_dim

    @property
    def shape(self) -> tuple:
        return (self.points_per_dim,) * self.dim

    @property
    def size(self) -> int:
        return self.points_per_dim**self.dim

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dim

    def axis(self) -> np.ndarray:
        return -self.half_length + self.spacing * np.arange(self.points_per_dim)

    def coordinates(self) -> tuple:
        """Nodal coordinate arrays, one per axis, each of shape ``self.shape``."""
        ax = self.axis()
        return tuple(np.meshgrid(*([ax] * self.dim), indexing="ij"))

    def radius(self, center=0.0) -> np.ndarray:
        center = np.broadcast_to(np.asarray(center, dtype=float), (self.dim,))
        return np.sqrt(sum((X - c) ** 2 for X, c in zip(self.coordinates(), center)))

    def frequencies(self) -> np.ndarray:
        """Per-axis frequencies.

        Torus and free-space: ``pi k / L`` in FFT order, ``k in [-M/2, M/2)``.
        Dirichlet: sine rates ``pi k / (2L)``, ``k = 1 .. M-1``.
        """
        M, L = self.points_per_dim, self.half_length
        if self.boundary is Boundary.DirichletBox:
            return np.pi * np.arange(1, M) / (2.0 * L)
        return np.pi * np.fft.fftfreq(M, d=1.0 / M) / L

    def frequency_magnitude(self) -> np.ndarray:
        """``|omega|`` on the full frequency lattice (shape matches the spectrum)."""
        w = self.frequencies()
        grids = np.meshgrid(*([w] * self.dim), indexing="ij")
        return np.sqrt(sum(g**2 for g in grids))

    def interior_mask(self) -> np.ndarray:
        """Nodes carrying unknowns (all nodes except the Dirichlet boundary)."""
        mask = np.ones(self.shape, dtype=bool)
        if self.boundary is Boundary.DirichletBox:
            for ax in range(self.dim):
                idx = [slice(None)] * self.dim
                idx[ax] = 0
                mask[tuple(idx)] = False
        return mask

    def with_boundary(self, boundary) -> "Grid":
        return Grid(self.dim, self.half_length, self.points_per_dim, boundary)

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "half_length": self.half_length,
            "points_per_dim": self.points_per_dim,
            "boundary": self.boundary.name,
        }


def make_grid(dim, half_length, points_per_dim, boundary=Boundary.PeriodicTorus) -> Grid:
    return Grid(int(dim), half_length, points_per_dim, Boundary.parse(boundary))


@dataclass(frozen=True, eq=False)
class Field:
    """Real nodal samples on a :class:`Grid`.  Values are read-only."""

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.size != self.grid.size:
            raise ValueError(f"field has {v.size} values, grid has {self.grid.size} nodes")
        v = v.reshape(self.grid.shape)
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def with_values(self, values) -> "Field":
        return Field(self.grid, values)

    def _other(self, other):
        if isinstance(other, Field):
            if other.grid != self.grid:
                raise ValueError("fields live on different grids")
            return other.values
        return other

    def __add__(self, other):
        return self.with_values(self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return self.with_values(self.values - self._other(other))

    def __rsub__(self, other):
        return self.with_values(self._other(other) - self.values)

    def __mul__(self, other):
        return self.with_values(self.values * self._other(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self.with_values(self.values / self._other(other))

    def __neg__(self):
        return self.with_values(-self.values)

    @classmethod
    def zeros(cls, grid: Grid) -> "Field":
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def from_function(cls, grid: Grid, func) -> "Field":
        vals = np.asarray(func(*grid.coordinates()), dtype=float)
        vals = np.broadcast_to(vals, grid.shape).copy()
        if grid.boundary is Boundary.DirichletBox:
            vals[~grid.interior_mask()] = 0.0
        return cls(grid, vals)


def as_field(grid: Grid, values) -> Field:
    if isinstance(values, Field):
        if values.grid != grid:
            raise ValueError("field lives on a different grid")
        return values
    return Field(grid, values)


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Discrete transform coefficients of a field.

    Torus/free-space: ``c_k = h^N sum_j u_j exp(-i omega_k . x_j)`` on the FFT
    lattice, so ``c_0`` is the discrete mass.  Dirichlet: coefficients in the
    ``L^2``-orthonormal sine basis ``prod_a L^{-1/2} sin(pi k_a (x_a + L) / 2L)``.
    """

    grid: Grid
    coeffs: np.ndarray = field(repr=False)

    def norm_l2(self) -> float:
        if self.grid.boundary is Boundary.DirichletBox:
            return float(np.sqrt(np.sum(self.coeffs**2)))
        vol = (2.0 * self.grid.half_length) ** self.grid.dim
        return float(np.sqrt(np.sum(np.abs(self.coeffs) ** 2) / vol))


def _phase(grid: Grid) -> np.ndarray:
    # shift from nodes starting at -L to the FFT's nodes starting at 0
    k = np.fft.fftfreq(grid.points_per_dim, d=1.0 / grid.points_per_dim)
    p = np.where(k.astype(int) % 2 == 0, 1.0, -1.0)
    out = p
    for _ in range(grid.dim - 1):
        out = np.multiply.outer(out, p)
    return out


def _dst_scale(grid: Grid) -> float:
    return (grid.spacing / np.sqrt(grid.half_length) / 2.0) ** grid.dim


def forward_transform(fld: Field) -> Spectrum:
    grid = fld.grid
    if grid.boundary is Boundary.DirichletBox:
        inner = fld.values[(slice(1, None),) * grid.dim]
        c = sfft.dstn(inner, type=1) * _dst_scale(grid)
        return Spectrum(grid, c)
    c = sfft.fftn(fld.values) * grid.cell_volume * _phase(grid)
    return Spectrum(grid, c)


def inverse_transform(spec: Spectrum) -> Field:
    grid = spec.grid
    if grid.boundary is Boundary.DirichletBox:
        inner = sfft.idstn(np.real(spec.coeffs), type=1) / _dst_scale(grid)
        vals = np.zeros(grid.shape)
        vals[(slice(1, None),) * grid.dim] = inner
        return Field(grid, vals)
    vals = sfft.ifftn(spec.coeffs * _phase(grid)) / grid.cell_volume
    return Field(grid, vals.real)


def multiply_spectrum(fld: Field, multiplier) -> Field:
    """Apply a Fourier/sine multiplier given on the frequency lattice."""
    grid = fld.grid
    if grid.boundary is Boundary.DirichletBox:
        inner = fld.values[(slice(1, None),) * grid.dim]
        out = np.zeros(grid.shape)
        out[(slice(1, None),) * grid.dim] = sfft.idstn(
            sfft.dstn(inner, type=1) * multiplier, type=1
        )
        return Field(grid, out)
    return Field(grid, sfft.ifftn(sfft.fftn(fld.values) * multiplier).real)


def norm_lp(fld: Field, p) -> float:
    if p == np.inf or p == "inf":
        return float(np.max(np.abs(fld.values))) if fld.values.size else 0.0
    p = float(p)
    if p < 1:
        raise ValueError(f"norm_lp needs p >= 1 or p = inf, got {p}")
    a = np.abs(fld.values)
    scale = a.max()
    if scale == 0:
        return 0.0
    return float(scale * (fld.grid.cell_volume * np.sum((a / scale) ** p)) ** (1.0 / p))


def mass(fld: Field) -> float:
    return float(fld.grid.cell_volume * np.sum(fld.values))


def positive_part_integral(fld: Field) -> float:
    return float(fld.grid.cell_volume * np.sum(np.maximum(fld.values, 0.0)))


def inner(a: Field, b: Field) -> float:
    return float(a.grid.cell_volume * np.sum(a.values * b.values))


# --- serialization -------------------------------------------------------

_HEADER = struct.Struct("<idii")


def field_to_bytes(fld: Field) -> bytes:
    g = fld.grid
    head = _HEADER.pack(g.dim, g.half_length, g.points_per_dim, int(g.boundary))
    return head + np.ascontiguousarray(fld.values, dtype="<f8").tobytes()


def field_from_bytes(data: bytes) -> Field:
    dim, L, M, bnd = _HEADER.unpack_from(data, 0)
    grid = Grid(dim, L, M, Boundary(bnd))
    vals = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    return Field(grid, vals.reshape(grid.shape))


def save_field(fld: Field, path) -> Path:
    path = Path(path)
    if path.suffix == ".csv":
        path.write_text(field_to_csv(fld))
    else:
        path.write_bytes(field_to_bytes(fld))
    return path


def load_field(path, grid: Grid | None = None) -> Field:
    path = Path(path)
    if path.suffix == ".csv":
        if grid is None:
            raise ValueError("loading a CSV field needs the grid")
        return field_from_csv(path.read_text(), grid)
    return field_from_bytes(path.read_bytes())


def field_to_csv(fld: Field) -> str:
    g = fld.grid
    cols = [X.ravel() for X in g.coordinates()] + [fld.values.ravel()]
    names = [f"x{i}" for i in range(g.dim)] + ["value"]
    buf = io.StringIO()
    buf.write(",".join(names) + "\n")
    np.savetxt(buf, np.column_stack(cols), delimiter=",", fmt="%.17g")
    return buf.getvalue()


def field_from_csv(text: str, grid: Grid) -> Field:
    data = np.loadtxt(io.StringIO(text), delimiter=",", skiprows=1, ndmin=2)
    return Field(grid, data[:, -1].reshape(grid.shape))
