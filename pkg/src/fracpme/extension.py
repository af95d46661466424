"""Weighted harmonic extension to the half-space and its boundary flux.

The extension of ``g`` solves ``div(y^{1-sigma} grad v) = 0`` for ``y > 0``
with ``v(x, 0) = g(x)``; ``-mu_sigma lim y^{1-sigma} dv/dy`` is the
fractional Laplacian of ``g``.  On the torus the x-direction is diagonal in
Fourier space, so each mode reduces to the two-point problem

    (y^{1-sigma} w')' = y^{1-sigma} omega^2 w,   w(0) = 1,   w(Y) = 0,

discretized by a conservative three-point scheme on the graded mesh
``y_j = Y (j/J)^{2/sigma}``.  Cell conductances are exact for the weight
(``sigma / (y_{j+1}^sigma - y_j^sigma)``) and the reaction term uses lumped
dual-cell masses, so the scheme is the Galerkin system of one bilinear form
and the boundary flux ``B(w, e_0)`` satisfies ``B(w, w) = flux * w(0)``.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .grid import Boundary, Field, Spectrum, forward_transform, inverse_transform
from .operators import _check_sigma, extension_constant


class TruncationWarning(UserWarning):
    """The cap at ``y = Y`` is too close for the slowest mode to decay."""


@dataclass(frozen=True)
class YMesh:
    nodes: np.ndarray
    conductance: np.ndarray
    mass: np.ndarray

    @classmethod
    def graded(cls, sigma, Y, J):
        y = Y * (np.arange(J + 1) / J) ** (2.0 / sigma)
        cond = sigma / (y[1:] ** sigma - y[:-1] ** sigma)
        edges = np.concatenate([[0.0], 0.5 * (y[1:] + y[:-1]), [y[-1]]])
        mass = (edges[1:] ** (2 - sigma) - edges[:-1] ** (2 - sigma)) / (2 - sigma)
        return cls(y, cond, mass)


def _mode_profile(mesh: YMesh, omega: float) -> np.ndarray:
    """Normalized profile ``w(y_j)`` with ``w(0) = 1``, ``w(Y) = 0``."""
    a, mm = mesh.conductance, mesh.mass
    J = len(mesh.nodes) - 1
    n = J - 1
    ab = np.zeros((3, n))
    ab[1] = a[:-1] + a[1:] + omega**2 * mm[1:J]
    ab[0, 1:] = -a[1:-1]
    ab[2, :-1] = -a[1:-1]
    rhs = np.zeros(n)
    rhs[0] = a[0]
    w = np.empty(J + 1)
    w[0], w[-1] = 1.0, 0.0
    w[1:-1] = solve_banded((1, 1), ab, rhs)
    return w


def _bilinear(mesh: YMesh, omega2, w, phi):
    # B(w, phi) = sum a (dw)(dphi) + omega^2 sum m w phi, along the last axis
    dw = np.diff(w, axis=-1)
    dphi = np.diff(phi, axis=-1)
    return np.sum(mesh.conductance * dw * np.conj(dphi), axis=-1) + omega2 * np.sum(
        mesh.mass * w * np.conj(phi), axis=-1
    )


@dataclass(frozen=True, eq=False)
class ExtensionSolution:
    grid: object
    sigma: float
    mesh: YMesh
    boundary_spectrum: Spectrum
    omega: np.ndarray = field(repr=False)
    profiles: np.ndarray = field(repr=False)  # normalized, one row per unique |omega|
    inverse: np.ndarray = field(repr=False)  # map from frequency lattice to profile row

    @property
    def y(self) -> np.ndarray:
        return self.mesh.nodes

    def mode_values(self) -> np.ndarray:
        """``w_hat(omega, y_j)`` with shape ``spectrum.shape + (J+1,)``."""
        coeffs = self.boundary_spectrum.coeffs
        return coeffs[..., None] * self.profiles[self.inverse]

    def level(self, j: int) -> Field:
        """The extension at height ``y_j`` as a real field."""
        coeffs = self.boundary_spectrum.coeffs * self.profiles[self.inverse][..., j]
        return inverse_transform(Spectrum(self.grid, coeffs))

    def flux_multiplier(self) -> np.ndarray:
        """Discrete Dirichlet-to-Neumann symbol on the frequency lattice."""
        mu = extension_constant(self.sigma)
        om2 = self.omega**2
        w = self.profiles
        flux = self.mesh.conductance[0] * (w[:, 0] - w[:, 1]) + om2 * self.mesh.mass[0] * w[:, 0]
        return (mu * flux)[self.inverse]

    def weighted_energy(self, other=None) -> float:
        """``mu_sigma int y^{1-sigma} <grad E, grad Phi>`` in the discrete form.

        ``other`` is either ``None`` (energy of the extension itself) or a
        real array of shape ``(J+1,) + grid.shape`` sampling a test function.
        """
        mu = extension_constant(self.sigma)
        W = self.mode_values()
        if other is None:
            P = W
        else:
            other = np.asarray(other, dtype=float)
            P = np.stack([forward_transform(Field(self.grid, lvl)).coeffs for lvl in other], axis=-1)
        om2 = (self.omega**2)[self.inverse]
        vol = (2.0 * self.grid.half_length) ** self.grid.dim
        return float(mu * np.real(np.sum(_bilinear(self.mesh, om2, W, P))) / vol)


def default_height(grid) -> float:
    return 8.0 * grid.half_length / np.pi


def extend(fld: Field, sigma: float, Y: float | None = None, J: int = 256) -> ExtensionSolution:
    _check_sigma(sigma)
    grid = fld.grid
    if grid.boundary is not Boundary.PeriodicTorus:
        raise ValueError("the extension solver needs a PeriodicTorus grid")
    if Y is None:
        Y = default_height(grid)
    if not Y > 0:
        raise ValueError(f"Y must be positive, got {Y}")
    if J < 32:
        raise ValueError(f"J must be at least 32, got {J}")
    omega_min = np.pi / grid.half_length
    if Y * omega_min < 3:
        warnings.warn(
            f"Y*min|omega| = {Y * omega_min:.3g} < 3: exterior decay exp(-|omega| Y) is not negligible",
            TruncationWarning,
            stacklevel=2,
        )
    spec = forward_transform(fld)
    mag = grid.frequency_magnitude()
    uniq, inv = np.unique(np.round(mag, 12), return_inverse=True)
    inv = inv.reshape(mag.shape)
    mesh = YMesh.graded(sigma, Y, J)
    profiles = np.empty((len(uniq), J + 1))
    for r, om in enumerate(uniq):
        profiles[r] = 1.0 if om == 0 else _mode_profile(mesh, om)
    return ExtensionSolution(grid, float(sigma), mesh, spec, uniq, profiles, inv)


def dtn_flux(ext: ExtensionSolution) -> Field:
    coeffs = ext.boundary_spectrum.coeffs * ext.flux_multiplier()
    return inverse_transform(Spectrum(ext.grid, coeffs))


@dataclass
class CrossValidationReport:
    sigma: float
    Y: float
    J: int
    omega: list
    ratio: list
    max_relative_error: float

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2)


def cross_validate(fld: Field, sigma: float, Y=None, J=512, rel_floor=1e-8) -> CrossValidationReport:
    """Per-mode ratio of the extension flux to ``|omega|^sigma``."""
    ext = extend(fld, sigma, Y, J)
    coeffs = np.abs(ext.boundary_spectrum.coeffs)
    mag = ext.grid.frequency_magnitude()
    live = (coeffs > rel_floor * coeffs.max()) & (mag > 0) if coeffs.max() > 0 else np.zeros_like(mag, bool)
    ratio = ext.flux_multiplier()[live] / mag[live] ** sigma
    om = mag[live]
    order = np.argsort(om, kind="stable")
    err = float(np.max(np.abs(ratio - 1))) if ratio.size else 0.0
    return CrossValidationReport(
        float(sigma), float(ext.y[-1]), J, om[order].tolist(), ratio[order].tolist(), err
    )
