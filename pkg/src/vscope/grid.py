"""Periodic grid, field containers, spectral transforms and differential operators.

Every derivative is spectral. Fields live in physical space; spectral copies
are built on demand and discarded. Quadrature is the uniform Riemann sum,
which is the trapezoid rule on the torus.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Union

import numpy as np
from scipy import fft as _fft

__all__ = [
    "Grid",
    "ScalarField",
    "VectorField",
    "StrainTensor",
    "SpectralField",
    "GridMismatchError",
    "transform",
    "gradient",
    "divergence",
    "curl",
    "laplacian",
    "strain",
    "velocity_gradient",
    "vst_density",
    "stretching_direct",
    "integrate",
    "set_workers",
]

_WORKERS = int(os.environ.get("VSCOPE_THREADS", "1") or 1)


def set_workers(n: int) -> None:
    """Number of threads handed to scipy.fft."""
    global _WORKERS
    _WORKERS = max(1, int(n))


def rfftn(a: np.ndarray) -> np.ndarray:
    return _fft.rfftn(a, axes=(-3, -2, -1), workers=_WORKERS)


def irfftn(a: np.ndarray, n: int) -> np.ndarray:
    return _fft.irfftn(a, s=(n, n, n), axes=(-3, -2, -1), workers=_WORKERS)


class GridMismatchError(ValueError):
    """Raised when two fields that must share a grid do not."""


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid on the cube [0, box_length)^3."""

    n_points: int
    box_length: float = 2 * np.pi

    def __post_init__(self):
        if int(self.n_points) != self.n_points or self.n_points < 8 or self.n_points % 2:
            raise ValueError(f"n_points must be an even integer >= 8, got {self.n_points}")
        if not (np.isfinite(self.box_length) and self.box_length > 0):
            raise ValueError(f"box_length must be positive, got {self.box_length}")

    @property
    def spacing(self) -> float:
        return self.box_length / self.n_points

    @property
    def shape(self) -> tuple:
        return (self.n_points,) * 3

    @property
    def cell_volume(self) -> float:
        return self.spacing**3

    @property
    def k_unit(self) -> float:
        return 2 * np.pi / self.box_length

    @cached_property
    def coords(self) -> np.ndarray:
        """1D node coordinates along each axis."""
        return np.arange(self.n_points) * self.spacing

    def mesh(self) -> np.ndarray:
        """Node coordinates as a (3, N, N, N) array."""
        x = self.coords
        return np.array(np.meshgrid(x, x, x, indexing="ij"))

    def displacement(self, center) -> np.ndarray:
        """Minimum-image displacement x - center for every node, shape (3, N, N, N)."""
        L = self.box_length
        c = np.asarray(center, dtype=float)
        out = np.empty((3,) + self.shape)
        x = self.coords
        for a in range(3):
            d = (x - c[a] + L / 2) % L - L / 2
            sl = [None, None, None]
            sl[a] = slice(None)
            out[a] = d[tuple(sl)]
        return out

    # spectral layout used internally (rfftn: last axis halved)
    @cached_property
    def _k1d(self) -> np.ndarray:
        return np.fft.fftfreq(self.n_points, 1.0 / self.n_points)

    @cached_property
    def wavenumbers(self) -> tuple:
        """Integer-scaled wavenumbers (kx, ky, kz) broadcastable to the rfft layout."""
        n = self.n_points
        k = self._k1d * self.k_unit
        kr = np.arange(n // 2 + 1) * self.k_unit
        return (k[:, None, None], k[None, :, None], kr[None, None, :])

    @cached_property
    def derivative_wavenumbers(self) -> tuple:
        """Wavenumbers with the Nyquist entry zeroed, for odd-order derivatives."""
        n = self.n_points
        k = self._k1d.copy()
        k[n // 2] = 0
        kr = np.arange(n // 2 + 1, dtype=float)
        kr[-1] = 0
        k = k * self.k_unit
        kr = kr * self.k_unit
        return (k[:, None, None], k[None, :, None], kr[None, None, :])

    @cached_property
    def k_squared(self) -> np.ndarray:
        kx, ky, kz = self.wavenumbers
        return kx**2 + ky**2 + kz**2

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        """2/3-rule mask in the rfft layout."""
        n = self.n_points
        cut = n / 3.0
        k = np.abs(self._k1d)
        kr = np.arange(n // 2 + 1)
        return (k[:, None, None] < cut) & (k[None, :, None] < cut) & (kr[None, None, :] < cut)

    @cached_property
    def nyquist_mask(self) -> np.ndarray:
        """False on every mode carrying a Nyquist index."""
        n = self.n_points
        k = np.abs(self._k1d)
        kr = np.arange(n // 2 + 1)
        return (k[:, None, None] < n // 2) & (k[None, :, None] < n // 2) & (kr[None, None, :] < n // 2)


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    if not np.all(np.isfinite(a)):
        raise ValueError("field contains non-finite values")
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: Grid
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        v = _freeze(self.values)
        if v.shape != self.grid.shape:
            raise ValueError(f"scalar field shape {v.shape} does not match grid {self.grid.shape}")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True, eq=False)
class VectorField:
    grid: Grid
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        v = _freeze(self.values)
        if v.shape != (3,) + self.grid.shape:
            raise ValueError(f"vector field shape {v.shape} does not match grid {self.grid.shape}")
        object.__setattr__(self, "values", v)

    def magnitude(self) -> ScalarField:
        return ScalarField(self.grid, np.sqrt(np.sum(self.values**2, axis=0)), self.time)

    def norm_l2(self) -> float:
        return float(np.sqrt(np.sum(self.values**2) * self.grid.cell_volume))


# component order of StrainTensor.values
STRAIN_INDEX = ((0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2))


@dataclass(frozen=True, eq=False)
class StrainTensor:
    """Symmetric 3x3 tensor field stored as (xx, yy, zz, xy, xz, yz)."""

    grid: Grid
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        v = _freeze(self.values)
        if v.shape != (6,) + self.grid.shape:
            raise ValueError(f"tensor shape {v.shape} does not match grid {self.grid.shape}")
        object.__setattr__(self, "values", v)

    def component(self, i: int, j: int) -> np.ndarray:
        if i > j:
            i, j = j, i
        return self.values[STRAIN_INDEX.index((i, j))]

    def matrix(self) -> np.ndarray:
        """Full (3, 3, N, N, N) array."""
        return np.array([[self.component(i, j) for j in range(3)] for i in range(3)])

    def trace(self) -> ScalarField:
        return ScalarField(self.grid, self.values[0] + self.values[1] + self.values[2], self.time)


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Fourier coefficients (numpy fftn with norm='forward') of a scalar or vector field.

    ``coefficients[..., k]`` is the amplitude of exp(i k.x); the zero mode is the mean.
    """

    grid: Grid
    coefficients: np.ndarray
    kind: str  # "scalar" | "vector"
    time: float = 0.0

    def energy(self) -> float:
        """Sum of |c_k|^2, equal to the spatial mean of |f|^2 (Parseval)."""
        return float(np.sum(np.abs(self.coefficients) ** 2))


Field = Union[ScalarField, VectorField]


def transform(f, direction: str):
    """Move a field between physical and spectral space.

    ``direction`` is ``"to_spectral"`` or ``"to_physical"``.
    """
    if direction == "to_spectral":
        if isinstance(f, ScalarField):
            kind = "scalar"
        elif isinstance(f, VectorField):
            kind = "vector"
        else:
            raise TypeError(f"cannot transform {type(f).__name__}")
        if not np.all(np.isfinite(f.values)):
            raise ValueError("field contains non-finite values")
        c = _fft.fftn(f.values, axes=(-3, -2, -1), norm="forward", workers=_WORKERS)
        return SpectralField(f.grid, c, kind, f.time)
    if direction == "to_physical":
        if not isinstance(f, SpectralField):
            raise TypeError("to_physical expects a SpectralField")
        c = f.coefficients
        if not np.all(np.isfinite(c)):
            raise ValueError("spectral coefficients contain non-finite values")
        v = _fft.ifftn(c, axes=(-3, -2, -1), norm="forward", workers=_WORKERS).real
        cls = ScalarField if f.kind == "scalar" else VectorField
        return cls(f.grid, v, f.time)
    raise ValueError(f"unknown direction {direction!r}")


def _check_same_grid(*fields) -> Grid:
    g = fields[0].grid
    for f in fields[1:]:
        if f.grid != g:
            raise GridMismatchError(f"grid mismatch: {g} vs {f.grid}")
    return g


def _spectral_gradient(values: np.ndarray, grid: Grid) -> np.ndarray:
    """Gradient of scalar (N,N,N) or of each vector component (3,N,N,N).

    Returns shape (3, N,N,N) or (3, 3, N,N,N) with d_j f_i at [i, j].
    """
    kd = grid.derivative_wavenumbers
    fh = rfftn(values)
    n = grid.n_points
    if values.ndim == 3:
        return np.array([irfftn(1j * k * fh, n) for k in kd])
    return np.array([[irfftn(1j * k * fh[i], n) for k in kd] for i in range(values.shape[0])])


def gradient(f: ScalarField) -> VectorField:
    return VectorField(f.grid, _spectral_gradient(f.values, f.grid), f.time)


def velocity_gradient(u: VectorField) -> np.ndarray:
    """Array A[i, j] = d_j u_i, shape (3, 3, N, N, N)."""
    return _spectral_gradient(u.values, u.grid)


def divergence(u: VectorField) -> ScalarField:
    g = u.grid
    kd = g.derivative_wavenumbers
    uh = rfftn(u.values)
    d = irfftn(1j * (kd[0] * uh[0] + kd[1] * uh[1] + kd[2] * uh[2]), g.n_points)
    return ScalarField(g, d, u.time)


def curl_hat(uh: np.ndarray, grid: Grid) -> np.ndarray:
    kx, ky, kz = grid.derivative_wavenumbers
    return np.array(
        [
            1j * (ky * uh[2] - kz * uh[1]),
            1j * (kz * uh[0] - kx * uh[2]),
            1j * (kx * uh[1] - ky * uh[0]),
        ]
    )


def curl(u: VectorField) -> VectorField:
    """Vorticity of a velocity field."""
    g = u.grid
    w = irfftn(curl_hat(rfftn(u.values), g), g.n_points)
    return VectorField(g, w, u.time)


def laplacian(f: Field) -> Field:
    g = f.grid
    v = irfftn(-g.k_squared * rfftn(f.values), g.n_points)
    return type(f)(g, v, f.time)


def strain(u: VectorField) -> StrainTensor:
    """Symmetric part of the velocity gradient."""
    A = velocity_gradient(u)
    comps = [0.5 * (A[i, j] + A[j, i]) for i, j in STRAIN_INDEX]
    return StrainTensor(u.grid, np.array(comps), u.time)


def vst_density(S: StrainTensor, omega: VectorField) -> ScalarField:
    """Pointwise vortex-stretching density S w . w."""
    _check_same_grid(S, omega)
    w = omega.values
    s = S.values
    v = (
        s[0] * w[0] ** 2
        + s[1] * w[1] ** 2
        + s[2] * w[2] ** 2
        + 2 * (s[3] * w[0] * w[1] + s[4] * w[0] * w[2] + s[5] * w[1] * w[2])
    )
    return ScalarField(S.grid, v, omega.time)


def stretching_direct(u: VectorField, omega: VectorField) -> ScalarField:
    """(w . grad) u . w from the full velocity gradient, without forming S."""
    _check_same_grid(u, omega)
    A = velocity_gradient(u)
    w = omega.values
    stretch = np.einsum("ij...,j...->i...", A, w)
    return ScalarField(u.grid, np.sum(stretch * w, axis=0), omega.time)


def integrate(f: ScalarField, weight: Optional[ScalarField] = None) -> float:
    """Riemann sum of f (times weight) over the torus."""
    if weight is None:
        return float(np.sum(f.values) * f.grid.cell_volume)
    _check_same_grid(f, weight)
    return float(np.sum(f.values * weight.values) * f.grid.cell_volume)
