"""Spatiotemporal cut-off functions phi = psi(x) * eta(t).

Geometry is expressed in the macro frame: the macro ball B(0, R0) is centred
at the origin, and grid nodes are mapped into this frame by minimum-image
displacement from the macro centre.

Profiles use the rational bridge ``B(s) = s^m / (s^m + (1-s)^m)`` whose
vanishing order ``m = ceil(1/(1-rho))`` makes ``|f'|/f^rho`` bounded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .grid import Grid

__all__ = [
    "bridge",
    "bridge_order",
    "RadialProfile",
    "IndicatorProfile",
    "TemporalCutoff",
    "SpatialCutoff",
    "ProductCutoff",
    "ConeCutoff",
    "CutoffPair",
    "DegenerateConeError",
    "BoundReport",
    "make_temporal",
    "make_spatial",
    "boundary_adjust",
    "verify_bounds",
    "refinement_study",
    "frame_points",
]


def bridge_order(rho: float) -> int:
    if not (0.5 < rho < 1.0):
        raise ValueError(f"exponent must lie in (1/2, 1), got {rho}")
    return int(math.ceil(1.0 / (1.0 - rho) - 1e-12))


def bridge(s, m: int, nu: int = 0):
    """Smooth 0 -> 1 bridge on [0, 1] and its first two derivatives (``nu``)."""
    s = np.clip(np.asarray(s, dtype=float), 0.0, 1.0)
    a = s**m
    b = (1.0 - s) ** m
    D = a + b
    if nu == 0:
        return a / D
    p = (s * (1.0 - s)) ** (m - 1)
    if nu == 1:
        return m * p / D**2
    if nu == 2:
        Dp = m * (s ** (m - 1) - (1.0 - s) ** (m - 1))
        if m >= 2:
            q = (s * (1.0 - s)) ** (m - 2)
        else:
            q = np.zeros_like(s)
        return m * q * ((m - 1) * (1.0 - 2.0 * s) * D - 2.0 * s * (1.0 - s) * Dp) / D**3
    raise ValueError("nu must be 0, 1 or 2")


@dataclass(frozen=True)
class RadialProfile:
    """chi(rho): 1 on [0, inner], bridge down to 0 at ``outer``, 0 beyond."""

    m: int
    inner: float = 1.0
    outer: float = 2.0
    analytic = True

    def _s(self, rho):
        return (self.outer - np.asarray(rho, dtype=float)) / (self.outer - self.inner)

    def value(self, rho):
        rho = np.asarray(rho, dtype=float)
        out = bridge(self._s(rho), self.m)
        return np.where(rho <= self.inner, 1.0, np.where(rho >= self.outer, 0.0, out))

    def d1(self, rho):
        rho = np.asarray(rho, dtype=float)
        inside = (rho > self.inner) & (rho < self.outer)
        w = self.outer - self.inner
        return np.where(inside, -bridge(self._s(rho), self.m, 1) / w, 0.0)

    def d2(self, rho):
        rho = np.asarray(rho, dtype=float)
        inside = (rho > self.inner) & (rho < self.outer)
        w = self.outer - self.inner
        return np.where(inside, bridge(self._s(rho), self.m, 2) / w**2, 0.0)


@dataclass(frozen=True)
class IndicatorProfile:
    """Sharp profile 1[rho < edge]; non-compliant control case.

    It has no classical derivative, so bound checks fall back to finite
    differences on the sampling grid.
    """

    edge: float = 1.5
    m: int = 0
    analytic = False

    def value(self, rho):
        return (np.asarray(rho, dtype=float) < self.edge).astype(float)


# ---------------------------------------------------------------- temporal


@dataclass(frozen=True)
class TemporalCutoff:
    """eta(t) = 0 on (0, T/3), bridge on (T/3, 2T/3), 1 on (2T/3, T)."""

    horizon: float
    rho: float
    m: int
    profile: str = "bridge"  # "bridge" | "indicator" | "one"

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")

    @property
    def analytic(self) -> bool:
        return self.profile != "indicator"

    def _s(self, t):
        return 3.0 * np.asarray(t, dtype=float) / self.horizon - 1.0

    def value(self, t):
        if self.profile == "one":
            return np.ones_like(np.asarray(t, dtype=float))
        if self.profile == "indicator":
            return (np.asarray(t, dtype=float) >= 0.5 * self.horizon).astype(float)
        return bridge(self._s(t), self.m)

    def derivative(self, t):
        if self.profile == "one":
            return np.zeros_like(np.asarray(t, dtype=float))
        if self.profile == "indicator":
            raise NotImplementedError("indicator profile has no classical derivative")
        s = self._s(t)
        inside = (s > 0) & (s < 1)
        return np.where(inside, 3.0 / self.horizon * bridge(s, self.m, 1), 0.0)


def make_temporal(T: float, rho1: float) -> TemporalCutoff:
    return TemporalCutoff(horizon=float(T), rho=float(rho1), m=bridge_order(rho1))


# ---------------------------------------------------------------- spatial


def frame_points(grid: Grid, macro_center, index=None) -> np.ndarray:
    """Node positions in the macro frame, shape (3, ...).

    ``index`` is an optional triple of 1D integer index arrays selecting a
    (periodically wrapped) sub-block.
    """
    L = grid.box_length
    h = grid.spacing
    c = np.asarray(macro_center, dtype=float)
    axes = []
    for a in range(3):
        idx = np.arange(grid.n_points) if index is None else np.asarray(index[a])
        axes.append((idx * h - c[a] + L / 2) % L - L / 2)
    return np.array(np.meshgrid(*axes, indexing="ij"))


class _SpatialBase:
    """Shared evaluation helpers; subclasses implement value/gradient/laplacian."""

    analytic = True

    def on_grid(self, grid: Grid, macro_center, what: str = "value", index=None):
        X = frame_points(grid, macro_center, index)
        return getattr(self, what)(X)

    def window(self, grid: Grid, macro_center):
        """Index arrays of the wrapped sub-block that contains the support."""
        lo, hi = self.support_box()
        h = grid.spacing
        n = grid.n_points
        c = np.asarray(macro_center, dtype=float)
        idx = []
        for a in range(3):
            i0 = int(math.floor((c[a] + lo[a]) / h)) - 1
            i1 = int(math.ceil((c[a] + hi[a]) / h)) + 1
            if i1 - i0 + 1 >= n:
                idx.append(np.arange(n))
            else:
                idx.append(np.arange(i0, i1 + 1) % n)
        return tuple(idx)


@dataclass(frozen=True)
class SpatialCutoff(_SpatialBase):
    """Radial cut-off psi(x) = chi(|x - center| / R) in the macro frame."""

    center: tuple
    radius: float
    rho: float
    m: int
    profile: object = None

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        object.__setattr__(self, "center", tuple(float(v) for v in self.center))
        if self.profile is None:
            object.__setattr__(self, "profile", RadialProfile(self.m))

    @property
    def analytic(self) -> bool:
        return self.profile.analytic

    def _d(self, X):
        c = np.asarray(self.center).reshape((3,) + (1,) * (X.ndim - 1))
        d = X - c
        r = np.sqrt(np.sum(d * d, axis=0))
        return d, r

    def support_box(self):
        c = np.asarray(self.center)
        reach = self.profile.outer if hasattr(self.profile, "outer") else self.profile.edge
        return c - reach * self.radius, c + reach * self.radius

    def value(self, X):
        _, r = self._d(X)
        return self.profile.value(r / self.radius)

    def gradient(self, X):
        d, r = self._d(X)
        rho = r / self.radius
        g = self.profile.d1(rho) / self.radius
        safe = np.where(r > 0, r, 1.0)
        return g * d / safe

    def laplacian(self, X):
        _, r = self._d(X)
        rho = r / self.radius
        safe = np.where(rho > 0, rho, 1.0)
        d1 = self.profile.d1(rho)
        return (self.profile.d2(rho) + np.where(rho > 0, 2.0 * d1 / safe, 0.0)) / self.radius**2


def make_spatial(center, R: float, rho2: float, box_length: Optional[float] = None) -> SpatialCutoff:
    if box_length is not None and 2 * R > box_length / 2:
        raise ValueError(f"scale R={R} too large for box {box_length}: need 2R <= box/2")
    return SpatialCutoff(center=tuple(center), radius=float(R), rho=float(rho2), m=bridge_order(rho2))


@dataclass(frozen=True)
class ProductCutoff(_SpatialBase):
    """psi * psi0 for elements whose doubled ball leaves the macro ball."""

    base: SpatialCutoff
    macro: SpatialCutoff

    @property
    def center(self):
        return self.base.center

    @property
    def radius(self):
        return self.base.radius

    def support_box(self):
        return self.base.support_box()

    def value(self, X):
        return self.base.value(X) * self.macro.value(X)

    def gradient(self, X):
        return self.base.gradient(X) * self.macro.value(X) + self.base.value(X) * self.macro.gradient(X)

    def laplacian(self, X):
        gb = self.base.gradient(X)
        gm = self.macro.gradient(X)
        return (
            self.base.laplacian(X) * self.macro.value(X)
            + 2.0 * np.sum(gb * gm, axis=0)
            + self.base.value(X) * self.macro.laplacian(X)
        )


def _smoothstep7(u, nu=0):
    u = np.clip(u, 0.0, 1.0)
    if nu == 0:
        return u**4 * (35 - 84 * u + 70 * u**2 - 20 * u**3)
    if nu == 1:
        return 140 * u**3 * (1 - u) ** 3
    return 420 * u**2 * (1 - u) ** 2 * (1 - 2 * u)


class DegenerateConeError(ValueError):
    """The element ball strictly contains the origin; the cone is not defined."""


@dataclass(frozen=True)
class ConeCutoff(_SpatialBase):
    """Boundary element whose ball B(x_i, R) leaves the macro ball.

    psi(x) = psi0(x) * chi~(|p(x) - x_i| / R), where p is a smooth radial
    retraction onto the sphere of radius R0 - eps/2 (identity well inside,
    constant along rays outside R0). Outside the macro ball psi therefore
    equals psi0 on the cone through S(0,R0) n B(x_i,R) and vanishes outside
    the cone through S(0,R0) n B(x_i,2R). ``eps`` is the width of the
    retraction shell and chi~ widens its plateau by eps/2 to compensate.
    """

    center: tuple
    radius: float
    macro: SpatialCutoff
    eps: float
    m: int

    @property
    def R0(self):
        return self.macro.radius

    @property
    def profile(self):
        w = 0.5 * self.eps / self.radius
        return RadialProfile(self.m, 1.0 + w, 2.0 - w)

    def support_box(self):
        c = np.asarray(self.center)
        lo, hi = c - 2 * self.radius, c + 2 * self.radius
        lo2 = np.minimum(lo, 2 * lo)
        hi2 = np.maximum(hi, 2 * hi)
        cap = 2 * self.R0
        return np.maximum(lo2, -cap), np.minimum(hi2, cap)

    def _retraction(self, r):
        """lambda(r) and its first two derivatives."""
        R0, e = self.R0, self.eps
        r1 = R0 - e
        u = (r - r1) / e
        uc = np.clip(u, 0.0, 1.0)
        integ = uc - (7 * uc**5 - 14 * uc**6 + 10 * uc**7 - 2.5 * uc**8)
        lam = np.where(u <= 0, r, r1 + e * integ)
        lam1 = np.where(u <= 0, 1.0, 1.0 - _smoothstep7(uc))
        lam2 = np.where((u > 0) & (u < 1), -_smoothstep7(uc, 1) / e, 0.0)
        return lam, lam1, lam2

    def _parts(self, X):
        r = np.sqrt(np.sum(X * X, axis=0))
        rs = np.where(r > 0, r, 1.0)
        lam, lam1, lam2 = self._retraction(r)
        a = np.where(r > 0, lam / rs, 1.0)
        ap = (lam1 * rs - lam) / rs**2
        b = np.where(r > 0, ap / rs, 0.0)
        bp = np.where(r > 0, lam2 / rs**2 - 3.0 * (lam1 * rs - lam) / rs**4, 0.0)
        inner = r <= self.R0 - self.eps
        b = np.where(inner, 0.0, b)
        bp = np.where(inner, 0.0, bp)
        c = np.asarray(self.center).reshape((3,) + (1,) * (X.ndim - 1))
        q = a * X - c
        return r, a, b, bp, q

    def _g(self, X, what):
        r, a, b, bp, q = self._parts(X)
        nq = np.sqrt(np.sum(q * q, axis=0))
        prof = self.profile
        s = nq / self.radius
        if what == "value":
            return prof.value(s)
        xq = np.sum(X * q, axis=0)
        Jq = b * X * xq + a * q
        nqs = np.where(nq > 0, nq, 1.0)
        d1 = prof.d1(s)
        if what == "gradient":
            return d1 / self.radius * Jq / nqs
        Jq2 = np.sum(Jq * Jq, axis=0)
        frob = 3 * a**2 + 2 * a * b * r**2 + b**2 * r**4
        lap_nq = (frob + xq * (5 * b + bp * r)) / nqs - Jq2 / nqs**3
        return prof.d2(s) * Jq2 / (self.radius**2 * nqs**2) + d1 * lap_nq / self.radius

    def value(self, X):
        return self.macro.value(X) * self._g(X, "value")

    def gradient(self, X):
        return self.macro.gradient(X) * self._g(X, "value") + self.macro.value(X) * self._g(X, "gradient")

    def laplacian(self, X):
        return (
            self.macro.laplacian(X) * self._g(X, "value")
            + 2.0 * np.sum(self.macro.gradient(X) * self._g(X, "gradient"), axis=0)
            + self.macro.value(X) * self._g(X, "laplacian")
        )


def boundary_adjust(psi: SpatialCutoff, psi0: SpatialCutoff, strict: bool = False):
    """Make an element cut-off compatible with the macro cut-off psi0.

    Interior elements (B(x_i, 2R) inside B(0, R0)) come back unchanged;
    elements whose doubled ball leaves the macro ball are multiplied by psi0;
    elements whose ball itself leaves the macro ball get the cone construction.
    When that ball strictly contains the origin the cone is undefined: with
    ``strict`` this raises DegenerateConeError, otherwise the product psi*psi0
    is used. The result always satisfies 0 <= psi <= psi0.
    """
    R0 = psi0.radius
    R = psi.radius
    dist = float(np.linalg.norm(psi.center))
    if dist <= 1e-12 * R0 and abs(R - R0) <= 1e-12 * R0:
        return psi0  # the macro element itself
    if dist + 2 * R <= R0 * (1 + 1e-12):
        return psi
    if dist + R <= R0 * (1 + 1e-12):
        return ProductCutoff(psi, psi0)
    if dist < R * (1 - 1e-9):
        if not strict:
            return ProductCutoff(psi, psi0)
        raise DegenerateConeError(
            f"element ball B(x, {R:g}) at distance {dist:g} contains the origin"
        )
    eps = min(0.5 * R, 0.5 * R0)
    return ConeCutoff(center=psi.center, radius=R, macro=psi0, eps=eps, m=psi.m)


@dataclass(frozen=True)
class CutoffPair:
    """phi = psi * eta, optionally raised to ``delta_exp``."""

    spatial: object
    temporal: TemporalCutoff
    delta_exp: float = 1.0

    def __post_init__(self):
        if not (0 < self.delta_exp <= 1):
            raise ValueError("delta_exp must lie in (0, 1]")

    def value(self, X, t):
        return (self.spatial.value(X) * self.temporal.value(t)) ** self.delta_exp


# ---------------------------------------------------------------- verification


@dataclass
class BoundReport:
    """Measured ratio suprema, scaled by R (or T) to be dimensionless."""

    kind: str
    resolution: int
    gradient_ratio: float
    laplacian_ratio: Optional[float] = None
    rho: float = 0.0
    m: int = 0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _fd_gradient_periodic(v: np.ndarray, h: float) -> np.ndarray:
    return np.array([(np.roll(v, -1, a) - np.roll(v, 1, a)) / (2 * h) for a in range(3)])


def _fd_laplacian_periodic(v: np.ndarray, h: float) -> np.ndarray:
    return sum(np.roll(v, -1, a) - 2 * v + np.roll(v, 1, a) for a in range(3)) / h**2


def verify_bounds(cutoff, grid, floor: float = 1e-14) -> BoundReport:
    """Measure sup |grad psi|/psi^rho * R and sup |lap psi|/psi^(2rho-1) * R^2.

    For a TemporalCutoff, ``grid`` is the number of samples per horizon (an
    int) or a Grid whose n_points is used; the single ratio
    sup |eta'|/eta^rho * T is reported. Derivatives are analytic where the
    profile has them and centred finite differences otherwise.
    """
    if isinstance(cutoff, TemporalCutoff):
        n = grid.n_points if isinstance(grid, Grid) else int(grid)
        T = cutoff.horizon
        dt = T / n
        t = (np.arange(n) + 0.5) * dt
        eta = cutoff.value(t)
        if cutoff.analytic:
            d = cutoff.derivative(t)
        else:
            d = np.gradient(eta, dt)
        ok = eta > floor
        ratio = np.abs(d[ok]) / eta[ok] ** cutoff.rho if ok.any() else np.array([0.0])
        return BoundReport("temporal", n, float(ratio.max(initial=0.0) * T), None, cutoff.rho, cutoff.m)

    R = cutoff.radius
    rho = getattr(cutoff, "rho", None)
    if rho is None:
        rho = getattr(cutoff.base, "rho", 0.75) if hasattr(cutoff, "base") else 0.75
    center = np.full(3, grid.box_length / 2)
    X = frame_points(grid, center)
    psi = cutoff.value(X)
    if getattr(cutoff, "analytic", True):
        g = np.sqrt(np.sum(cutoff.gradient(X) ** 2, axis=0))
        lap = np.abs(cutoff.laplacian(X))
    else:
        g = np.sqrt(np.sum(_fd_gradient_periodic(psi, grid.spacing) ** 2, axis=0))
        lap = np.abs(_fd_laplacian_periodic(psi, grid.spacing))
    ok = psi > floor
    gr = float(np.max(g[ok] / psi[ok] ** rho, initial=0.0) * R)
    lr = float(np.max(lap[ok] / psi[ok] ** (2 * rho - 1), initial=0.0) * R**2)
    return BoundReport("spatial", grid.n_points, gr, lr, rho, getattr(cutoff, "m", 0))


@dataclass
class RefinementStudy:
    reports: list
    stable: bool
    diverging: bool
    growth: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return {
            "reports": [r.as_dict() for r in self.reports],
            "stable": self.stable,
            "diverging": self.diverging,
            "growth": self.growth,
        }


def refinement_study(
    make: Callable[[Grid], object],
    resolutions: Sequence[int] = (32, 64, 128),
    box_length: float = 2 * np.pi,
    tolerance: float = 0.2,
    divergence_factor: float = 1.5,
) -> RefinementStudy:
    """Repeat verify_bounds as the resolution doubles.

    ``make(grid)`` returns the cut-off to test on that grid. A study is
    *stable* when every measured ratio stays within ``tolerance`` of its
    finest-resolution value and *diverging* when some ratio grows by more
    than ``divergence_factor`` at every doubling.
    """
    reports = []
    for n in resolutions:
        g = Grid(n, box_length)
        reports.append(verify_bounds(make(g), g))
    keys = ["gradient_ratio"] + (["laplacian_ratio"] if reports[0].laplacian_ratio is not None else [])
    stable = True
    diverging = False
    growth = []
    for k in keys:
        vals = np.array([getattr(r, k) for r in reports])
        ref = vals[-1]
        if ref == 0:
            stable &= bool(np.all(vals == 0))
        else:
            stable &= bool(np.all(np.abs(vals / ref - 1) <= tolerance))
        with np.errstate(divide="ignore", invalid="ignore"):
            gk = vals[1:] / vals[:-1]
        growth.append([float(x) for x in gk])
        if np.all(gk > divergence_factor):
            diverging = True
    return RefinementStudy(reports, stable and not diverging, diverging, growth)
