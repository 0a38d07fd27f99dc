"""Localized time averages, vortex stretching and the localized enstrophy budget.

All space-time cut-offs are separable, phi = psi(x) eta(t). A time integral
of the form  int_0^t int f psi^d eta^d dx ds  therefore equals
int psi^d (int_0^t f eta^d ds) dx, so each density is integrated in time
once on the whole grid (trapezoid rule over the samples) and every cover
element then needs only a single spatial quadrature over its support window.
The samples come either from a stored Trajectory or are streamed from the
solver through the ``observer`` hook of ``simulate``.

Normalisations follow the per-unit-mass convention (1/t)(1/R^3).
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .covers import Cover, generate
from .cutoffs import (
    CutoffPair,
    ProductCutoff,
    TemporalCutoff,
    boundary_adjust,
    frame_points,
    make_spatial,
    make_temporal,
)
from .grid import STRAIN_INDEX, Grid, ScalarField, VectorField, irfftn, rfftn
from .solver import Trajectory

log = logging.getLogger(__name__)

__all__ = [
    "SnapshotStrideError",
    "EmptyTrajectoryError",
    "Sample",
    "BUILTIN_DENSITIES",
    "Accumulator",
    "TimeIntegrals",
    "integrate_trajectory",
    "preflight",
    "element_cutoffs",
    "MacroStats",
    "LocalBudget",
    "EnsembleReport",
    "TheoremReport",
    "local_average",
    "ensemble_average",
    "vst_local",
    "vst_ensemble",
    "macro_stats",
    "budget_check",
    "theorem_check",
]


class EmptyTrajectoryError(ValueError):
    pass


class SnapshotStrideError(ValueError):
    """Snapshots too sparse for the trapezoid time quadrature."""


# --------------------------------------------------------------------- samples


class Sample:
    """Derived fields of one velocity snapshot, computed lazily and cached."""

    def __init__(self, u: VectorField):
        self.u = u
        self.grid = u.grid
        self._uh = None
        self._cache: Dict[str, np.ndarray] = {}

    @property
    def time(self) -> float:
        return self.u.time

    @property
    def uh(self) -> np.ndarray:
        if self._uh is None:
            self._uh = rfftn(self.u.values)
        return self._uh

    def _get(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    @property
    def omega_hat(self) -> np.ndarray:
        def f():
            kx, ky, kz = self.grid.derivative_wavenumbers
            uh = self.uh
            return 1j * np.array([ky * uh[2] - kz * uh[1], kz * uh[0] - kx * uh[2], kx * uh[1] - ky * uh[0]])

        return self._get("omega_hat", f)

    @property
    def omega(self) -> np.ndarray:
        return self._get("omega", lambda: irfftn(self.omega_hat, self.grid.n_points))

    @property
    def half_w2(self) -> np.ndarray:
        return self._get("half_w2", lambda: 0.5 * np.einsum("i...,i...->...", self.omega, self.omega))

    @property
    def w2(self) -> np.ndarray:
        return 2.0 * self.half_w2

    @property
    def w_abs(self) -> np.ndarray:
        return np.sqrt(self.w2)

    @property
    def grad_omega_sq(self) -> np.ndarray:
        """|grad w|^2 = sum_ij (d_j w_i)^2."""

        def f():
            kd = self.grid.derivative_wavenumbers
            n = self.grid.n_points
            wh = self.omega_hat
            out = np.zeros(self.grid.shape)
            for i in range(3):
                d = irfftn(np.array([1j * k * wh[i] for k in kd]), n)
                out += np.einsum("j...,j...->...", d, d)
            return out

        return self._get("grad_omega_sq", f)

    @property
    def strain(self) -> np.ndarray:
        def f():
            kd = self.grid.derivative_wavenumbers
            uh = self.uh
            comps = np.array([0.5j * (kd[j] * uh[i] + kd[i] * uh[j]) for i, j in STRAIN_INDEX])
            return irfftn(comps, self.grid.n_points)

        return self._get("strain", f)

    @property
    def vst(self) -> np.ndarray:
        """S w . w from the six strain components."""

        def f():
            s, w = self.strain, self.omega
            return (
                s[0] * w[0] ** 2
                + s[1] * w[1] ** 2
                + s[2] * w[2] ** 2
                + 2.0 * (s[3] * w[0] * w[1] + s[4] * w[0] * w[2] + s[5] * w[1] * w[2])
            )

        return self._get("vst", f)

    @property
    def stretching_direct(self) -> np.ndarray:
        """(w . grad) u . w from the nine velocity-gradient components."""

        def f():
            kd = self.grid.derivative_wavenumbers
            uh = self.uh
            A = irfftn(np.array([[1j * kd[j] * uh[i] for j in range(3)] for i in range(3)]), self.grid.n_points)
            w = self.omega
            return np.einsum("i...,ij...,j...->...", w, A, w)

        return self._get("stretching_direct", f)


DensityFn = Callable[[Sample], np.ndarray]

BUILTIN_DENSITIES: Dict[str, DensityFn] = {
    "one": lambda s: np.ones(s.grid.shape),
    "enstrophy": lambda s: s.w2,  # |w|^2
    "half_enstrophy": lambda s: s.half_w2,
    "palinstrophy": lambda s: s.grad_omega_sq,
    "vst": lambda s: s.vst,
    "stretching_direct": lambda s: s.stretching_direct,
    "energy": lambda s: np.einsum("i...,i...->...", s.u.values, s.u.values),
}


def _resolve_density(f) -> Tuple[str, DensityFn]:
    if isinstance(f, str):
        if f not in BUILTIN_DENSITIES:
            raise ValueError(f"unknown density {f!r}; choose from {sorted(BUILTIN_DENSITIES)}")
        return f, BUILTIN_DENSITIES[f]
    if callable(f):
        return getattr(f, "__name__", "custom"), f
    raise TypeError("density must be a builtin name or a callable(Sample) -> array")


# -------------------------------------------------------------- accumulation


@dataclass(eq=False)
class TimeIntegrals:
    """Grid fields integrated in time over (0, t) against powers of eta.

    ``fields[(name, d)]`` holds int_0^t f eta^d ds. Budget fields use the keys
    ("vst", 1), ("palinstrophy", 1), ("half_enstrophy", 1),
    ("half_enstrophy_deta", 1), ("flux", 1) and ("half_enstrophy", 0.5).
    """

    grid: Grid
    viscosity: float
    t: float
    temporal: TemporalCutoff
    R0: float
    macro_center: np.ndarray
    fields: Dict[Tuple[str, float], np.ndarray]
    final_half_w2: np.ndarray
    M0: float
    n_samples: int
    max_gap: float
    max_vorticity: float

    def field(self, name: str, delta: float = 1.0) -> np.ndarray:
        key = (name, float(delta))
        if key not in self.fields:
            raise KeyError(f"density {name!r} with exponent {delta} was not accumulated")
        return self.fields[key]

    @property
    def eta_t(self) -> float:
        return float(self.temporal.value(self.t))


_BUDGET_KEYS = [
    ("vst", 1.0),
    ("palinstrophy", 1.0),
    ("half_enstrophy", 1.0),
    ("half_enstrophy", 0.5),
    ("half_enstrophy_deta", 1.0),
    ("flux", 1.0),
]


class Accumulator:
    """Streaming trapezoid integration of densities against eta^d over (0, t).

    Feed samples in increasing time order with ``add``; one of them must fall
    on t (to within 1e-9 relative). Later samples only update M0, the
    running sup of int_{B(0,2R0)} |u|^2.
    """

    def __init__(
        self,
        grid: Grid,
        viscosity: float,
        t: float,
        temporal: TemporalCutoff,
        densities: Sequence = (),
        budget: bool = True,
        R0: Optional[float] = None,
        macro_center=None,
    ):
        if not t > 0:
            raise ValueError("diagnostic time t must be positive")
        self.grid = grid
        self.viscosity = float(viscosity)
        self.t = float(t)
        self.temporal = temporal
        self.R0 = float(R0) if R0 is not None else grid.box_length / 4
        self.macro_center = (
            np.full(3, grid.box_length / 2) if macro_center is None else np.asarray(macro_center, float)
        )
        self.specs: Dict[Tuple[str, float], DensityFn] = {}
        if budget:
            for key in _BUDGET_KEYS:
                self.specs[key] = None  # handled in _values
        for d in densities:
            f, delta = (d, 1.0) if not isinstance(d, tuple) else d
            name, fn = _resolve_density(f)
            self.specs[(name, float(delta))] = fn
        X = frame_points(grid, self.macro_center)
        self._big_ball = np.sum(X * X, axis=0) <= (2 * self.R0) ** 2
        self.acc = {k: None for k in self.specs}
        self.prev = None
        self.prev_time = None
        self.final = None
        self.done = False
        self.M0 = 0.0
        self.n = 0
        self.max_gap = 0.0
        self.wmax = 0.0

    def _values(self, s: Sample) -> Dict[Tuple[str, float], np.ndarray]:
        eta = float(self.temporal.value(s.time))
        out = {}
        for key, fn in self.specs.items():
            name, d = key
            if fn is None:
                if name == "half_enstrophy_deta":
                    out[key] = float(self.temporal.derivative(s.time)) * s.half_w2
                elif name == "flux":
                    out[key] = eta * s.half_w2 * s.u.values
                else:
                    out[key] = eta**d * BUILTIN_DENSITIES[name](s)
            else:
                w = eta**d
                out[key] = w * fn(s) if w != 0 else np.zeros(self.grid.shape)
        return out

    def add(self, u: VectorField) -> None:
        if u.grid != self.grid:
            raise ValueError("sample grid differs from accumulator grid")
        self.M0 = max(self.M0, float(np.sum(np.sum(u.values**2, axis=0)[self._big_ball]) * self.grid.cell_volume))
        if self.done:
            return
        s = Sample(u)
        tol = 1e-9 * max(1.0, self.t)
        if self.prev_time is not None and s.time <= self.prev_time:
            raise ValueError("samples must arrive in increasing time order")
        if s.time > self.t + tol:
            raise SnapshotStrideError(f"no sample at diagnostic time t={self.t:g} (next sample at {s.time:g})")
        if self.prev_time is None and abs(s.time) > tol:
            raise SnapshotStrideError("first sample must be at time 0")
        vals = self._values(s)
        self.wmax = max(self.wmax, float(np.sqrt(np.max(s.w2))))
        if self.prev is not None:
            h = 0.5 * (s.time - self.prev_time)
            self.max_gap = max(self.max_gap, 2 * h)
            for k, v in vals.items():
                inc = h * (self.prev[k] + v)
                self.acc[k] = inc if self.acc[k] is None else self.acc[k] + inc
        self.prev, self.prev_time = vals, s.time
        self.n += 1
        if abs(s.time - self.t) <= tol:
            self.final = s.half_w2.copy()
            self.done = True

    def result(self) -> TimeIntegrals:
        if self.n == 0:
            raise EmptyTrajectoryError("no samples were accumulated")
        if not self.done:
            raise SnapshotStrideError(f"samples end at {self.prev_time:g} before diagnostic time {self.t:g}")
        fields = {k: (v if v is not None else np.zeros_like(self.prev[k])) for k, v in self.acc.items()}
        return TimeIntegrals(
            self.grid,
            self.viscosity,
            self.t,
            self.temporal,
            self.R0,
            self.macro_center,
            fields,
            self.final,
            self.M0,
            self.n,
            self.max_gap,
            self.wmax,
        )


def preflight(trajectory: Trajectory, t: float, T: float, max_cfl_like: float = 0.25, ramp_samples: int = 10):
    """Reject snapshot strides too coarse for the trapezoid time quadrature.

    Requires at least ``ramp_samples`` samples across the temporal ramp
    (length T/3) and gap * max|w| <= ``max_cfl_like`` (the vorticity sets the
    fastest time scale of the integrands).
    """
    times = trajectory.times
    times = times[times <= t * (1 + 1e-9)]
    if len(times) == 0:
        raise EmptyTrajectoryError("trajectory has no snapshots before t")
    if len(times) < 2:
        raise SnapshotStrideError("need at least two snapshots for the time quadrature")
    gap = float(np.max(np.diff(times)))
    if gap > T / (3 * ramp_samples) * (1 + 1e-9):
        raise SnapshotStrideError(
            f"snapshot gap {gap:g} exceeds T/{3 * ramp_samples} = {T / (3 * ramp_samples):g}; reduce the stride"
        )
    wmax = float(np.max(trajectory.max_vorticity)) if len(trajectory.max_vorticity) else 0.0
    if gap * wmax > max_cfl_like:
        raise SnapshotStrideError(
            f"snapshot gap {gap:g} times max vorticity {wmax:g} exceeds {max_cfl_like}; reduce the stride"
        )


def integrate_trajectory(
    trajectory: Trajectory,
    t: Optional[float] = None,
    T: Optional[float] = None,
    rho1: float = 0.75,
    densities: Sequence = (),
    budget: bool = True,
    R0: Optional[float] = None,
    macro_center=None,
    check: bool = True,
    temporal: Optional[TemporalCutoff] = None,
) -> TimeIntegrals:
    """Time-integrate a stored trajectory up to ``t`` (default: last snapshot).

    ``T`` is the horizon of the temporal cut-off (default: last snapshot time).
    """
    if len(trajectory) == 0:
        raise EmptyTrajectoryError("trajectory has no snapshots")
    times = trajectory.times
    T = float(times[-1]) if T is None else float(T)
    t = float(times[-1]) if t is None else float(t)
    if temporal is None:
        temporal = make_temporal(T, rho1)
    if check:
        preflight(trajectory, t, T)
    acc = Accumulator(
        trajectory.grid, trajectory.viscosity, t, temporal, densities, budget, R0, macro_center
    )
    for snap in trajectory.snapshots:
        acc.add(snap.u)
    return acc.result()


# ------------------------------------------------------------------- elements


def element_cutoffs(cover: Cover, rho2: float = 0.75, strict: bool = False) -> list:
    """Boundary-adjusted spatial cut-offs of every cover element (macro frame)."""
    psi0 = make_spatial((0.0, 0.0, 0.0), cover.R0, rho2)
    return [boundary_adjust(make_spatial(c, cover.R, rho2), psi0, strict=strict) for c in cover.centers]


def _macro_cutoff(R0: float, rho2: float):
    return make_spatial((0.0, 0.0, 0.0), R0, rho2)


def _spatial_integral(F: np.ndarray, psi, grid: Grid, macro_center, power: float = 1.0, what: str = "value"):
    """int F * psi^power over the support window (what='value'), or against
    grad psi / laplacian psi. F may carry a leading vector axis for 'gradient'."""
    idx = psi.window(grid, macro_center)
    X = frame_points(grid, macro_center, idx)
    ix = np.ix_(*idx)
    if what == "value":
        w = psi.value(X)
        if power != 1.0:
            w = w**power
        return float(np.sum(F[ix] * w) * grid.cell_volume)
    if what == "laplacian":
        return float(np.sum(F[ix] * psi.laplacian(X)) * grid.cell_volume)
    if what == "gradient":
        g = psi.gradient(X)
        return float(sum(np.sum(F[a][ix] * g[a]) for a in range(3)) * grid.cell_volume)
    raise ValueError(what)


def _map(fn, items, workers: int = 1):
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


# ---------------------------------------------------------------------- reports


@dataclass
class MacroStats:
    t: float
    E0t: float
    P0t: float
    sigma0t: Optional[float]
    M0: float
    R0: float
    note: str = ""

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class LocalBudget:
    """Terms of the localized enstrophy budget for one element, per unit mass.

    vst = final_enstrophy + palinstrophy - cutoff - transport + residual,
    where the palinstrophy term carries the viscosity and the cutoff term
    collects the eta' psi and nu eta laplacian(psi) contributions.
    """

    index: int
    center: Tuple[float, float, float]
    R: float
    t: float
    vst: float
    final_enstrophy: float
    palinstrophy: float
    cutoff: float
    transport: float
    residual: float
    relative_residual: float
    kind: str = "interior"

    def as_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class EnsembleReport:
    R: float
    t: float
    density: str
    delta_exp: float
    values: List[np.ndarray]
    F0: Optional[float] = None
    P0t: Optional[float] = None
    covers: List[str] = field(default_factory=list)

    @property
    def means(self) -> np.ndarray:
        return np.array([float(np.mean(v)) for v in self.values])

    @property
    def mean(self) -> float:
        """Mean of the first cover of the family."""
        return float(self.means[0])

    @property
    def spread(self) -> Tuple[float, float]:
        m = self.means
        return float(m.min()), float(m.max())

    @property
    def ratios_to_F0(self) -> Optional[np.ndarray]:
        return None if not self.F0 else self.means / self.F0

    @property
    def ratios_to_P0(self) -> Optional[np.ndarray]:
        return None if not self.P0t else self.means / self.P0t

    @property
    def both_signs(self) -> bool:
        m = self.means
        return bool(np.any(m > 0) and np.any(m < 0))

    def rows(self) -> List[dict]:
        out = []
        for c, v in enumerate(self.values):
            for i, x in enumerate(v):
                out.append({"R": self.R, "t": self.t, "density": self.density, "cover": c, "element": i, "value": float(x)})
        return out

    def as_dict(self) -> dict:
        d = {
            "R": self.R,
            "t": self.t,
            "density": self.density,
            "delta_exp": self.delta_exp,
            "means": self.means.tolist(),
            "spread": list(self.spread),
            "F0": self.F0,
            "P0t": self.P0t,
            "covers": self.covers,
            "n_elements": [len(v) for v in self.values],
        }
        if self.F0:
            d["ratios_to_F0"] = self.ratios_to_F0.tolist()
        if self.P0t:
            d["ratios_to_P0"] = self.ratios_to_P0.tolist()
        return d


@dataclass
class TheoremReport:
    t: float
    C_report: float
    macro: MacroStats
    lower: Optional[float]
    R0: float
    applicable: bool
    scales: List[float]
    admissible: List[float]
    ratios: Dict[float, List[float]]
    C_emp: Optional[float]
    positive: Optional[bool]
    note: str = ""

    @property
    def min_ratio(self) -> Optional[float]:
        vals = [r for v in self.ratios.values() for r in v]
        return min(vals) if vals else None

    @property
    def max_ratio(self) -> Optional[float]:
        vals = [r for v in self.ratios.values() for r in v]
        return max(vals) if vals else None

    def as_dict(self) -> dict:
        return {
            "t": self.t,
            "C_report": self.C_report,
            "macro": self.macro.as_dict(),
            "condition_lhs": self.lower,
            "range": [self.lower, self.R0] if self.lower is not None else None,
            "applicable": self.applicable,
            "scales": self.scales,
            "admissible": self.admissible,
            "ratios": {str(k): v for k, v in self.ratios.items()},
            "min_ratio": self.min_ratio,
            "max_ratio": self.max_ratio,
            "C_emp": self.C_emp,
            "positive": self.positive,
            "note": self.note,
        }


# ------------------------------------------------------------------ operations


def _as_integrals(obj, t, densities=(), budget=True, R0=None, rho1=0.75, T=None, macro_center=None) -> TimeIntegrals:
    if isinstance(obj, TimeIntegrals):
        for d in densities:
            name, _ = _resolve_density(d[0] if isinstance(d, tuple) else d)
            delta = float(d[1]) if isinstance(d, tuple) else 1.0
            obj.field(name, delta)
        return obj
    if isinstance(obj, ScalarField):
        return _static_integrals(obj, densities, R0, macro_center)
    if isinstance(obj, Trajectory):
        return integrate_trajectory(
            obj, t, T, rho1, densities=densities, budget=budget, R0=R0, macro_center=macro_center
        )
    raise TypeError("expected a Trajectory or TimeIntegrals")


def _static_integrals(f: ScalarField, densities, R0=None, macro_center=None) -> TimeIntegrals:
    """Wrap a time-independent density as integrals over (0, 1) with eta = 1.

    Every requested (name, delta) key maps to the same field, so the local
    averages reduce to (1/R^3) int f psi^delta dx.
    """
    g = f.grid
    mc = np.full(3, g.box_length / 2) if macro_center is None else np.asarray(macro_center, float)
    keys = {}
    for d in densities:
        name = d[0] if isinstance(d, tuple) else d
        name = name if isinstance(name, str) else getattr(name, "__name__", "custom")
        keys[(name, float(d[1]) if isinstance(d, tuple) else 1.0)] = np.asarray(f.values, float)
    return TimeIntegrals(
        g, 0.0, 1.0, TemporalCutoff(1.0, 0.75, 4, profile="one"),
        float(R0) if R0 is not None else g.box_length / 4, mc, keys,
        np.zeros(g.shape), 0.0, 1, 0.0, 0.0,
    )


def local_average(
    f: Sequence[ScalarField],
    cutoff: CutoffPair,
    t: Optional[float] = None,
    macro_center=None,
) -> float:
    """(1/t) int_0^t (1/R^3) int f phi^delta dx ds from density snapshots.

    ``f`` is a time-ordered sequence of ScalarFields (their ``time``
    attributes give the quadrature nodes); ``cutoff.spatial`` is in the
    macro frame. This is the direct route: each snapshot is weighted and
    integrated separately.
    """
    if len(f) == 0:
        raise EmptyTrajectoryError("no density snapshots")
    times = np.array([s.time for s in f])
    t = float(times[-1]) if t is None else float(t)
    keep = times <= t * (1 + 1e-9)
    times = times[keep]
    snaps = [s for s, k in zip(f, keep) if k]
    if abs(times[-1] - t) > 1e-9 * max(1.0, t):
        raise SnapshotStrideError(f"no density snapshot at t={t:g}")
    if len(times) < 2:
        raise SnapshotStrideError("need at least two snapshots")
    grid = snaps[0].grid
    mc = np.full(3, grid.box_length / 2) if macro_center is None else np.asarray(macro_center, float)
    w = np.zeros(len(times))
    dt = np.diff(times)
    w[:-1] += dt / 2
    w[1:] += dt / 2
    d = cutoff.delta_exp
    total = 0.0
    for wk, s in zip(w, snaps):
        eta = float(cutoff.temporal.value(s.time)) ** d
        if wk * eta == 0:
            continue
        total += wk * eta * _spatial_integral(s.values, cutoff.spatial, grid, mc, power=d)
    return total / (t * cutoff.spatial.radius**3)


def _element_values(I: TimeIntegrals, F: np.ndarray, psis, R: float, delta: float, workers: int = 1) -> np.ndarray:
    scale = 1.0 / (I.t * R**3)
    return np.array(_map(lambda p: scale * _spatial_integral(F, p, I.grid, I.macro_center, power=delta), psis, workers))


def _F0(I: TimeIntegrals, F: np.ndarray, rho2: float, delta: float) -> float:
    psi0 = _macro_cutoff(I.R0, rho2)
    return _spatial_integral(F, psi0, I.grid, I.macro_center, power=delta) / (I.t * I.R0**3)


def ensemble_average(
    f,
    covers: Union[Cover, Sequence[Cover]],
    source,
    t: Optional[float] = None,
    delta_exp: float = 1.0,
    rho1: float = 0.75,
    rho2: float = 0.75,
    T: Optional[float] = None,
    macro_center=None,
    workers: int = 1,
) -> EnsembleReport:
    """Per-element local averages of density ``f`` and their mean, per cover.

    ``f`` is a builtin density name or a callable(Sample) -> array; ``source``
    is a Trajectory or TimeIntegrals that accumulated (f, delta_exp), or a
    time-independent ScalarField (then ``f`` is only a label). F0, the
    macro average with psi0^delta_exp, is reported alongside.
    """
    covers = [covers] if isinstance(covers, Cover) else list(covers)
    if not covers:
        raise ValueError("no covers given")
    if isinstance(source, ScalarField):
        name = f if isinstance(f, str) else getattr(f, "__name__", "custom")
    else:
        name, _ = _resolve_density(f)
    R0 = covers[0].R0
    I = _as_integrals(source, t, [(f, delta_exp)], budget=False, R0=R0, rho1=rho1, T=T, macro_center=macro_center)
    F = I.field(name, delta_exp)
    R = covers[0].R
    vals = []
    for c in covers:
        if abs(c.R - R) > 1e-12 * R or abs(c.R0 - I.R0) > 1e-12 * R0:
            raise ValueError("all covers of a family must share R and R0 with the integrals")
        vals.append(_element_values(I, F, element_cutoffs(c, rho2), R, delta_exp, workers))
    return EnsembleReport(
        R=R,
        t=I.t,
        density=name,
        delta_exp=delta_exp,
        values=vals,
        F0=_F0(I, F, rho2, delta_exp),
        covers=[f"{c.strategy}:{c.seed}" for c in covers],
    )


def vst_local(source, cutoff: CutoffPair, t: Optional[float] = None, macro_center=None) -> float:
    """(1/t) int_0^t (1/R^3) int (w.grad)u . w phi dx ds for one element."""
    if isinstance(source, Trajectory):
        if source.times.size and t is not None and t <= 0:
            raise ValueError("t must be positive")
        I = integrate_trajectory(
            source, t, cutoff.temporal.horizon, budget=True, macro_center=macro_center, temporal=cutoff.temporal
        )
    else:
        I = source
    F = I.field("vst", 1.0)
    return _spatial_integral(F, cutoff.spatial, I.grid, I.macro_center) / (I.t * cutoff.spatial.radius**3)


def vst_ensemble(
    source,
    covers: Union[Cover, Sequence[Cover]],
    t: Optional[float] = None,
    rho1: float = 0.75,
    rho2: float = 0.75,
    T: Optional[float] = None,
    macro_center=None,
    workers: int = 1,
) -> EnsembleReport:
    """Ensemble average of the vortex-stretching term (phi to the first power)."""
    covers = [covers] if isinstance(covers, Cover) else list(covers)
    I = _as_integrals(source, t, budget=True, R0=covers[0].R0, rho1=rho1, T=T, macro_center=macro_center)
    F = I.field("vst", 1.0)
    R = covers[0].R
    vals = [_element_values(I, F, element_cutoffs(c, rho2), R, 1.0, workers) for c in covers]
    rep = EnsembleReport(
        R=R,
        t=I.t,
        density="vst",
        delta_exp=1.0,
        values=vals,
        F0=_F0(I, F, rho2, 1.0),
        covers=[f"{c.strategy}:{c.seed}" for c in covers],
    )
    rep.P0t = macro_stats(I, rho2=rho2).P0t
    return rep


def macro_stats(
    source,
    t: Optional[float] = None,
    rho2: float = 0.75,
    R0: Optional[float] = None,
    localize: bool = True,
    include_final: bool = True,
    rho1: float = 0.75,
    T: Optional[float] = None,
    macro_center=None,
) -> MacroStats:
    """E0t (with phi0^(1/2)), P0t (palinstrophy plus final-time term), sigma0t, M0.

    ``localize=False`` replaces psi0 by 1 on the whole torus and
    ``include_final=False`` drops the final-time term of P0t; both exist for
    testing against Parseval on single modes.
    """
    I = _as_integrals(source, t, budget=True, R0=R0, rho1=rho1, T=T, macro_center=macro_center)
    g = I.grid
    R0 = I.R0
    norm = 1.0 / (I.t * R0**3)
    if localize:
        psi0 = _macro_cutoff(R0, rho2)
        X = frame_points(g, I.macro_center)
        p0 = psi0.value(X)
    else:
        p0 = np.ones(g.shape)
    dv = g.cell_volume
    E = norm * float(np.sum(I.field("half_enstrophy", 0.5) * np.sqrt(p0)) * dv)
    P = norm * float(np.sum(I.field("palinstrophy", 1.0) * p0) * dv)
    if include_final:
        P += norm * float(np.sum(I.final_half_w2 * p0) * dv)
    if P > 0:
        sigma, note = math.sqrt(E / P), ""
    else:
        sigma, note = None, "P0t = 0: sigma undefined (vorticity vanishes)"
    return MacroStats(I.t, E, P, sigma, I.M0, R0, note)


def _budget_one(I: TimeIntegrals, i: int, center, psi) -> LocalBudget:
    g, mc = I.grid, I.macro_center
    R = psi.radius
    norm = 1.0 / (I.t * R**3)
    vst = norm * _spatial_integral(I.field("vst"), psi, g, mc)
    final = norm * I.eta_t * _spatial_integral(I.final_half_w2, psi, g, mc)
    palin = norm * I.viscosity * _spatial_integral(I.field("palinstrophy"), psi, g, mc)
    cut = norm * (
        _spatial_integral(I.field("half_enstrophy_deta"), psi, g, mc)
        + I.viscosity * _spatial_integral(I.field("half_enstrophy"), psi, g, mc, what="laplacian")
    )
    trans = norm * _spatial_integral(I.field("flux"), psi, g, mc, what="gradient")
    res = vst - (final + palin - cut - trans)
    scale = max(abs(vst), abs(final), abs(palin), abs(cut), abs(trans))
    rel = abs(res) / scale if scale > 0 else 0.0
    kind = type(psi).__name__.replace("Cutoff", "").lower() or "interior"
    if kind == "spatial":
        kind = "interior"
    return LocalBudget(i, tuple(float(c) for c in center), R, I.t, vst, final, palin, cut, trans, res, rel, kind)


def budget_check(
    source,
    cover: Cover,
    t: Optional[float] = None,
    elements: Optional[Sequence[int]] = None,
    rho1: float = 0.75,
    rho2: float = 0.75,
    T: Optional[float] = None,
    macro_center=None,
    workers: int = 1,
) -> List[LocalBudget]:
    """Evaluate every term of the localized enstrophy budget per element.

    The diagnostic time should lie in (2T/3, T), where the temporal cut-off
    is identically one near t.
    """
    I = _as_integrals(source, t, budget=True, R0=cover.R0, rho1=rho1, T=T, macro_center=macro_center)
    T_ = I.temporal.horizon
    if not (2 * T_ / 3 < I.t <= T_ * (1 + 1e-9)):
        log.warning("diagnostic time %.4g outside (2T/3, T] for T=%.4g", I.t, T_)
    psis = element_cutoffs(cover, rho2)
    idx = range(cover.n) if elements is None else elements
    return _map(lambda i: _budget_one(I, i, cover.centers[i], psis[i]), list(idx), workers)


def theorem_check(
    source,
    scales: Sequence[float],
    t: Optional[float] = None,
    family_size: int = 4,
    C_report: float = 1.0,
    R0: Optional[float] = None,
    K1: int = 8,
    K2: int = 27,
    seed: int = 0,
    rho1: float = 0.75,
    rho2: float = 0.75,
    T: Optional[float] = None,
    macro_center=None,
    workers: int = 1,
) -> TheoremReport:
    """Check positivity of <VST>_R / P0t over the admissible range of scales.

    The range lower bound is C_report * max(M0^(1/2), 1) * sigma0t^(1/2).
    Each admissible R is tested on ``family_size`` certified jittered covers.
    The empirical constant C_emp = max(max ratio, 1 / min ratio) is reported;
    no theoretical constant is asserted.
    """
    I = _as_integrals(source, t, budget=True, R0=R0, rho1=rho1, T=T, macro_center=macro_center)
    R0 = I.R0
    ms = macro_stats(I, rho2=rho2)
    scales = [float(r) for r in scales]
    T_ = I.temporal.horizon
    notes = []
    if R0 > math.sqrt(T_) * (1 + 1e-12):
        notes.append(f"R0={R0:.4g} exceeds sqrt(T)={math.sqrt(T_):.4g}; the theorem's scale link is violated")
    if not (2 * T_ / 3 < I.t <= T_ * (1 + 1e-9)):
        notes.append(f"t={I.t:.4g} outside (2T/3, T]")
    if ms.sigma0t is None:
        return TheoremReport(I.t, C_report, ms, None, R0, False, scales, [], {}, None, None, "; ".join(notes + [ms.note]))
    lower = C_report * max(math.sqrt(ms.M0), 1.0) * math.sqrt(ms.sigma0t)
    if not lower < R0:
        notes.append(f"condition fails: lower bound {lower:.4g} >= R0 {R0:.4g}")
        return TheoremReport(I.t, C_report, ms, lower, R0, False, scales, [], {}, None, None, "; ".join(notes))
    admissible = [R for R in scales if lower <= R <= R0 * (1 + 1e-12)]
    if not admissible:
        notes.append("no requested scale lies in the admissible range")
    ratios: Dict[float, List[float]] = {}
    F = I.field("vst", 1.0)
    for R in admissible:
        covers = [
            generate(R0, R, K1, K2, strategy="jittered", seed=seed + j)
            for j in range(family_size)
        ]
        vals = [_element_values(I, F, element_cutoffs(c, rho2), R, 1.0, workers) for c in covers]
        ratios[R] = [float(np.mean(v)) / ms.P0t for v in vals]
    flat = [r for v in ratios.values() for r in v]
    if flat:
        positive = all(r > 0 for r in flat)
        C_emp = max(max(flat), 1.0 / min(flat)) if positive else math.inf
    else:
        positive, C_emp = None, None
    return TheoremReport(I.t, C_report, ms, lower, R0, True, scales, admissible, ratios, C_emp, positive, "; ".join(notes))
