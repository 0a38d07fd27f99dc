"""Pseudo-spectral integration of the incompressible Navier-Stokes equations.

Velocity formulation on the periodic box, rotational form of the
nonlinearity (u x w), Leray projection in Fourier space, 2/3-rule
dealiasing, and classical RK4 with an integrating factor exp(-nu k^2 t)
for the viscous term. No forcing.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Tuple

import numpy as np

from .grid import Grid, VectorField, curl, irfftn, rfftn

log = logging.getLogger(__name__)

__all__ = [
    "InitialCondition",
    "SolverConfig",
    "Snapshot",
    "Trajectory",
    "SolverError",
    "CFLViolation",
    "NumericalBlowup",
    "initial_condition",
    "step",
    "simulate",
    "kinetic_energy",
]


class SolverError(RuntimeError):
    """Base class for numerical failures during time stepping."""


class CFLViolation(SolverError):
    def __init__(self, cfl: float, limit: float, time: float):
        super().__init__(f"CFL number {cfl:.3g} exceeds {limit:g} at t={time:.6g}; step rejected")
        self.cfl = cfl
        self.limit = limit
        self.time = time


class NumericalBlowup(SolverError):
    def __init__(self, time: float, state: Optional[VectorField], dump_path: Optional[str] = None):
        msg = f"non-finite values after step ending at t={time:.6g}"
        if dump_path:
            msg += f"; last good state written to {dump_path}"
        super().__init__(msg)
        self.time = time
        self.state = state
        self.dump_path = dump_path


@dataclass(frozen=True)
class InitialCondition:
    """``kind`` is taylor_green, taylor_green_3d, abc or random.

    abc uses (A, B, C); random uses (seed, slope, peak_wavenumber, energy).
    """

    kind: str = "taylor_green"
    A: float = 1.0
    B: float = 1.0
    C: float = 1.0
    seed: int = 0
    slope: float = 4.0
    peak_wavenumber: float = 4.0
    energy: float = 0.5

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class SolverConfig:
    grid: Grid
    viscosity: float = 1.0
    dt: float = 1e-3
    t_end: float = 0.0
    snapshot_stride: int = 1
    initial_condition: InitialCondition = field(default_factory=InitialCondition)
    dealias: bool = True
    cfl_limit: float = 0.5

    def __post_init__(self):
        if not self.viscosity > 0:
            raise ValueError("viscosity must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.t_end < 0:
            raise ValueError("t_end must be non-negative")
        if int(self.snapshot_stride) < 1:
            raise ValueError("snapshot_stride must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(math.ceil(self.t_end / self.dt - 1e-9)) if self.t_end > 0 else 0

    @property
    def step_size(self) -> float:
        """dt shrunk (if needed) so that n_steps * step_size == t_end."""
        n = self.n_steps
        return self.t_end / n if n else self.dt

    def to_dict(self) -> dict:
        return {
            "n_points": self.grid.n_points,
            "box_length": self.grid.box_length,
            "viscosity": self.viscosity,
            "dt": self.dt,
            "t_end": self.t_end,
            "snapshot_stride": self.snapshot_stride,
            "initial_condition": self.initial_condition.to_dict(),
            "dealias": self.dealias,
            "cfl_limit": self.cfl_limit,
        }


@dataclass(frozen=True, eq=False)
class Snapshot:
    time: float
    u: VectorField


@dataclass(eq=False)
class Trajectory:
    """Time-ordered velocity snapshots; vorticity is derived on demand."""

    config: SolverConfig
    snapshots: List[Snapshot]
    step_times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    max_vorticity: np.ndarray = field(default_factory=lambda: np.zeros(0))
    energy: np.ndarray = field(default_factory=lambda: np.zeros(0))
    enstrophy: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        t = self.times
        if len(t) > 1 and not np.all(np.diff(t) > 0):
            raise ValueError("snapshot times must be strictly increasing")

    @property
    def grid(self) -> Grid:
        return self.config.grid

    @property
    def viscosity(self) -> float:
        return self.config.viscosity

    @property
    def times(self) -> np.ndarray:
        return np.array([s.time for s in self.snapshots])

    def __len__(self) -> int:
        return len(self.snapshots)

    def velocity(self, i: int) -> VectorField:
        return self.snapshots[i].u

    def vorticity(self, i: int) -> VectorField:
        return curl(self.snapshots[i].u)

    def index_at(self, t: float) -> int:
        """Index of the snapshot nearest to time t."""
        return int(np.argmin(np.abs(self.times - t)))

    def upto(self, t: float) -> "Trajectory":
        """Snapshots with time <= t (to within a step tolerance)."""
        tol = 1e-9 * max(1.0, abs(t))
        snaps = [s for s in self.snapshots if s.time <= t + tol]
        return Trajectory(self.config, snaps, self.step_times, self.max_vorticity, self.energy, self.enstrophy)

    def energy_inequality(self) -> Tuple[float, float]:
        """(E(t) + nu * int_0^t ||grad u||^2, E(0)) from the per-step record."""
        nu = self.viscosity
        diss = np.trapezoid(2 * nu * self.enstrophy, self.step_times) if len(self.step_times) > 1 else 0.0
        return float(self.energy[-1] + diss), float(self.energy[0])


def kinetic_energy(u: VectorField) -> float:
    """(1/2) * integral of |u|^2."""
    return 0.5 * float(np.sum(u.values**2)) * u.grid.cell_volume


def _project(uh: np.ndarray, grid: Grid) -> np.ndarray:
    k = grid.wavenumbers
    k2 = grid.k_squared
    kdotu = k[0] * uh[0] + k[1] * uh[1] + k[2] * uh[2]
    inv = np.where(k2 > 0, 1.0 / np.where(k2 > 0, k2, 1.0), 0.0)
    return np.array([uh[i] - k[i] * kdotu * inv for i in range(3)])


def _shell_profile(k: np.ndarray, slope: float, kp: float) -> np.ndarray:
    """Energy spectrum ~ (k/kp)^slope exp(-(slope/2)(k/kp)^2), peaked at kp."""
    x = k / kp
    return x**slope * np.exp(-0.5 * slope * x**2)


def initial_condition(kind, grid: Grid) -> VectorField:
    """Divergence-free initial velocity on ``grid``.

    ``kind`` is an InitialCondition or one of the strings taylor_green,
    taylor_green_3d, abc, random (with default parameters).
    """
    ic = InitialCondition(kind) if isinstance(kind, str) else kind
    X = grid.mesh()
    x, y, z = X[0] * grid.k_unit, X[1] * grid.k_unit, X[2] * grid.k_unit
    if ic.kind == "taylor_green":
        u = np.array([np.sin(x) * np.cos(y), -np.cos(x) * np.sin(y), np.zeros_like(x)])
    elif ic.kind == "taylor_green_3d":
        u = np.array(
            [np.sin(x) * np.cos(y) * np.cos(z), -np.cos(x) * np.sin(y) * np.cos(z), np.zeros_like(x)]
        )
    elif ic.kind == "abc":
        A, B, C = ic.A, ic.B, ic.C
        u = np.array(
            [A * np.sin(z) + C * np.cos(y), B * np.sin(x) + A * np.cos(z), C * np.sin(y) + B * np.cos(x)]
        )
    elif ic.kind == "random":
        u = _random_field(grid, ic)
    else:
        raise ValueError(f"unknown initial condition {ic.kind!r}")
    return VectorField(grid, u, 0.0)


def _random_field(grid: Grid, ic: InitialCondition) -> np.ndarray:
    rng = np.random.default_rng(ic.seed)
    noise = rng.standard_normal((3,) + grid.shape)
    uh = _project(rfftn(noise), grid)
    kmag = np.sqrt(grid.k_squared) / grid.k_unit
    mask = grid.dealias_mask & grid.nyquist_mask & (kmag > 0)
    uh = np.where(mask, uh, 0.0)
    # rescale shell by shell to the target spectrum
    shell = np.rint(kmag).astype(int)
    weight = np.full(kmag.shape, 2.0)
    weight[..., 0] = 1.0
    if grid.n_points % 2 == 0:
        weight[..., -1] = 1.0
    e_mode = 0.5 * weight * np.sum(np.abs(uh) ** 2, axis=0)
    nshell = int(shell.max()) + 1
    have = np.bincount(shell.ravel(), weights=e_mode.ravel(), minlength=nshell)
    want = _shell_profile(np.arange(nshell, dtype=float), ic.slope, ic.peak_wavenumber)
    want[0] = 0.0
    factor = np.sqrt(np.where(have > 0, want / np.where(have > 0, have, 1.0), 0.0))
    uh = uh * factor[shell]
    u = irfftn(uh, grid.n_points)
    e = 0.5 * np.mean(np.sum(u**2, axis=0))
    return u * math.sqrt(ic.energy / e) if e > 0 else u


class _Integrator:
    """Stateful IF-RK4 stepper working on rfft coefficients."""

    def __init__(self, cfg: SolverConfig):
        self.cfg = cfg
        g = cfg.grid
        self.grid = g
        self.mask = (g.dealias_mask if cfg.dealias else np.ones(g.k_squared.shape, bool)) & g.nyquist_mask
        self.h = cfg.step_size
        self.E = np.exp(-cfg.viscosity * g.k_squared * self.h)
        self.E2 = np.exp(-cfg.viscosity * g.k_squared * self.h / 2)
        self.last_umax = 0.0
        self.last_wmax = 0.0
        self.dk = g.derivative_wavenumbers
        self.k = np.array(np.broadcast_arrays(*g.wavenumbers))
        k2 = g.k_squared
        self.k_over_k2 = self.k * np.where(k2 > 0, 1.0 / np.where(k2 > 0, k2, 1.0), 0.0)
        self.buf = np.empty((6,) + k2.shape, dtype=complex)

    def rhs(self, uh: np.ndarray, record: bool = False) -> np.ndarray:
        g = self.grid
        kx, ky, kz = self.dk
        buf = self.buf
        buf[:3] = uh
        np.multiply(ky, uh[2], out=buf[3])
        buf[3] -= kz * uh[1]
        np.multiply(kz, uh[0], out=buf[4])
        buf[4] -= kx * uh[2]
        np.multiply(kx, uh[1], out=buf[5])
        buf[5] -= ky * uh[0]
        buf[3:] *= 1j
        uw = irfftn(buf, g.n_points)
        u, w = uw[:3], uw[3:]
        if record:
            self.last_umax = float(np.sqrt(np.max(np.einsum("i...,i...->...", u, u))))
            self.last_wmax = float(np.sqrt(np.max(np.einsum("i...,i...->...", w, w))))
        lamb = np.empty_like(u)
        np.multiply(u[1], w[2], out=lamb[0])
        lamb[0] -= u[2] * w[1]
        np.multiply(u[2], w[0], out=lamb[1])
        lamb[1] -= u[0] * w[2]
        np.multiply(u[0], w[1], out=lamb[2])
        lamb[2] -= u[1] * w[0]
        nh = rfftn(lamb)
        nh *= self.mask
        # Leray projection: nh - k (k . nh) / |k|^2
        kdot = np.einsum("i...,i...->...", self.k, nh)
        nh -= self.k_over_k2 * kdot
        return nh

    def advance(self, uh: np.ndarray, t: float) -> np.ndarray:
        dt, E, E2 = self.h, self.E, self.E2
        a = self.rhs(uh, record=True)
        cfl = self.last_umax * dt / self.grid.spacing
        if cfl > self.cfg.cfl_limit:
            raise CFLViolation(cfl, self.cfg.cfl_limit, t)
        b = self.rhs(E2 * (uh + 0.5 * dt * a))
        c = self.rhs(E2 * uh + 0.5 * dt * b)
        d = self.rhs(E * uh + dt * E2 * c)
        return E * uh + dt / 6.0 * (E * a + 2.0 * E2 * (b + c) + d)


def step(u: VectorField, cfg: SolverConfig) -> VectorField:
    """Advance ``u`` by one step of size cfg.dt."""
    one = SolverConfig(
        grid=cfg.grid,
        viscosity=cfg.viscosity,
        dt=cfg.dt,
        t_end=cfg.dt,
        initial_condition=cfg.initial_condition,
        dealias=cfg.dealias,
        cfl_limit=cfg.cfl_limit,
    )
    integ = _Integrator(one)
    uh = rfftn(u.values) * integ.mask
    with np.errstate(over="ignore", invalid="ignore"):
        new = integ.advance(uh, u.time)
    out = irfftn(new, cfg.grid.n_points)
    if not np.all(np.isfinite(out)):
        raise NumericalBlowup(u.time + cfg.dt, u)
    return VectorField(cfg.grid, out, u.time + cfg.dt)


def simulate(
    cfg: SolverConfig,
    u0: Optional[VectorField] = None,
    dump_dir: Optional[str] = None,
    observer: Optional[Callable[[VectorField], None]] = None,
) -> Trajectory:
    """Integrate from the configured initial condition to t_end.

    Snapshots are stored every ``snapshot_stride`` steps and at t_end. The
    sup norm of vorticity, kinetic energy and enstrophy are recorded at every
    step. On non-finite values the last good state is written to
    ``dump_dir`` (if given) and NumericalBlowup is raised. ``observer``, if
    given, receives the velocity after every step (and at t = 0), which lets
    time-integrated diagnostics run without storing every snapshot.
    """
    g = cfg.grid
    if u0 is None:
        u0 = initial_condition(cfg.initial_condition, g)
    integ = _Integrator(cfg)
    uh = rfftn(u0.values) * integ.mask
    u_phys = irfftn(uh, g.n_points)
    snaps = [Snapshot(0.0, VectorField(g, u_phys, 0.0))]
    n = cfg.n_steps
    h = integ.h
    times = np.zeros(n + 1)
    wmax = np.zeros(n + 1)
    energy = np.zeros(n + 1)
    enst = np.zeros(n + 1)

    def record(i, uh_):
        # Parseval on the rfft layout
        w = np.full(g.k_squared.shape, 2.0)
        w[..., 0] = 1.0
        w[..., -1] = 1.0
        vol = g.box_length**3
        norm = vol / g.n_points**6
        e2 = np.sum(w * np.sum(np.abs(uh_) ** 2, axis=0)) * norm
        energy[i] = 0.5 * e2
        enst[i] = 0.5 * np.sum(w * g.k_squared * np.sum(np.abs(uh_) ** 2, axis=0)) * norm

    record(0, uh)
    if observer is not None:
        observer(snaps[0].u)
    wmax[0] = float(np.sqrt(np.max(np.sum(curl(snaps[0].u).values ** 2, axis=0))))
    t = 0.0
    for i in range(1, n + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            new = integ.advance(uh, t)
        wmax[i - 1] = integ.last_wmax
        t = i * h
        if not np.all(np.isfinite(new)):
            last = VectorField(g, irfftn(uh, g.n_points), (i - 1) * h)
            path = None
            if dump_dir is not None:
                from .io import write_snapshot

                Path(dump_dir).mkdir(parents=True, exist_ok=True)
                path = str(Path(dump_dir) / f"dump_t{last.time:.6f}.vscp")
                write_snapshot(path, last, viscosity=cfg.viscosity, kind="velocity")
            raise NumericalBlowup(t, last, path)
        uh = new
        times[i] = t
        record(i, uh)
        keep = i % cfg.snapshot_stride == 0 or i == n
        if keep or observer is not None:
            cur = VectorField(g, irfftn(uh, g.n_points), t)
            if keep:
                snaps.append(Snapshot(t, cur))
            if observer is not None:
                observer(cur)
    if n:
        wmax[n] = float(np.sqrt(np.max(np.sum(curl(snaps[-1].u).values ** 2, axis=0))))
    log.info("simulated %d steps to t=%.4g (%d snapshots)", n, t, len(snaps))
    return Trajectory(cfg, snaps, times, wmax, energy, enst)
