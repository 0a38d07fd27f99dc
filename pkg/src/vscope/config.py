"""Run configuration: one JSON document drives every CLI subcommand."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional

from .grid import Grid
from .solver import InitialCondition, SolverConfig

__all__ = ["ConfigError", "RunConfig", "load_config"]


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


@dataclass
class SolverSettings:
    n_points: int = 64
    box_length: float = 2 * math.pi
    viscosity: float = 1.0
    dt: float = 1e-3
    t_end: float = 0.5
    snapshot_stride: int = 1
    initial_condition: dict = field(default_factory=lambda: {"kind": "taylor_green"})
    dealias: bool = True
    cfl_limit: float = 0.5


@dataclass
class MacroSettings:
    R0: Optional[float] = None  # default box_length / 4
    center: Optional[List[float]] = None  # default box centre


@dataclass
class CoverSettings:
    scales: List[float] = field(default_factory=list)
    K1: int = 8
    K2: int = 27
    family_size: int = 4
    seed: int = 0
    strategy: str = "jittered"


@dataclass
class CutoffSettings:
    rho1: float = 0.75
    rho2: float = 0.75
    delta_exp: float = 1.0


@dataclass
class DiagnosticSettings:
    times: List[float] = field(default_factory=list)  # default [0.9 * t_end]
    horizon: Optional[float] = None  # temporal cut-off horizon T, default t_end
    theorem: bool = False
    C_report: float = 1.0
    budget_elements: Optional[List[int]] = None


@dataclass
class SparsenessSettings:
    delta: float = 0.5
    d0: float = 1.0
    c1: float = 2.0
    c3: float = 2.0
    n_directions: int = 256
    samples_per_spacing: int = 4
    scan_count: int = 64


_SECTIONS = {
    "solver": SolverSettings,
    "macro": MacroSettings,
    "covers": CoverSettings,
    "cutoffs": CutoffSettings,
    "diagnostics": DiagnosticSettings,
    "sparseness": SparsenessSettings,
}


@dataclass
class RunConfig:
    solver: SolverSettings = field(default_factory=SolverSettings)
    macro: MacroSettings = field(default_factory=MacroSettings)
    covers: CoverSettings = field(default_factory=CoverSettings)
    cutoffs: CutoffSettings = field(default_factory=CutoffSettings)
    diagnostics: DiagnosticSettings = field(default_factory=DiagnosticSettings)
    sparseness: SparsenessSettings = field(default_factory=SparsenessSettings)
    seed: int = 0

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = copy.deepcopy(d)
        unknown = set(d) - set(_SECTIONS) - {"seed"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        kw = {}
        for name, typ in _SECTIONS.items():
            sec = d.get(name, {})
            if not isinstance(sec, dict):
                raise ConfigError(f"section {name!r} must be an object")
            try:
                kw[name] = typ(**sec)
            except TypeError as e:
                raise ConfigError(f"section {name!r}: {e}") from None
        cfg = cls(**kw, seed=int(d.get("seed", 0)))
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return asdict(self)

    # derived values --------------------------------------------------------
    @property
    def grid(self) -> Grid:
        return Grid(self.solver.n_points, self.solver.box_length)

    @property
    def R0(self) -> float:
        return self.macro.R0 if self.macro.R0 is not None else self.solver.box_length / 4

    @property
    def macro_center(self) -> List[float]:
        L = self.solver.box_length
        return list(self.macro.center) if self.macro.center is not None else [L / 2] * 3

    @property
    def horizon(self) -> float:
        return self.diagnostics.horizon if self.diagnostics.horizon is not None else self.solver.t_end

    @property
    def times(self) -> List[float]:
        return list(self.diagnostics.times) or [0.9 * self.horizon]

    def solver_config(self) -> SolverConfig:
        s = self.solver
        ic = dict(s.initial_condition)
        if ic.get("kind") == "random" and "seed" not in ic:
            ic["seed"] = self.seed
        try:
            ic = InitialCondition(**ic)
        except TypeError as e:
            raise ConfigError(f"initial_condition: {e}") from None
        return SolverConfig(self.grid, s.viscosity, s.dt, s.t_end, s.snapshot_stride, ic, s.dealias, s.cfl_limit)

    def validate(self) -> None:
        s = self.solver
        try:
            g = self.grid
            self.solver_config()
        except ValueError as e:
            raise ConfigError(str(e)) from None
        if not 4 * self.R0 <= s.box_length * (1 + 1e-12):
            raise ConfigError(f"4*R0 = {4 * self.R0:g} exceeds box_length {s.box_length:g}")
        if self.R0 <= 0:
            raise ConfigError("R0 must be positive")
        for R in self.covers.scales:
            if not (8 * g.spacing * (1 - 1e-6) <= R <= self.R0 * (1 + 1e-6)):
                raise ConfigError(f"scale R={R:g} outside [8*spacing, R0] = [{8 * g.spacing:g}, {self.R0:g}]")
        if self.covers.K1 < 1 or self.covers.K2 < 1:
            raise ConfigError("K1 and K2 must be positive")
        if self.covers.family_size < 1:
            raise ConfigError("family_size must be >= 1")
        c = self.cutoffs
        for name in ("rho1", "rho2"):
            v = getattr(c, name)
            if not 0.5 < v < 1:
                raise ConfigError(f"{name} must lie in (1/2, 1)")
        if not 0 < c.delta_exp <= 1:
            raise ConfigError("delta_exp must lie in (0, 1]")
        T = self.horizon
        if not 0 < T <= s.t_end * (1 + 1e-12):
            raise ConfigError("temporal horizon must lie in (0, t_end]")
        for t in self.times:
            if not 0 < t <= T * (1 + 1e-12):
                raise ConfigError(f"diagnostic time {t:g} outside (0, T]")
        if self.diagnostics.theorem and self.R0 > math.sqrt(T) * (1 + 1e-12):
            raise ConfigError(f"theorem check needs R0 <= sqrt(T): R0={self.R0:g}, sqrt(T)={math.sqrt(T):g}")
        sp = self.sparseness
        if not 0 < sp.delta < 1:
            raise ConfigError("sparseness delta must lie in (0, 1)")
        if sp.d0 <= 0:
            raise ConfigError("d0 must be positive")
        if sp.c1 <= 1 or sp.c3 <= 1:
            raise ConfigError("c1 and c3 must exceed 1")


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            d = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    return RunConfig.from_dict(d)
