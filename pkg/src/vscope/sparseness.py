"""Geometry of vorticity super-level sets.

Linear sparseness asks whether some line segment of half-length r through
x0 meets the set in at most a fraction delta of its length. Occupancy along
a segment is measured by sampling the trilinearly interpolated scalar field
that defines the set and integrating the positive part of the
piecewise-linear interpolant of (field - threshold) exactly, so a boundary
crossing between two sub-samples is located by linear interpolation rather
than rounded to a sample. A level set without a defining field falls back
to the interpolated indicator thresholded at 1/2.

The infimum over the continuum of directions is approximated by a
Fibonacci sampling of the hemisphere followed by a local pattern search
around the best sampled direction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .grid import Grid, ScalarField, VectorField

__all__ = [
    "LevelSet",
    "SparsenessResult",
    "ScanReport",
    "CriticalityReport",
    "level_set",
    "level_set_from_field",
    "h_alpha",
    "fibonacci_directions",
    "segment_occupancy",
    "linear_sparseness",
    "sparseness_scan",
    "tchebyshev_check",
    "criticality_report",
]

INFIMUM_NOTE = (
    "minimum over sampled directions (Fibonacci hemisphere plus local refinement) "
    "approximates the infimum over all unit vectors"
)


@dataclass(frozen=True, eq=False)
class LevelSet:
    """Super-level set {F > M} on the grid nodes.

    ``field`` (optional) is the scalar F itself, used for sub-grid occupancy.
    """

    grid: Grid
    mask: np.ndarray
    threshold: float
    time: float = 0.0
    field: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.mask.shape != self.grid.shape or self.mask.dtype != bool:
            raise ValueError("mask must be a boolean array of the grid shape")

    @property
    def volume(self) -> float:
        return int(self.mask.sum()) * self.grid.cell_volume

    @property
    def empty(self) -> bool:
        return not self.mask.any()

    def to_bytes(self) -> bytes:
        """Raw uint8 mask, x-fastest (Fortran) order, for external viewers."""
        return np.asfortranarray(self.mask.astype(np.uint8)).tobytes(order="F")


def level_set(omega: VectorField, M: float) -> LevelSet:
    """Omega_t(M) = {|w| > M} at the grid nodes."""
    if M < 0:
        raise ValueError("threshold M must be non-negative")
    mag = omega.magnitude().values
    return LevelSet(omega.grid, mag > M, float(M), omega.time, mag)


def level_set_from_field(f: ScalarField, M: float) -> LevelSet:
    """{F > M} for an arbitrary scalar field (analytic test sets, etc.)."""
    return LevelSet(f.grid, f.values > M, float(M), f.time, np.asarray(f.values))


def h_alpha(delta: float) -> Tuple[float, float]:
    """h(delta) = (2/pi) arcsin((1 - delta^2)/(1 + delta^2)) and alpha_min = (1 - h)/h."""
    delta = float(delta)
    if not (0.0 < delta < 1.0):
        raise ValueError(f"delta must lie strictly between 0 and 1, got {delta}")
    d2 = delta * delta
    h = 2.0 / math.pi * math.asin((1.0 - d2) / (1.0 + d2))
    return h, (1.0 - h) / h


def fibonacci_directions(n: int) -> np.ndarray:
    """``n`` near-uniform unit vectors on the upper hemisphere, shape (n, 3).

    A segment through x0 is unchanged by d -> -d, so one hemisphere suffices.
    """
    if n < 1:
        raise ValueError("need at least one direction")
    i = np.arange(n) + 0.5
    z = 1.0 - i / n  # uniform in (0, 1]: equal-area on the hemisphere
    rad = np.sqrt(np.clip(1.0 - z * z, 0.0, None))
    phi = i * math.pi * (3.0 - math.sqrt(5.0))
    return np.stack([rad * np.cos(phi), rad * np.sin(phi), z], axis=1)


@dataclass
class SparsenessResult:
    x0: Tuple[float, float, float]
    r: float
    direction: Tuple[float, float, float]
    ratio: float
    delta: Optional[float] = None
    n_directions: int = 0
    samples_per_spacing: int = 4
    method: str = "field"
    convergence_delta: Optional[float] = None
    note: str = INFIMUM_NOTE

    @property
    def sparse(self) -> Optional[bool]:
        return None if self.delta is None else bool(self.ratio <= self.delta)

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d["sparse"] = self.sparse
        return d


def _values_along(S: LevelSet, pts: np.ndarray) -> Tuple[np.ndarray, float]:
    """Interpolated (field or indicator) values at points (3, ...) and the level."""
    g = S.grid
    coords = np.mod(pts, g.box_length) / g.spacing
    if S.field is not None:
        src, level = S.field, S.threshold
    else:
        src, level = S.mask.astype(float), 0.5
    v = ndimage.map_coordinates(src, coords.reshape(3, -1), order=1, mode="grid-wrap", prefilter=False)
    return v.reshape(pts.shape[1:]), level


def _positive_measure(g: np.ndarray, ds: float) -> np.ndarray:
    """Exact measure of {p > 0} for the piecewise-linear p through samples g
    (last axis), sample spacing ds."""
    a, b = g[..., :-1], g[..., 1:]
    both = (a > 0) & (b > 0)
    cross = (a > 0) != (b > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = np.where(cross, np.where(a > 0, a, b) / np.abs(a - b), 0.0)
    return ds * (both.sum(axis=-1) + frac.sum(axis=-1))


def segment_occupancy(
    S: LevelSet, x0, r: float, directions: np.ndarray, samples_per_spacing: int = 4
) -> np.ndarray:
    """|S n (x0 - r d, x0 + r d)| / (2r) for each row of ``directions``."""
    g = S.grid
    D = np.atleast_2d(np.asarray(directions, float))
    D = D / np.linalg.norm(D, axis=1, keepdims=True)
    if S.empty:
        return np.zeros(len(D))
    m = max(2, int(math.ceil(2 * r / g.spacing * samples_per_spacing)))
    s = np.linspace(-r, r, m + 1)
    x0 = np.asarray(x0, float)
    pts = x0[:, None, None] + D.T[:, :, None] * s[None, None, :]
    v, level = _values_along(S, pts)
    occ = _positive_measure(v - level, s[1] - s[0]) / (2 * r)
    return np.clip(occ, 0.0, 1.0)


def _sphere_step(d: np.ndarray, step: float) -> np.ndarray:
    """Six neighbours of d at angular distance ``step`` in a tangent frame."""
    a = np.array([1.0, 0.0, 0.0]) if abs(d[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = np.cross(d, a)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(d, e1)
    angs = np.arange(6) * math.pi / 3
    t = np.cos(angs)[:, None] * e1 + np.sin(angs)[:, None] * e2
    out = math.cos(step) * d + math.sin(step) * t
    return out / np.linalg.norm(out, axis=1, keepdims=True)


def linear_sparseness(
    S: LevelSet,
    x0,
    r: float,
    delta: Optional[float] = None,
    n_directions: int = 256,
    samples_per_spacing: int = 4,
    refine: bool = True,
    check_convergence: bool = False,
) -> SparsenessResult:
    """Best (smallest) occupancy ratio over sampled directions at x0, scale r."""
    g = S.grid
    if not r > 0:
        raise ValueError("scale r must be positive")
    if r >= g.box_length / 4:
        raise ValueError(f"scale r={r:g} must stay below box_length/4={g.box_length / 4:g}")
    x0 = tuple(float(v) for v in np.asarray(x0, float))
    method = "field" if S.field is not None else "indicator"
    D = fibonacci_directions(n_directions)
    if S.empty:
        return SparsenessResult(x0, r, tuple(D[0]), 0.0, delta, n_directions, samples_per_spacing, method)
    occ = segment_occupancy(S, x0, r, D, samples_per_spacing)
    k = int(np.argmin(occ))
    best_d, best = D[k], float(occ[k])
    if refine and best > 0:
        step = 0.5 * math.sqrt(2 * math.pi / n_directions)
        while step > 1e-3:
            cand = _sphere_step(best_d, step)
            oc = segment_occupancy(S, x0, r, cand, samples_per_spacing)
            j = int(np.argmin(oc))
            if oc[j] < best:
                best, best_d = float(oc[j]), cand[j]
            else:
                step *= 0.5
    res = SparsenessResult(x0, r, tuple(float(v) for v in best_d), best, delta, n_directions, samples_per_spacing, method)
    if check_convergence:
        fine = linear_sparseness(S, x0, r, delta, 2 * n_directions, 2 * samples_per_spacing, refine, False)
        res.convergence_delta = abs(fine.ratio - best)
    return res


@dataclass
class ScanReport:
    r: float
    delta: float
    n_points: int
    worst_point: Optional[Tuple[float, float, float]]
    worst_ratio: float
    fraction_passing: float
    all_sparse: bool
    results: List[SparsenessResult] = field(default_factory=list)
    note: str = INFIMUM_NOTE

    def as_dict(self, include_points: bool = False) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "results"}
        if include_points:
            d["results"] = [x.as_dict() for x in self.results]
        return d


def sparseness_scan(
    S: LevelSet,
    r: float,
    delta: float,
    points="sample",
    count: int = 64,
    seed: int = 0,
    n_directions: int = 256,
    samples_per_spacing: int = 4,
    refine: bool = True,
) -> ScanReport:
    """Linear sparseness at many points.

    ``points`` is "all" (every grid node), "sample" (``count`` seeded random
    nodes) or an explicit (k, 3) array. Points whose r-ball holds no node of
    S (nor of its one-cell neighbourhood) are sparse with ratio 0 and skip
    the direction search.
    """
    g = S.grid
    if isinstance(points, str):
        if points == "all":
            idx = np.indices(g.shape).reshape(3, -1).T
        elif points == "sample":
            rng = np.random.default_rng(seed)
            idx = rng.integers(0, g.n_points, size=(count, 3))
        else:
            raise ValueError("points must be 'all', 'sample' or an array")
        P = idx * g.spacing
    else:
        P = np.atleast_2d(np.asarray(points, float))
    near = np.ones(len(P), bool)
    if S.empty:
        near[:] = False
    else:
        nodes = np.argwhere(S.mask) * g.spacing
        tree = cKDTree(np.mod(nodes, g.box_length), boxsize=g.box_length)
        dist, _ = tree.query(np.mod(P, g.box_length) % g.box_length)
        near = dist <= r + math.sqrt(3) * g.spacing
    results = []
    ratios = np.zeros(len(P))
    for i, p in enumerate(P):
        if near[i]:
            res = linear_sparseness(S, p, r, delta, n_directions, samples_per_spacing, refine)
        else:
            res = SparsenessResult(tuple(p), r, (0.0, 0.0, 1.0), 0.0, delta, n_directions, samples_per_spacing)
        results.append(res)
        ratios[i] = res.ratio
    k = int(np.argmax(ratios)) if len(P) else 0
    passing = ratios <= delta
    return ScanReport(
        r,
        delta,
        len(P),
        tuple(float(v) for v in P[k]) if len(P) else None,
        float(ratios.max(initial=0.0)),
        float(passing.mean()) if len(P) else 1.0,
        bool(passing.all()),
        results,
    )


def tchebyshev_check(magnitude: np.ndarray, M: float, cell_volume: float) -> Tuple[float, float, bool]:
    """(Vol{f > M} * M, ||f||_L1, holds) for a non-negative nodal field f.

    The comparison count * M <= sum f is made before scaling by the cell
    volume, with a correctly rounded sum, so it holds exactly per node.
    """
    if not M > 0:
        raise ValueError("M must be positive")
    f = np.asarray(magnitude, float).ravel()
    sel = f > M
    count = int(sel.sum())
    lhs = count * M
    above = math.fsum(f[sel])
    total = math.fsum(f)
    return lhs * cell_volume, total * cell_volume, bool(lhs <= above <= total)


@dataclass
class CriticalityReport:
    t: float
    c1: float
    c3: float
    delta: float
    d0: float
    omega_inf: float
    omega_L1: float
    threshold: float
    volume: float
    tchebyshev_bound: float
    tchebyshev_holds: bool
    c2_implied: float
    cross_section_scale: float
    h: float
    alpha_min: float
    alpha: float
    M_delta: float
    scale_cap: float
    window: Tuple[float, float]
    window_snapshot_time: Optional[float]
    partial: bool
    scan: Optional[ScanReport] = None
    notes: List[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "scan"}
        d["scan"] = self.scan.as_dict() if self.scan is not None else None
        return d


def criticality_report(
    trajectory,
    t: Optional[float] = None,
    c1: float = 2.0,
    delta: float = 0.5,
    d0: float = 1.0,
    c3: float = 2.0,
    alpha: Optional[float] = None,
    scan_points="sample",
    scan_count: int = 64,
    seed: int = 0,
    n_directions: int = 256,
    samples_per_spacing: int = 4,
) -> CriticalityReport:
    """Region of intense vorticity, the Tchebyshev volume bound and the
    sparseness-theorem quantities at time t.

    The sparseness scan uses the snapshot nearest the window
    [t + 1/(4 d0^2 |w|_inf), t + 1/(d0^2 |w|_inf)] at the capped scale
    1/(2 d0^2 |w|_inf^(1/2)) (clipped below box_length/4). If the window
    extends past the trajectory the report is flagged partial.
    """
    if not c1 > 1:
        raise ValueError("c1 must exceed 1")
    if not d0 > 0:
        raise ValueError("d0 must be positive")
    times = trajectory.times
    i = len(times) - 1 if t is None else trajectory.index_at(t)
    t = float(times[i])
    g = trajectory.grid
    w = trajectory.vorticity(i)
    mag = np.sqrt(np.sum(w.values**2, axis=0))
    winf = float(mag.max())
    L1 = math.fsum(mag.ravel()) * g.cell_volume
    h, amin = h_alpha(delta)
    alpha = amin if alpha is None else float(alpha)
    notes = [f"d0 = {d0:g} is a configuration value", INFIMUM_NOTE]
    if alpha < amin:
        notes.append(f"alpha {alpha:g} below alpha_min {amin:g}")
    if winf == 0:
        return CriticalityReport(
            t, c1, c3, delta, d0, 0.0, 0.0, 0.0, 0.0, math.inf, True, 0.0, math.inf,
            h, amin, alpha, 0.0, math.inf, (math.inf, math.inf), None, False, None,
            notes + ["vorticity vanishes: empty intense region"],
        )
    M = winf / c1
    vol_lhs, l1, holds = tchebyshev_check(mag, M, g.cell_volume)
    volume = vol_lhs / M
    bound = L1 / M
    window = (t + 1.0 / (4 * d0**2 * winf), t + 1.0 / (d0**2 * winf))
    cap = 1.0 / (2 * d0**2 * math.sqrt(winf))
    partial = window[0] > times[-1] + 1e-12
    s_idx = None
    if not partial:
        inside = np.flatnonzero((times >= window[0] - 1e-12) & (times <= window[1] + 1e-12))
        s_idx = int(inside[0]) if len(inside) else trajectory.index_at(0.5 * (window[0] + window[1]))
        if window[1] > times[-1]:
            notes.append("window extends past the trajectory end")
    else:
        notes.append("window starts after the trajectory end: scan skipped (partial report)")
    M_delta = winf / d0**alpha
    scan = None
    if s_idx is not None:
        r = min(cap, 0.999 * g.box_length / 4)
        if r < cap:
            notes.append(f"scale cap {cap:.4g} clipped to {r:.4g} (box_length/4)")
        ws = trajectory.vorticity(s_idx)
        S = level_set(ws, M_delta)
        scan = sparseness_scan(
            S, r, delta, scan_points, scan_count, seed, n_directions, samples_per_spacing
        )
    return CriticalityReport(
        t, c1, c3, delta, d0, winf, L1, M, volume, bound, holds, volume * winf,
        c3 / math.sqrt(winf), h, amin, alpha, M_delta, cap, window,
        float(times[s_idx]) if s_idx is not None else None, partial, scan, notes,
    )
