"""(K1, K2)-covers of the macro ball B(0, R0) at scale R.

A cover is a list of centres x_i (macro frame) such that the balls B(x_i, R)
cover B(0, R0), the count n satisfies (R0/R)^3 <= n <= K1 (R0/R)^3, and no
point of B(0, R0) lies in more than K2 doubled balls B(x_i, 2R).

Coverage and multiplicity are certified on grid nodes. Lattice covers use a
body-centred cubic arrangement (covering radius a*sqrt(5)/4 for cube side a),
pruned of centres that are redundant on the certification nodes.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy import fft as _fft
from scipy.spatial import cKDTree

from .cutoffs import RadialProfile, frame_points
from .grid import Grid, ScalarField

log = logging.getLogger(__name__)

__all__ = [
    "Cover",
    "CertReport",
    "InfeasibleCoverError",
    "generate",
    "certify",
    "adversarial_family",
    "macro_nodes",
    "default_cert_grid",
]

_SAFETY = 0.999  # shrink factor on lattice spacing so corner points are covered strictly
_TOL = 1e-9


class InfeasibleCoverError(ValueError):
    """Requested (K1, K2) cannot be met at this scale."""


@dataclass
class Cover:
    R0: float
    R: float
    centers: np.ndarray
    K1: int = 8
    K2: int = 27
    strategy: str = "lattice"
    seed: Optional[int] = None
    flags: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.centers = np.atleast_2d(np.asarray(self.centers, dtype=float)).reshape(-1, 3)

    @property
    def n(self) -> int:
        return len(self.centers)

    def count_bounds(self) -> tuple:
        q = (self.R0 / self.R) ** 3
        return q, self.K1 * q

    def to_dict(self) -> dict:
        return {
            "R0": self.R0,
            "R": self.R,
            "K1": self.K1,
            "K2": self.K2,
            "strategy": self.strategy,
            "seed": self.seed,
            "flags": list(self.flags),
            "centers": self.centers.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Cover":
        return cls(
            R0=float(d["R0"]),
            R=float(d["R"]),
            centers=np.asarray(d["centers"], dtype=float),
            K1=int(d["K1"]),
            K2=int(d["K2"]),
            strategy=d.get("strategy", "lattice"),
            seed=d.get("seed"),
            flags=list(d.get("flags", [])),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, s: str) -> "Cover":
        return cls.from_dict(json.loads(s))


@dataclass
class CertReport:
    n: int
    count_lower: float
    count_upper: float
    count_ok: bool
    uncovered: int
    coverage_ok: bool
    max_multiplicity: int
    multiplicity_ok: bool
    nodes_checked: int

    @property
    def passed(self) -> bool:
        return self.count_ok and self.coverage_ok and self.multiplicity_ok

    def failures(self) -> List[str]:
        out = []
        if not self.count_ok:
            out.append(
                f"count n={self.n} outside [{self.count_lower:.3f}, {self.count_upper:.3f}] (K1 bound)"
            )
        if not self.coverage_ok:
            out.append(f"{self.uncovered} nodes of B(0,R0) uncovered")
        if not self.multiplicity_ok:
            out.append(f"local multiplicity {self.max_multiplicity} exceeds K2")
        return out

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d["passed"] = self.passed
        return d


def macro_nodes(grid: Grid, R0: float, macro_center=None) -> np.ndarray:
    """Grid nodes inside the closed macro ball, macro-frame coordinates (M, 3)."""
    if macro_center is None:
        macro_center = np.full(3, grid.box_length / 2)
    X = frame_points(grid, macro_center).reshape(3, -1).T
    return X[np.sum(X * X, axis=1) <= R0 * R0 * (1 + _TOL)]


def default_cert_grid(R0: float, R: float, box_length: Optional[float] = None) -> Grid:
    """Smallest even grid with spacing <= R/8 on a box holding B(0, 2R0)."""
    L = box_length if box_length is not None else 4 * R0
    n = int(np.ceil(8 * L / R))
    n += n % 2
    return Grid(max(n, 8), L)


def _membership(centers: np.ndarray, nodes: np.ndarray, radius: float, closed: bool):
    tree = cKDTree(nodes)
    r = radius * (1 + _TOL) if closed else radius * (1 - _TOL)
    return [np.asarray(m, dtype=np.int64) for m in tree.query_ball_point(centers, r)]


def _counts(members, size: int) -> np.ndarray:
    cnt = np.zeros(size, dtype=np.int64)
    for m in members:
        cnt[m] += 1
    return cnt


def certify(cover: Cover, grid: Grid, macro_center=None) -> CertReport:
    """Exhaustive node-membership check of coverage, count and multiplicity."""
    nodes = macro_nodes(grid, cover.R0, macro_center)
    lo, hi = cover.count_bounds()
    cov = _counts(_membership(cover.centers, nodes, cover.R, closed=True), len(nodes))
    mul = _counts(_membership(cover.centers, nodes, 2 * cover.R, closed=False), len(nodes))
    uncovered = int(np.sum(cov == 0))
    maxm = int(mul.max(initial=0))
    return CertReport(
        n=cover.n,
        count_lower=lo,
        count_upper=hi,
        count_ok=bool(lo * (1 - _TOL) <= cover.n <= hi * (1 + _TOL)),
        uncovered=uncovered,
        coverage_ok=uncovered == 0,
        max_multiplicity=maxm,
        multiplicity_ok=maxm <= cover.K2,
        nodes_checked=len(nodes),
    )


# ---------------------------------------------------------------- construction


def _bcc(R0: float, R: float, a: float, shift=np.zeros(3)) -> np.ndarray:
    m = int(np.ceil((R0 + R) / a)) + 2
    i = np.arange(-m, m + 1)
    c = np.array(np.meshgrid(i, i, i, indexing="ij")).reshape(3, -1).T * a
    c = np.vstack([c, c + a / 2]) + shift
    return c[np.linalg.norm(c, axis=1) < R0 + R]


def _prune(centers: np.ndarray, nodes: np.ndarray, R: float, K2: int, margin: float = 0.98):
    """Drop centres that are redundant on ``nodes``, then thin out excess multiplicity.

    A centre is redundant when every node of its (slightly shrunk) ball is
    covered by another centre. Outermost centres are tried first.
    """
    if len(centers) <= 1:
        return centers
    cov_m = _membership(centers, nodes, margin * R, closed=True)
    cov = _counts(cov_m, len(nodes))
    order = np.argsort(-np.linalg.norm(centers, axis=1), kind="stable")
    keep = np.ones(len(centers), dtype=bool)
    for i in order:
        m = cov_m[i]
        if len(m) == 0 or cov[m].min() >= 2:
            keep[i] = False
            cov[m] -= 1
    # multiplicity repair
    mul_m = _membership(centers, nodes, 2 * R, closed=False)
    mul = np.zeros(len(nodes), dtype=np.int64)
    for i in np.flatnonzero(keep):
        mul[mul_m[i]] += 1
    for _ in range(len(centers)):
        worst = int(np.argmax(mul))
        if mul[worst] <= K2:
            break
        cands = [i for i in np.flatnonzero(keep) if worst in set(mul_m[i].tolist())]
        removed = False
        for i in sorted(cands, key=lambda j: -np.linalg.norm(centers[j])):
            m = cov_m[i]
            if len(m) == 0 or cov[m].min() >= 2:
                keep[i] = False
                cov[m] -= 1
                mul[mul_m[i]] -= 1
                removed = True
                break
        if not removed:
            break
    return centers[keep]


def _octant(R0: float, R: float) -> np.ndarray:
    if R < np.sqrt(3) / 2 * R0 * (1 - 1e-12):
        raise InfeasibleCoverError(f"octant cover needs R >= sqrt(3)/2 R0 = {np.sqrt(3) / 2 * R0:g}")
    s = R0 / 2
    return np.array([[sx, sy, sz] for sx in (-s, s) for sy in (-s, s) for sz in (-s, s)])


def generate(
    R0: float,
    R: float,
    K1: int = 8,
    K2: int = 27,
    strategy: str = "lattice",
    seed: Optional[int] = None,
    grid: Optional[Grid] = None,
    macro_center=None,
    jitter: float = 0.125,
    attempts: int = 20,
) -> Cover:
    """Build a certified (K1, K2)-cover of B(0, R0) at scale R.

    strategy:
      ``lattice``   BCC lattice through the origin (a single centre when R >= R0)
      ``jittered``  randomly shifted BCC lattice, each centre displaced by at
                    most ``jitter`` * pitch, seeded by ``seed``
      ``octant``    the eight centres (+-R0/2)^3, valid for R >= sqrt(3)/2 R0

    Certification runs on ``grid`` (default: a spacing-R/8 grid). Raises
    InfeasibleCoverError naming the violated bound.
    """
    if not (0 < R <= R0 * (1 + 1e-12)):
        raise ValueError(f"need 0 < R <= R0, got R={R}, R0={R0}")
    if not 0 <= jitter <= 0.25:
        raise ValueError("jitter must be at most a quarter of the lattice pitch")
    if grid is None:
        grid = default_cert_grid(R0, R)
        macro_center = None
    if grid.spacing * 8 > R * (1 + 1e-9):
        log.warning("certification grid spacing %.4g exceeds R/8 = %.4g", grid.spacing, R / 8)
    nodes = macro_nodes(grid, R0, macro_center)

    def finish(centers, strat, s, flags=()):
        cover = Cover(R0, R, centers, K1, K2, strat, s, list(flags))
        return cover, certify(cover, grid, macro_center)

    if strategy == "octant":
        cover, rep = finish(_octant(R0, R), "octant", None)
    elif strategy == "lattice":
        # fewest centres first: whole ball, octants, pruned BCC
        if R >= R0 * (1 - 1e-12):
            options = [np.zeros((1, 3))]
        else:
            options = []
            if R >= np.sqrt(3) / 2 * R0:
                options.append(_octant(R0, R))
            options.append(_prune(_bcc(R0, R, 4 * R / np.sqrt(5) * _SAFETY), nodes, R, K2))
        for centers in options:
            cover, rep = finish(centers, "lattice", None)
            if rep.passed:
                break
    elif strategy == "jittered":
        rng = np.random.default_rng(seed)
        rep = None
        for _ in range(attempts):
            a = 4 * R / (np.sqrt(5) + 4 * jitter) * _SAFETY
            c = _bcc(R0, R, a, shift=rng.uniform(0, a, 3))
            v = rng.normal(size=c.shape)
            v /= np.linalg.norm(v, axis=1)[:, None]
            c = c + v * (jitter * a) * rng.uniform(0, 1, (len(c), 1)) ** (1 / 3)
            c = c[np.linalg.norm(c, axis=1) < R0 + R]
            centers = _prune(c, nodes, R, K2)
            cover, rep = finish(centers, "jittered", seed)
            if rep.passed:
                break
    else:
        raise ValueError(f"unknown strategy {strategy!r}")

    if not rep.passed:
        raise InfeasibleCoverError(
            f"{strategy} cover at R={R:g}, R0={R0:g} with (K1,K2)=({K1},{K2}): " + "; ".join(rep.failures())
        )
    return cover


# ---------------------------------------------------------------- adversarial


def _local_average_map(density: ScalarField, R: float) -> np.ndarray:
    """(1/R^3) * integral of f against chi(|x - y|/R), at every node."""
    g = density.grid
    X = frame_points(g, np.zeros(3))
    r = np.sqrt(np.sum(X * X, axis=0))
    kern = RadialProfile(4).value(r / R)
    conv = _fft.irfftn(
        _fft.rfftn(density.values) * _fft.rfftn(kern), s=g.shape
    )
    return conv * g.cell_volume / R**3


def _biased_cover(
    density: ScalarField,
    R0: float,
    R: float,
    K1: int,
    K2: int,
    sign: float,
    macro_center,
    score_map: np.ndarray,
):
    """Greedy selection of favourably signed centres, repaired from a lattice.

    The repair draws only on the centres of a certified lattice cover, so
    reserving that cover's multiplicity and count for it keeps the result
    within (K1, K2) whenever the lattice cover itself is.
    """
    g = density.grid
    nodes = macro_nodes(g, R0, macro_center)
    base = generate(R0, R, K1, K2, "lattice", grid=g, macro_center=macro_center).centers
    stride = max(1, int(round(0.75 * R / g.spacing)))
    idx = [np.arange(0, g.n_points, stride)] * 3
    cand = frame_points(g, macro_center, idx).reshape(3, -1).T
    scores = score_map[np.ix_(*idx)].reshape(-1)
    inside = np.linalg.norm(cand, axis=1) < R0 + R
    cand, scores = cand[inside], sign * scores[inside]
    cov_m = _membership(cand, nodes, R, closed=True)
    mul_m = _membership(cand, nodes, 2 * R, closed=False)
    base_cov = _membership(base, nodes, R, closed=True)
    base_mul = _membership(base, nodes, 2 * R, closed=False)
    base_scores = sign * _sample_map(score_map, g, base, macro_center)
    cap = K2 - int(_counts(base_mul, len(nodes)).max(initial=0))
    nmax = int(np.floor(K1 * (R0 / R) ** 3)) - len(base)
    cov = np.zeros(len(nodes), dtype=np.int64)
    mul = np.zeros(len(nodes), dtype=np.int64)
    chosen: List[np.ndarray] = []
    for i in np.argsort(-scores, kind="stable"):
        if scores[i] <= 0 or len(chosen) >= nmax:
            break
        if len(cov_m[i]) and mul[mul_m[i]].max(initial=0) < cap:
            chosen.append(cand[i])
            cov[cov_m[i]] += 1
            mul[mul_m[i]] += 1
    # repair: each uncovered node takes its best-scoring lattice centre
    owners: List[List[int]] = [[] for _ in range(len(nodes))]
    for k, m in enumerate(base_cov):
        for node in m:
            owners[node].append(k)
    used = np.zeros(len(base), dtype=bool)
    for node in np.flatnonzero(cov == 0):
        if cov[node] > 0:
            continue
        if not owners[node]:
            return None
        k = max(owners[node], key=lambda j: base_scores[j])
        used[k] = True
        cov[base_cov[k]] += 1
    out = np.array(chosen).reshape(-1, 3)
    return np.vstack([out, base[used]])


def _sample_map(values: np.ndarray, grid: Grid, centers: np.ndarray, macro_center) -> np.ndarray:
    """Nearest-node values of a grid map at macro-frame centres."""
    c = np.asarray(macro_center, float)
    i = np.rint((centers + c) / grid.spacing).astype(int) % grid.n_points
    return values[i[:, 0], i[:, 1], i[:, 2]]


def adversarial_family(
    density: ScalarField,
    R: float,
    K1: int = 8,
    K2: int = 27,
    count: int = 4,
    seed: int = 0,
    R0: Optional[float] = None,
    macro_center=None,
) -> List[Cover]:
    """Covers biased toward the positive and negative mass of ``density``.

    The family is [positive-biased, negative-biased, jittered...] truncated to
    ``count`` members. Biased members are built greedily from the highest
    (lowest) local averages and then repaired to full coverage; if repair
    fails the member falls back to the lattice cover and carries the flag
    ``"fallback"``. Every member is certified on the density's grid.
    """
    g = density.grid
    if R0 is None:
        R0 = g.box_length / 4
    if macro_center is None:
        macro_center = np.full(3, g.box_length / 2)
    score_map = _local_average_map(density, R)
    out: List[Cover] = []
    for k in range(count):
        if k < 2:
            sign = 1.0 if k == 0 else -1.0
            centers = _biased_cover(density, R0, R, K1, K2, sign, macro_center, score_map)
            kind = "positive" if sign > 0 else "negative"
            cover = None
            if centers is not None:
                cover = Cover(R0, R, centers, K1, K2, f"biased-{kind}", seed, [])
                if not certify(cover, g, macro_center).passed:
                    cover = None
            if cover is None:
                log.warning("%s-biased cover repair failed at R=%g; using lattice", kind, R)
                cover = generate(R0, R, K1, K2, "lattice", grid=g, macro_center=macro_center)
                cover.flags.append("fallback")
                cover.strategy = f"biased-{kind}"
            out.append(cover)
        else:
            out.append(
                generate(R0, R, K1, K2, "jittered", seed=seed + k, grid=g, macro_center=macro_center)
            )
    return out
