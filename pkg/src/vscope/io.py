"""Snapshot files and report serialisation.

Snapshot layout (little-endian):

    offset  size  content
    0       4     magic b"VSCP"
    4       4     uint32 format version
    8       4     uint32 n_points
    12      4     uint32 field kind (0 scalar, 1 velocity, 2 vorticity, 3 vector)
    16      8     float64 box_length
    24      8     float64 time
    32      8     float64 viscosity
    40      24    zero padding
    64      ...   float64 payload, component-major, x fastest within a component
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
import struct
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .grid import Grid, ScalarField, VectorField

__all__ = [
    "MAGIC",
    "VERSION",
    "HEADER_SIZE",
    "SnapshotFormatError",
    "UnsupportedVersionError",
    "TruncatedSnapshotError",
    "SnapshotHeader",
    "write_snapshot",
    "read_snapshot",
    "read_header",
    "to_jsonable",
    "write_json",
    "read_json",
    "write_csv",
    "write_mask",
    "save_trajectory",
    "load_trajectory",
]

MAGIC = b"VSCP"
VERSION = 1
HEADER_SIZE = 64
_HEAD = struct.Struct("<4sIIIddd")
KINDS = {"scalar": 0, "velocity": 1, "vorticity": 2, "vector": 3}
_KIND_NAMES = {v: k for k, v in KINDS.items()}


class SnapshotFormatError(ValueError):
    pass


class UnsupportedVersionError(SnapshotFormatError):
    pass


class TruncatedSnapshotError(SnapshotFormatError):
    pass


@dataclasses.dataclass(frozen=True)
class SnapshotHeader:
    n_points: int
    box_length: float
    time: float
    viscosity: float
    kind: str
    version: int = VERSION

    @property
    def components(self) -> int:
        return 1 if self.kind == "scalar" else 3

    @property
    def payload_bytes(self) -> int:
        return self.components * self.n_points**3 * 8


def _pack(h: SnapshotHeader) -> bytes:
    raw = _HEAD.pack(MAGIC, h.version, h.n_points, KINDS[h.kind], h.box_length, h.time, h.viscosity)
    return raw + b"\0" * (HEADER_SIZE - len(raw))


def _unpack(raw: bytes) -> SnapshotHeader:
    if len(raw) < HEADER_SIZE:
        raise TruncatedSnapshotError(f"header is {len(raw)} bytes, expected {HEADER_SIZE}")
    magic, version, n, kind, L, t, nu = _HEAD.unpack_from(raw)
    if magic != MAGIC:
        raise SnapshotFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported snapshot version {version} (this reader handles {VERSION})")
    if kind not in _KIND_NAMES:
        raise SnapshotFormatError(f"unknown field kind code {kind}")
    return SnapshotHeader(n, L, t, nu, _KIND_NAMES[kind], version)


def write_snapshot(path, f: Union[ScalarField, VectorField], viscosity: float = 0.0, kind: Optional[str] = None) -> None:
    """Write a field; ``kind`` defaults to 'scalar' or 'vector' by type."""
    if kind is None:
        kind = "scalar" if isinstance(f, ScalarField) else "vector"
    if kind not in KINDS:
        raise ValueError(f"unknown field kind {kind!r}")
    scalar = isinstance(f, ScalarField)
    if scalar != (kind == "scalar"):
        raise ValueError(f"field type does not match kind {kind!r}")
    g = f.grid
    h = SnapshotHeader(g.n_points, g.box_length, float(f.time), float(viscosity), kind)
    vals = f.values[None] if scalar else f.values
    # [c, ix, iy, iz] -> x fastest: transpose spatial axes, C-order bytes
    payload = np.ascontiguousarray(vals.transpose(0, 3, 2, 1), dtype="<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(_pack(h))
        fh.write(payload)


def read_header(path) -> SnapshotHeader:
    with open(path, "rb") as fh:
        return _unpack(fh.read(HEADER_SIZE))


def read_snapshot(path) -> Tuple[Union[ScalarField, VectorField], SnapshotHeader]:
    with open(path, "rb") as fh:
        h = _unpack(fh.read(HEADER_SIZE))
        data = fh.read()
    if len(data) < h.payload_bytes:
        raise TruncatedSnapshotError(f"payload is {len(data)} bytes, expected {h.payload_bytes}")
    if len(data) > h.payload_bytes:
        raise SnapshotFormatError(f"payload has {len(data) - h.payload_bytes} trailing bytes")
    n = h.n_points
    arr = np.frombuffer(data, dtype="<f8").reshape(h.components, n, n, n).transpose(0, 3, 2, 1)
    arr = arr.astype(np.float64, copy=True)
    g = Grid(n, h.box_length)
    f = ScalarField(g, arr[0], h.time) if h.kind == "scalar" else VectorField(g, arr, h.time)
    return f, h


# ------------------------------------------------------------------- reports


def to_jsonable(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        if hasattr(obj, "as_dict"):
            return to_jsonable(obj.as_dict())
        return to_jsonable(dataclasses.asdict(obj))
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def write_json(path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(to_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def write_csv(path, rows: Sequence[dict], columns: Optional[Sequence[str]] = None) -> None:
    """Rows of flat dicts; floats written with repr for exact round trips."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    rows = list(rows)
    if columns is None:
        columns = []
        for r in rows:
            for k in r:
                if k not in columns:
                    columns.append(k)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(r.get(c, "")) for c in columns])


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (list, tuple, np.ndarray)):
        return " ".join(str(_cell(x)) for x in v)
    return v


def write_mask(path, mask: np.ndarray) -> None:
    """Raw uint8 level-set mask, x fastest, no header."""
    with open(path, "wb") as fh:
        fh.write(np.ascontiguousarray(mask.astype(np.uint8).transpose(2, 1, 0)).tobytes())


# ---------------------------------------------------------------- trajectory


def save_trajectory(directory, trajectory) -> List[str]:
    """Write every snapshot plus trajectory.json (config and step records)."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for k, s in enumerate(trajectory.snapshots):
        p = d / f"u_{k:06d}.vscp"
        write_snapshot(p, s.u, viscosity=trajectory.viscosity, kind="velocity")
        paths.append(p.name)
    write_json(
        d / "trajectory.json",
        {
            "config": trajectory.config.to_dict(),
            "snapshots": paths,
            "times": trajectory.times,
            "steps": {
                "time": trajectory.step_times,
                "max_vorticity": trajectory.max_vorticity,
                "energy": trajectory.energy,
                "enstrophy": trajectory.enstrophy,
            },
        },
    )
    return paths


def load_trajectory(directory):
    """Rebuild a Trajectory from save_trajectory output."""
    from .solver import InitialCondition, Snapshot, SolverConfig, Trajectory

    d = Path(directory)
    meta = read_json(d / "trajectory.json")
    c = meta["config"]
    g = Grid(int(c["n_points"]), float(c["box_length"]))
    cfg = SolverConfig(
        grid=g,
        viscosity=float(c["viscosity"]),
        dt=float(c["dt"]),
        t_end=float(c["t_end"]),
        snapshot_stride=int(c["snapshot_stride"]),
        initial_condition=InitialCondition(**c["initial_condition"]),
        dealias=bool(c["dealias"]),
        cfl_limit=float(c["cfl_limit"]),
    )
    snaps = []
    for name in meta["snapshots"]:
        f, h = read_snapshot(d / name)
        if f.grid != g:
            raise SnapshotFormatError(f"{name}: grid differs from trajectory.json")
        snaps.append(Snapshot(h.time, f))
    st = meta["steps"]
    return Trajectory(
        cfg,
        snaps,
        np.asarray(st["time"], float),
        np.asarray(st["max_vorticity"], float),
        np.asarray(st["energy"], float),
        np.asarray(st["enstrophy"], float),
    )
