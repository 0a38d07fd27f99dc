import json
import math
import struct

import numpy as np
import pytest

from vscope.cli import main
from vscope.config import ConfigError, RunConfig, load_config
from vscope.grid import Grid, ScalarField, VectorField
from vscope.io import (
    HEADER_SIZE,
    SnapshotFormatError,
    TruncatedSnapshotError,
    UnsupportedVersionError,
    load_trajectory,
    read_header,
    read_json,
    read_snapshot,
    save_trajectory,
    to_jsonable,
    write_csv,
    write_snapshot,
)
from vscope.solver import InitialCondition, SolverConfig, simulate


def _vector(n=8, t=0.25):
    g = Grid(n)
    rng = np.random.default_rng(0)
    return VectorField(g, rng.standard_normal((3, n, n, n)), t)


def test_snapshot_round_trip(tmp_path):
    u = _vector()
    p = tmp_path / "u.vscp"
    write_snapshot(p, u, viscosity=0.3, kind="velocity")
    v, h = read_snapshot(p)
    np.testing.assert_array_equal(v.values, u.values)
    assert (h.n_points, h.time, h.viscosity, h.kind) == (8, 0.25, 0.3, "velocity")
    assert p.stat().st_size == HEADER_SIZE + 3 * 8**3 * 8
    assert read_header(p) == h


def test_snapshot_layout_is_x_fastest(tmp_path):
    g = Grid(8)
    vals = np.zeros(g.shape)
    vals[1, 0, 0] = 7.0  # ix = 1
    p = tmp_path / "s.vscp"
    write_snapshot(p, ScalarField(g, vals))
    raw = p.read_bytes()[HEADER_SIZE:]
    assert struct.unpack_from("<d", raw, 8)[0] == 7.0


def test_snapshot_errors(tmp_path):
    u = _vector()
    p = tmp_path / "u.vscp"
    write_snapshot(p, u)
    raw = bytearray(p.read_bytes())
    bad = tmp_path / "bad.vscp"
    bad.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(SnapshotFormatError, match="magic"):
        read_snapshot(bad)
    v2 = bytearray(raw)
    v2[4:8] = struct.pack("<I", 2)
    bad.write_bytes(bytes(v2))
    with pytest.raises(UnsupportedVersionError):
        read_snapshot(bad)
    bad.write_bytes(bytes(raw[:-8]))
    with pytest.raises(TruncatedSnapshotError):
        read_snapshot(bad)
    bad.write_bytes(bytes(raw[:20]))
    with pytest.raises(TruncatedSnapshotError):
        read_snapshot(bad)
    with pytest.raises(ValueError):
        write_snapshot(p, u, kind="scalar")


def test_trajectory_round_trip(tmp_path):
    cfg = SolverConfig(Grid(8), 0.2, 0.05, 0.2, snapshot_stride=2, initial_condition=InitialCondition("taylor_green_3d"))
    tr = simulate(cfg)
    save_trajectory(tmp_path, tr)
    back = load_trajectory(tmp_path)
    np.testing.assert_array_equal(back.times, tr.times)
    np.testing.assert_array_equal(back.velocity(-1).values, tr.velocity(-1).values)
    np.testing.assert_array_equal(back.energy, tr.energy)


def test_csv_is_deterministic(tmp_path):
    rows = [{"a": 0.1 + 0.2, "b": "x"}, {"a": 1e-300, "c": [1.0, 2.5]}]
    write_csv(tmp_path / "1.csv", rows)
    write_csv(tmp_path / "2.csv", rows)
    text = (tmp_path / "1.csv").read_text()
    assert text == (tmp_path / "2.csv").read_text()
    assert text.splitlines()[0] == "a,b,c"
    assert float(text.splitlines()[1].split(",")[0]) == 0.1 + 0.2


def test_jsonable_handles_numpy_and_nonfinite():
    d = to_jsonable({"x": np.float64(1.5), "y": np.array([1, 2]), "z": math.inf, "w": np.bool_(True)})
    assert d == {"x": 1.5, "y": [1, 2], "z": "inf", "w": True}
    json.dumps(d)


# ------------------------------------------------------------------- config


def test_config_defaults_and_validation(tmp_path):
    cfg = RunConfig.from_dict({})
    assert cfg.R0 == pytest.approx(math.pi / 2)
    assert cfg.times == [pytest.approx(0.45)]
    for bad in (
        {"unknown": {}},
        {"solver": {"n_points": 7}},
        {"solver": {"bogus": 1}},
        {"macro": {"R0": 2.0}},
        {"covers": {"scales": [0.1]}},
        {"cutoffs": {"rho1": 0.5}},
        {"diagnostics": {"times": [2.0]}},
        {"diagnostics": {"theorem": True}, "solver": {"t_end": 1.0}, "macro": {"R0": 1.5}},
        {"sparseness": {"delta": 1.0}},
    ):
        with pytest.raises(ConfigError):
            RunConfig.from_dict(bad)
    p = tmp_path / "c.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(p)


# ---------------------------------------------------------------------- CLI


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("run")
    cfg = {
        "solver": {
            "n_points": 32,
            "viscosity": 0.1,
            "dt": 0.01,
            "t_end": 0.3,
            "initial_condition": {"kind": "taylor_green_3d"},
        },
        "covers": {"scales": [math.pi / 2], "strategy": "lattice"},
        "diagnostics": {"times": [0.27]},
        "sparseness": {"scan_count": 4, "n_directions": 32},
    }
    (d / "config.json").write_text(json.dumps(cfg))
    assert main(["simulate", "--config", str(d / "config.json"), "--out-dir", str(d)]) == 0
    return d


def test_cli_simulate_outputs(run_dir):
    assert (run_dir / "snapshots" / "trajectory.json").exists()
    assert (run_dir / "steps.csv").read_text().startswith("step,time,energy")
    info = read_json(run_dir / "simulate.json")
    assert info["n_snapshots"] == 31


def test_cli_diagnose_and_report(run_dir, capsys):
    assert main(["diagnose", "--config", str(run_dir / "config.json"), "--out-dir", str(run_dir)]) == 0
    out = capsys.readouterr().out
    assert "rel.res" in out
    d = read_json(run_dir / "diagnose.json")
    assert d["budget"]["max_relative_residual"] < 2e-2
    assert d["macro"]["P0t"] > 0
    assert main(["sparseness", "--config", str(run_dir / "config.json"), "--out-dir", str(run_dir), "--time", "0.1", "--mask"]) == 0
    s = read_json(run_dir / "sparseness.json")
    assert s["h"] == pytest.approx(2 / math.pi * math.asin(0.6))
    assert (run_dir / "intense_region.mask").stat().st_size == 32**3
    assert main(["report", "--config", str(run_dir / "config.json"), "--out-dir", str(run_dir)]) == 0
    summary = read_json(run_dir / "summary.json")
    assert {"diagnose", "sparseness", "simulate"} <= set(summary["json"])


def test_cli_covers(tmp_path):
    assert main(["covers", "--R", "0.9", "--out-dir", str(tmp_path)]) == 0
    d = read_json(tmp_path / "cover_R0.9.json")
    assert d["certificate"]["passed"]
    assert main(["covers", "--R", "0.9", "--K2", "1", "--out-dir", str(tmp_path)]) == 1


def test_cli_exit_codes(tmp_path):
    assert main(["simulate", "--bogus"]) == 1
    assert main([]) == 1
    assert main(["diagnose", "--out-dir", str(tmp_path / "missing")]) == 1
    assert main(["simulate", "--n-points", "7", "--out-dir", str(tmp_path)]) == 1
    # a time step far beyond the CFL limit is a numerical failure
    code = main(
        ["simulate", "--n-points", "16", "--dt", "2.0", "--t-end", "4.0", "--ic", "taylor_green_3d",
         "--viscosity", "0.01", "--out-dir", str(tmp_path)]
    )
    assert code == 2
