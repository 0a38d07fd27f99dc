"""Command-line entry point: ``vscope <subcommand> [flags]``.

Exit status: 0 success, 1 validation error (bad flags, config, infeasible
cover, sparse snapshots), 2 numerical failure (CFL violation, non-finite
values).
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import grid as _grid
from .config import ConfigError, RunConfig, load_config
from .covers import InfeasibleCoverError, certify, default_cert_grid, generate
from .ensemble import (
    budget_check,
    element_cutoffs,
    integrate_trajectory,
    macro_stats,
    theorem_check,
    vst_ensemble,
)
from .io import load_trajectory, read_json, save_trajectory, write_csv, write_json, write_mask
from .solver import SolverError, simulate
from .sparseness import criticality_report, h_alpha, level_set

log = logging.getLogger("vscope")

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; this tool reserves 2 for numerics."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_INVALID)


def _common(p):
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--out-dir", default="vscope_out", help="output directory (default: vscope_out)")
    p.add_argument("--threads", type=int, default=None, help="FFT threads (env VSCOPE_THREADS)")
    p.add_argument("--seed", type=int, default=None, help="seed for random initial data and covers")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="vscope", description="Scale-localized vortex-stretching diagnostics")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("simulate", help="run the solver and write snapshots")
    _common(p)
    p.add_argument("--n-points", type=int)
    p.add_argument("--viscosity", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--t-end", type=float)
    p.add_argument("--stride", type=int, help="snapshot stride in steps")
    p.add_argument("--ic", choices=["taylor_green", "taylor_green_3d", "abc", "random"])

    p = sub.add_parser("diagnose", help="macro statistics, budget, VST ensembles, theorem check")
    _common(p)
    p.add_argument("--snapshots", help="directory written by simulate (default OUT_DIR/snapshots)")
    p.add_argument("--budget", action="store_true")
    p.add_argument("--vst", action="store_true")
    p.add_argument("--macro", action="store_true")
    p.add_argument("--theorem", action="store_true")
    p.add_argument("--scales", type=float, nargs="+")
    p.add_argument("--time", type=float, help="diagnostic time (default 0.9 T)")
    p.add_argument("--C-report", dest="C_report", type=float)

    p = sub.add_parser("covers", help="generate and certify a cover, write JSON")
    _common(p)
    p.add_argument("--R", type=float, required=True)
    p.add_argument("--R0", type=float)
    p.add_argument("--K1", type=int)
    p.add_argument("--K2", type=int)
    p.add_argument("--strategy", choices=["lattice", "jittered"])
    p.add_argument("--cert-n", type=int, help="certification grid points per side")

    p = sub.add_parser("sparseness", help="h(delta), criticality report and sparseness scan")
    _common(p)
    p.add_argument("--snapshots")
    p.add_argument("--delta", type=float)
    p.add_argument("--d0", type=float)
    p.add_argument("--c1", type=float)
    p.add_argument("--time", type=float)
    p.add_argument("--directions", type=int)
    p.add_argument("--samples", type=int, help="sub-samples per grid spacing")
    p.add_argument("--scan-count", type=int)
    p.add_argument("--mask", action="store_true", help="also write the intense-region mask")

    p = sub.add_parser("report", help="merge JSON/CSV outputs into summary.json")
    _common(p)
    return ap


# ------------------------------------------------------------------ helpers


def _load(args) -> RunConfig:
    d = {}
    if args.config:
        d = load_config(args.config).to_dict()
    d.setdefault("solver", {})
    d.setdefault("covers", {})
    d.setdefault("diagnostics", {})
    d.setdefault("sparseness", {})
    d.setdefault("macro", {})
    over = {
        "solver": {
            "n_points": getattr(args, "n_points", None),
            "viscosity": getattr(args, "viscosity", None),
            "dt": getattr(args, "dt", None),
            "t_end": getattr(args, "t_end", None),
            "snapshot_stride": getattr(args, "stride", None),
        },
        "covers": {
            "scales": getattr(args, "scales", None),
            "K1": getattr(args, "K1", None),
            "K2": getattr(args, "K2", None),
            "strategy": getattr(args, "strategy", None),
        },
        "diagnostics": {"C_report": getattr(args, "C_report", None)},
        "sparseness": {
            "delta": getattr(args, "delta", None),
            "d0": getattr(args, "d0", None),
            "c1": getattr(args, "c1", None),
            "n_directions": getattr(args, "directions", None),
            "samples_per_spacing": getattr(args, "samples", None),
            "scan_count": getattr(args, "scan_count", None),
        },
        "macro": {"R0": getattr(args, "R0", None)},
    }
    for sec, vals in over.items():
        for k, v in vals.items():
            if v is not None:
                d[sec][k] = v
    if getattr(args, "ic", None):
        d["solver"]["initial_condition"] = {**d["solver"].get("initial_condition", {}), "kind": args.ic}
    if getattr(args, "theorem", False):
        d["diagnostics"]["theorem"] = True
    if args.seed is not None:
        d["seed"] = args.seed
        d["covers"]["seed"] = args.seed
    return RunConfig.from_dict(d)


def _threads(args) -> None:
    n = args.threads if args.threads is not None else int(os.environ.get("VSCOPE_THREADS", "1") or 1)
    _grid.set_workers(n)


def _provenance(cfg: RunConfig) -> dict:
    return {"config": cfg.to_dict(), "R0": cfg.R0, "macro_center": cfg.macro_center, "horizon": cfg.horizon}


def _snap_dir(args) -> Path:
    return Path(args.snapshots) if getattr(args, "snapshots", None) else Path(args.out_dir) / "snapshots"


# -------------------------------------------------------------- subcommands


def cmd_simulate(args, cfg: RunConfig) -> int:
    out = Path(args.out_dir)
    tr = simulate(cfg.solver_config(), dump_dir=str(out / "dumps"))
    save_trajectory(out / "snapshots", tr)
    rows = [
        {"step": i, "time": t, "energy": e, "enstrophy": z, "max_vorticity": w}
        for i, (t, e, z, w) in enumerate(zip(tr.step_times, tr.energy, tr.enstrophy, tr.max_vorticity))
    ]
    write_csv(out / "steps.csv", rows)
    lhs, e0 = tr.energy_inequality()
    write_json(
        out / "simulate.json",
        {**_provenance(cfg), "n_snapshots": len(tr), "final_energy": float(tr.energy[-1]), "energy_inequality": [lhs, e0]},
    )
    print(f"wrote {len(tr)} snapshots to {out / 'snapshots'}")
    return EXIT_OK


def _covers_for(cfg: RunConfig, R: float, family: int) -> list:
    c = cfg.covers
    if R >= cfg.R0 * (1 - 1e-12):
        return [generate(cfg.R0, cfg.R0, c.K1, c.K2, strategy="lattice")]
    if c.strategy == "lattice":
        return [generate(cfg.R0, R, c.K1, c.K2, strategy="lattice")]
    return [generate(cfg.R0, R, c.K1, c.K2, strategy="jittered", seed=c.seed + j) for j in range(family)]


def cmd_diagnose(args, cfg: RunConfig) -> int:
    out = Path(args.out_dir)
    tr = load_trajectory(_snap_dir(args))
    t = args.time if args.time is not None else cfg.times[0]
    T = cfg.horizon
    run_all = not (args.budget or args.vst or args.macro or args.theorem)
    I = integrate_trajectory(tr, t, T, cfg.cutoffs.rho1, R0=cfg.R0, macro_center=cfg.macro_center)
    rho2 = cfg.cutoffs.rho2
    scales = cfg.covers.scales or [cfg.R0 / 2]
    result = {**_provenance(cfg), "t": I.t}
    ms = macro_stats(I, rho2=rho2)
    if args.macro or run_all:
        result["macro"] = ms.as_dict()
    if args.budget or run_all:
        rows = []
        for R in scales:
            cover = _covers_for(cfg, R, 1)[0]
            for b in budget_check(I, cover, elements=cfg.diagnostics.budget_elements, rho2=rho2):
                rows.append(b.as_dict())
        write_csv(out / "budget.csv", rows)
        result["budget"] = {
            "max_relative_residual": max((r["relative_residual"] for r in rows), default=0.0),
            "rows": len(rows),
        }
        print(f"{'R':>8} {'elem':>5} {'vst':>12} {'final':>12} {'palin':>12} {'cutoff':>12} {'transport':>12} {'rel.res':>10}")
        for r in rows:
            print(
                f"{r['R']:8.4f} {r['index']:5d} {r['vst']:12.4e} {r['final_enstrophy']:12.4e} "
                f"{r['palinstrophy']:12.4e} {r['cutoff']:12.4e} {r['transport']:12.4e} {r['relative_residual']:10.2e}"
            )
    if args.vst or run_all:
        reps, rows = [], []
        for R in scales:
            rep = vst_ensemble(I, _covers_for(cfg, R, cfg.covers.family_size), rho2=rho2)
            reps.append(rep.as_dict())
            rows.extend(rep.rows())
        write_csv(out / "vst.csv", rows)
        result["vst"] = reps
    if args.theorem or (run_all and cfg.diagnostics.theorem):
        th = theorem_check(
            I,
            scales,
            family_size=cfg.covers.family_size,
            C_report=cfg.diagnostics.C_report,
            K1=cfg.covers.K1,
            K2=cfg.covers.K2,
            seed=cfg.covers.seed,
            rho2=rho2,
        )
        result["theorem"] = th.as_dict()
    write_json(out / "diagnose.json", result)
    print(f"wrote {out / 'diagnose.json'}")
    return EXIT_OK


def cmd_covers(args, cfg: RunConfig) -> int:
    c = cfg.covers
    g = _cert_grid(cfg, args)
    cover = generate(cfg.R0, args.R, c.K1, c.K2, strategy=c.strategy, seed=c.seed, grid=g)
    rep = certify(cover, g)
    out = Path(args.out_dir)
    write_json(out / f"cover_R{args.R:.6g}.json", {"cover": cover.to_dict(), "certificate": rep.as_dict()})
    print(f"{cover.strategy} cover: n={cover.n}, bounds={cover.count_bounds()}, certified={rep.passed}")
    return EXIT_OK if rep.passed else EXIT_INVALID


def _cert_grid(cfg: RunConfig, args):
    if getattr(args, "cert_n", None):
        return _grid.Grid(args.cert_n, cfg.solver.box_length)
    return default_cert_grid(cfg.R0, args.R, cfg.solver.box_length)


def cmd_sparseness(args, cfg: RunConfig) -> int:
    sp = cfg.sparseness
    h, amin = h_alpha(sp.delta)
    result = {**_provenance(cfg), "delta": sp.delta, "h": h, "alpha_min": amin, "d0": sp.d0}
    snap = _snap_dir(args)
    out = Path(args.out_dir)
    if (snap / "trajectory.json").exists():
        tr = load_trajectory(snap)
        rep = criticality_report(
            tr,
            args.time,
            c1=sp.c1,
            delta=sp.delta,
            d0=sp.d0,
            c3=sp.c3,
            scan_count=sp.scan_count,
            seed=cfg.seed,
            n_directions=sp.n_directions,
            samples_per_spacing=sp.samples_per_spacing,
        )
        result["criticality"] = rep.as_dict()
        if args.mask:
            i = tr.index_at(rep.t)
            write_mask(out / "intense_region.mask", level_set(tr.vorticity(i), rep.threshold).mask)
        rows = []
        for k in range(len(tr)):
            w = tr.vorticity(k).magnitude().values
            wi = float(w.max())
            vol = float(np.sum(w > wi / sp.c1) * tr.grid.cell_volume) if wi > 0 else 0.0
            rows.append({"time": tr.times[k], "omega_inf": wi, "volume": vol, "volume_times_omega_inf": vol * wi})
        write_csv(out / "criticality_trend.csv", rows)
    else:
        result["criticality"] = None
        result["note"] = f"no snapshots at {snap}; only h(delta) reported"
    write_json(out / "sparseness.json", result)
    print(f"delta={sp.delta:g} h={h:.12g} alpha_min={amin:.12g} d0={sp.d0:g}")
    return EXIT_OK


def cmd_report(args, cfg: RunConfig) -> int:
    out = Path(args.out_dir)
    if not out.is_dir():
        raise ConfigError(f"output directory {out} does not exist")
    summary = {"config": cfg.to_dict(), "json": {}, "csv": {}}
    for p in sorted(out.glob("*.json")):
        if p.name != "summary.json":
            summary["json"][p.stem] = read_json(p)
    for p in sorted(out.glob("*.csv")):
        with open(p) as fh:
            lines = fh.read().splitlines()
        summary["csv"][p.stem] = {"columns": lines[0].split(",") if lines else [], "rows": max(len(lines) - 1, 0)}
    write_json(out / "summary.json", summary)
    print(f"wrote {out / 'summary.json'}")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "diagnose": cmd_diagnose,
    "covers": cmd_covers,
    "sparseness": cmd_sparseness,
    "report": cmd_report,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        _threads(args)
        cfg = _load(args)
        return COMMANDS[args.command](args, cfg)
    except SolverError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except FloatingPointError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, InfeasibleCoverError, ValueError, FileNotFoundError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
