import math

import numpy as np
import pytest

from vscope.covers import Cover, generate
from vscope.cutoffs import CutoffPair, TemporalCutoff, make_spatial, make_temporal
from vscope.ensemble import (
    Accumulator,
    EmptyTrajectoryError,
    SnapshotStrideError,
    budget_check,
    element_cutoffs,
    ensemble_average,
    integrate_trajectory,
    local_average,
    macro_stats,
    preflight,
    theorem_check,
    vst_ensemble,
    vst_local,
)
from vscope.grid import Grid, ScalarField, VectorField
from vscope.solver import InitialCondition, Snapshot, SolverConfig, Trajectory, simulate

R0 = math.pi / 2


def frozen(u_values, T=1.0, n=40, nu=0.1):
    """A trajectory that repeats one velocity field at n+1 equally spaced times."""
    g = Grid(u_values.shape[-1])
    cfg = SolverConfig(g, nu, T / n, T)
    snaps = [Snapshot(k * T / n, VectorField(g, u_values, k * T / n)) for k in range(n + 1)]
    return Trajectory(cfg, snaps)


@pytest.fixture(scope="module")
def tg_run():
    g = Grid(32)
    cfg = SolverConfig(g, 0.1, 0.004, 0.2, initial_condition=InitialCondition("taylor_green_3d"))
    return simulate(cfg)


@pytest.fixture(scope="module")
def tg_integrals(tg_run):
    return integrate_trajectory(tg_run, 0.18, 0.2, densities=["enstrophy", "one", "stretching_direct"])


def test_constant_density_range():
    g = Grid(32)
    T, t = 1.0, 0.9
    snaps = [ScalarField(g, np.full(g.shape, 2.5), k * t / 36) for k in range(37)]
    pair = CutoffPair(make_spatial((0, 0, 0), R0 / 2, 0.75), make_temporal(T, 0.75))
    v = local_average(snaps, pair, t)
    assert 2.5 * (1 / 3) * (4 * math.pi / 3) <= v <= 2.5 * (4 * math.pi / 3) * 8


def test_direct_and_accumulated_routes_agree(tg_run, tg_integrals):
    from vscope.ensemble import Sample

    snaps = []
    for s in tg_run.snapshots:
        if s.time <= 0.18 + 1e-12:
            snaps.append(ScalarField(tg_run.grid, Sample(s.u).w2, s.time))
    cover = generate(R0, R0 / 2, strategy="lattice")
    rep = ensemble_average("enstrophy", cover, tg_integrals)
    psi = element_cutoffs(cover)[3]
    pair = CutoffPair(psi, tg_integrals.temporal)
    direct = local_average(snaps, pair, 0.18)
    assert direct == pytest.approx(rep.values[0][3], rel=1e-12)


def test_vst_matches_direct_stretching(tg_integrals):
    cover = generate(R0, R0 / 2, strategy="jittered", seed=2)
    a = vst_ensemble(tg_integrals, cover)
    b = ensemble_average("stretching_direct", cover, tg_integrals)
    np.testing.assert_allclose(a.values[0], b.values[0], rtol=1e-10, atol=1e-12 * np.abs(a.values[0]).max())


def test_frozen_shear_has_no_stretching():
    g = Grid(16)
    z = g.mesh()[2]
    u = np.zeros((3,) + g.shape)
    u[0] = np.sin(z)
    tr = frozen(u)
    cover = generate(R0, R0 / 2, strategy="lattice")
    rep = vst_ensemble(tr, cover)
    assert np.max(np.abs(rep.values[0])) < 1e-12
    pair = CutoffPair(make_spatial((0, 0, 0), R0, 0.75), make_temporal(1.0, 0.75))
    assert abs(vst_local(tr, pair)) < 1e-12


def test_zero_vorticity_everywhere():
    g = Grid(16)
    tr = frozen(np.zeros((3,) + g.shape))
    ms = macro_stats(tr)
    assert ms.E0t == 0 and ms.P0t == 0 and ms.sigma0t is None
    assert "undefined" in ms.note
    th = theorem_check(tr, [R0])
    assert not th.applicable and th.positive is None
    for b in budget_check(tr, generate(R0, 0.9 * R0)):
        assert b.vst == b.final_enstrophy == b.palinstrophy == b.cutoff == b.transport == 0
        assert b.relative_residual == 0


@pytest.mark.parametrize("k", [1, 2, 3])
def test_single_mode_kraichnan_scale(k):
    g = Grid(16)
    z = g.mesh()[2]
    u = np.zeros((3,) + g.shape)
    u[0] = np.sin(k * z)
    tr = frozen(u)
    I = integrate_trajectory(tr, temporal=TemporalCutoff(1.0, 0.75, 4, profile="one"))
    ms = macro_stats(I, localize=False, include_final=False)
    # <|w|^2/2> = k^2/4 and <|grad w|^2> = k^4/2 on one mode
    assert ms.sigma0t == pytest.approx(1 / (math.sqrt(2) * k), rel=1e-12)


def test_single_element_cover_equals_macro_average(tg_integrals):
    cover = generate(R0, R0)
    assert cover.n == 1
    rep = ensemble_average("enstrophy", cover, tg_integrals)
    assert rep.mean == pytest.approx(rep.F0, rel=1e-14)
    v = vst_ensemble(tg_integrals, cover)
    pair = CutoffPair(make_spatial((0, 0, 0), R0, 0.75), tg_integrals.temporal)
    assert v.mean == pytest.approx(vst_local(tg_integrals, pair), rel=1e-14)


def test_comparability_for_constants(tg_integrals):
    for q in (1.25, 2.0):
        covers = [generate(R0, R0 / q, strategy="jittered", seed=s) for s in range(3)]
        r = ensemble_average("one", covers, tg_integrals).ratios_to_F0
        assert np.all(r > 0.2) and np.all(r < 5)


def test_budget_identity_on_all_element_kinds(tg_integrals):
    cover = generate(R0, R0 / 2, strategy="lattice")
    rows = budget_check(tg_integrals, cover)
    # one hand-placed element of each kind (budget_check needs no certificate)
    picks = Cover(R0, R0 / 2, [[0, 0, 0], [0, 0.3 * R0, 0], [0, 0, -0.8 * R0]])
    rows += budget_check(tg_integrals, picks)
    kinds = {b.kind for b in rows}
    assert {"interior", "product", "cone"} <= kinds
    assert max(b.relative_residual for b in rows) < 2e-2


def test_static_density_source():
    g = Grid(16)
    f = ScalarField(g, np.full(g.shape, 3.0))
    cover = generate(R0, R0)
    rep = ensemble_average("three", cover, f)
    assert rep.mean == pytest.approx(rep.F0)
    assert rep.mean > 3 * 4 * math.pi / 3


def test_preflight_rejects_coarse_stride():
    g = Grid(16)
    cfg = SolverConfig(g, 0.1, 0.01, 0.3, snapshot_stride=5, initial_condition=InitialCondition("taylor_green_3d"))
    tr = simulate(cfg)
    with pytest.raises(SnapshotStrideError):
        preflight(tr, 0.27, 0.3)
    with pytest.raises(SnapshotStrideError):
        integrate_trajectory(tr, 0.27, 0.3)


def test_accumulator_sample_order_and_coverage():
    g = Grid(8)
    acc = Accumulator(g, 0.1, 0.5, make_temporal(1.0, 0.75))
    with pytest.raises(EmptyTrajectoryError):
        acc.result()
    with pytest.raises(SnapshotStrideError):
        acc.add(VectorField(g, np.zeros((3,) + g.shape), 0.1))
    acc.add(VectorField(g, np.zeros((3,) + g.shape), 0.0))
    with pytest.raises(ValueError):
        acc.add(VectorField(g, np.zeros((3,) + g.shape), 0.0))
    acc.add(VectorField(g, np.zeros((3,) + g.shape), 0.25))
    with pytest.raises(SnapshotStrideError):
        acc.result()
    with pytest.raises(SnapshotStrideError):
        acc.add(VectorField(g, np.zeros((3,) + g.shape), 0.75))


def test_cover_family_must_share_scale(tg_integrals):
    a = generate(R0, R0 / 2)
    b = generate(R0, R0 / 1.5)
    with pytest.raises(ValueError):
        ensemble_average("one", [a, b], tg_integrals)


def test_report_rows_and_dict(tg_integrals):
    cover = generate(R0, R0 / 1.5, strategy="jittered", seed=0)
    rep = ensemble_average("enstrophy", [cover, cover], tg_integrals)
    assert len(rep.rows()) == 2 * cover.n
    d = rep.as_dict()
    assert d["n_elements"] == [cover.n, cover.n]
    assert len(d["ratios_to_F0"]) == 2
