import math

import numpy as np
import pytest

from vscope.grid import Grid, VectorField, curl, divergence
from vscope.solver import (
    CFLViolation,
    InitialCondition,
    NumericalBlowup,
    SolverConfig,
    initial_condition,
    kinetic_energy,
    simulate,
    step,
)


def test_taylor_green_energy_decay_small_grid():
    g = Grid(16)
    nu, T = 0.5, 0.1
    tr = simulate(SolverConfig(g, nu, 1e-2, T, snapshot_stride=5))
    e0 = tr.energy[0]
    # velocity decays like exp(-2 nu t), energy like exp(-4 nu t)
    assert tr.energy[-1] == pytest.approx(e0 * math.exp(-4 * nu * T), rel=1e-10)
    assert kinetic_energy(tr.velocity(-1)) == pytest.approx(tr.energy[-1], rel=1e-12)


def test_abc_flow_decays_exactly():
    g = Grid(16)
    nu, T = 0.1, 0.2
    cfg = SolverConfig(g, nu, 0.02, T, initial_condition=InitialCondition("abc", 1.0, 0.7, 0.4))
    tr = simulate(cfg)
    u0 = tr.velocity(0).values
    np.testing.assert_allclose(tr.velocity(-1).values, u0 * math.exp(-nu * T), atol=1e-12)


def test_snapshots_stride_and_final():
    g = Grid(16)
    tr = simulate(SolverConfig(g, 1.0, 0.01, 0.095, snapshot_stride=3))
    # dt shrinks so the last step lands on t_end
    assert tr.times[-1] == pytest.approx(0.095)
    assert np.all(np.diff(tr.times) > 0)
    assert len(tr.step_times) == tr.config.n_steps + 1


def test_random_initial_condition_properties():
    g = Grid(32)
    ic = InitialCondition("random", seed=7, peak_wavenumber=4, energy=0.3)
    u = initial_condition(ic, g)
    np.testing.assert_allclose(divergence(u).values, 0, atol=1e-10)
    assert 0.5 * np.mean(np.sum(u.values**2, axis=0)) == pytest.approx(0.3)
    v = initial_condition(ic, g)
    np.testing.assert_array_equal(u.values, v.values)
    w = initial_condition(InitialCondition("random", seed=8, peak_wavenumber=4, energy=0.3), g)
    assert not np.array_equal(u.values, w.values)
    # shell spectrum peaks at the requested wavenumber
    uh = np.fft.fftn(u.values, axes=(1, 2, 3))
    k = np.fft.fftfreq(32, 1 / 32)
    K = np.sqrt(k[:, None, None] ** 2 + k[None, :, None] ** 2 + k[None, None, :] ** 2)
    spec = np.bincount(np.rint(K).astype(int).ravel(), weights=np.sum(np.abs(uh) ** 2, axis=0).ravel())
    assert int(np.argmax(spec)) in (3, 4, 5)


def test_temporal_convergence_fourth_order():
    """3D Taylor-Green: error against a fine-step reference shrinks ~16x per halving."""
    g = Grid(16)
    nu, T = 0.05, 0.5
    ic = InitialCondition("taylor_green_3d")

    def final(dt):
        return simulate(SolverConfig(g, nu, dt, T, snapshot_stride=10**6, initial_condition=ic)).velocity(-1).values

    ref = final(T / 400)
    errs = [np.max(np.abs(final(T / n) - ref)) for n in (10, 20, 40)]
    rates = [errs[i] / errs[i + 1] for i in range(2)]
    assert min(rates) > 12, (errs, rates)


def test_energy_inequality_holds():
    g = Grid(16)
    cfg = SolverConfig(g, 0.05, 0.01, 0.3, initial_condition=InitialCondition("random", seed=1, energy=0.2))
    tr = simulate(cfg)
    lhs, e0 = tr.energy_inequality()
    assert lhs <= e0 * (1 + 1e-4)
    assert np.all(np.diff(tr.energy) <= 1e-12)


def test_cfl_violation_raises():
    g = Grid(16)
    cfg = SolverConfig(g, 1e-3, 1.0, 2.0, initial_condition=InitialCondition("abc"))
    with pytest.raises(CFLViolation):
        simulate(cfg)


def test_blowup_dumps_last_state(tmp_path):
    g = Grid(16)
    big = InitialCondition("random", seed=0, energy=1e150)
    cfg = SolverConfig(g, 1e-3, 1e-3, 1.0, initial_condition=big, cfl_limit=math.inf)
    with pytest.raises(NumericalBlowup) as ei:
        simulate(cfg, dump_dir=str(tmp_path))
    assert ei.value.dump_path is not None
    from vscope.io import read_snapshot

    f, h = read_snapshot(ei.value.dump_path)
    assert np.all(np.isfinite(f.values)) and h.kind == "velocity"


def test_observer_sees_every_step():
    g = Grid(16)
    seen = []
    simulate(SolverConfig(g, 1.0, 0.01, 0.05, snapshot_stride=100), observer=lambda u: seen.append(u.time))
    np.testing.assert_allclose(seen, np.linspace(0, 0.05, 6))


def test_single_step_matches_simulate():
    g = Grid(16)
    cfg = SolverConfig(g, 0.1, 0.01, 0.01, initial_condition=InitialCondition("taylor_green_3d"))
    u0 = initial_condition(cfg.initial_condition, g)
    a = step(u0, cfg).values
    b = simulate(cfg).velocity(-1).values
    np.testing.assert_allclose(a, b, atol=1e-14)


def test_config_validation():
    g = Grid(16)
    for kw in ({"viscosity": 0}, {"dt": -1}, {"t_end": -1}, {"snapshot_stride": 0}):
        with pytest.raises(ValueError):
            SolverConfig(g, **kw)
    with pytest.raises(ValueError):
        initial_condition("nope", g)
