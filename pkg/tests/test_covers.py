import math

import numpy as np
import pytest

from vscope.covers import (
    Cover,
    InfeasibleCoverError,
    adversarial_family,
    certify,
    default_cert_grid,
    generate,
    macro_nodes,
)
from vscope.ensemble import ensemble_average
from vscope.grid import Grid, ScalarField

R0 = math.pi / 2


def _brute_force(cover, nodes):
    """Naive double loop over nodes and centres."""
    cov = np.zeros(len(nodes), int)
    mul = np.zeros(len(nodes), int)
    for c in cover.centers:
        d = np.sqrt(((nodes - c) ** 2).sum(axis=1))
        cov += d <= cover.R
        mul += d < 2 * cover.R
    return int((cov == 0).sum()), int(mul.max())


def test_single_ball_cover():
    g = default_cert_grid(R0, R0)
    rep = certify(Cover(R0, R0, [[0, 0, 0]]), g)
    assert rep.passed
    assert rep.max_multiplicity == 1
    assert rep.n == 1


def test_coincident_centres_double_multiplicity():
    g = default_cert_grid(R0, R0)
    rep = certify(Cover(R0, R0, [[0, 0, 0], [0, 0, 0]]), g)
    assert rep.coverage_ok
    assert rep.max_multiplicity == 2


def test_uncovered_and_count_failures_are_reported():
    g = default_cert_grid(R0, R0 / 2)
    rep = certify(Cover(R0, R0 / 2, [[0, 0, 0]]), g)
    assert not rep.coverage_ok and not rep.count_ok
    assert any("uncovered" in f for f in rep.failures())
    assert any("count" in f for f in rep.failures())


@pytest.mark.parametrize("q", [1.0, 1.1, 1.5, 2.0, 3.0])
def test_lattice_covers_certify(q):
    c = generate(R0, R0 / q, strategy="lattice")
    lo, hi = c.count_bounds()
    assert lo <= c.n <= hi
    assert certify(c, default_cert_grid(R0, c.R)).passed


def test_lattice_prefers_fewest_centres():
    assert generate(R0, R0).n == 1
    assert generate(R0, 0.9 * R0).n == 8


def test_octant_strategy_and_its_limit():
    c = generate(R0, 0.9 * R0, strategy="octant")
    assert c.n == 8
    np.testing.assert_allclose(np.abs(c.centers), R0 / 2)
    with pytest.raises(InfeasibleCoverError):
        generate(R0, 0.5 * R0, strategy="octant")


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_jittered_matches_brute_force_recount(seed):
    R = R0 / 2
    c = generate(R0, R, strategy="jittered", seed=seed)
    g = default_cert_grid(R0, R)
    rep = certify(c, g)
    uncovered, maxm = _brute_force(c, macro_nodes(g, R0))
    assert rep.uncovered == uncovered == 0
    assert rep.max_multiplicity == maxm <= 27


def test_jittered_is_deterministic_per_seed():
    a = generate(R0, R0 / 1.5, strategy="jittered", seed=4)
    b = generate(R0, R0 / 1.5, strategy="jittered", seed=4)
    d = generate(R0, R0 / 1.5, strategy="jittered", seed=5)
    np.testing.assert_array_equal(a.centers, b.centers)
    assert a.centers.shape != d.centers.shape or not np.allclose(a.centers, d.centers)


def test_infeasible_multiplicity_bound_raises():
    with pytest.raises(InfeasibleCoverError, match="multiplicity"):
        generate(R0, R0 / 2, K2=2)


def test_bad_arguments():
    with pytest.raises(ValueError):
        generate(R0, 2 * R0)
    with pytest.raises(ValueError):
        generate(R0, R0 / 2, strategy="hexagonal")
    with pytest.raises(ValueError):
        generate(R0, R0 / 2, strategy="jittered", jitter=0.3)


def test_json_round_trip():
    c = generate(R0, R0 / 2, strategy="jittered", seed=3)
    d = Cover.from_json(c.to_json())
    np.testing.assert_array_equal(d.centers, c.centers)
    assert (d.R0, d.R, d.K1, d.K2, d.strategy, d.seed) == (c.R0, c.R, c.K1, c.K2, c.strategy, c.seed)


def _sin_field(g, k=8):
    x = np.arange(g.n_points) * g.spacing
    return ScalarField(g, np.broadcast_to(np.sin(k * x)[:, None, None], g.shape).copy())


def test_adversarial_family_certifies():
    g = Grid(32)
    R = 8 * g.spacing
    fam = adversarial_family(_sin_field(g), R, count=4, seed=0)
    assert [c.strategy for c in fam[:2]] == ["biased-positive", "biased-negative"]
    for c in fam:
        assert certify(c, g).passed


def test_adversarial_constant_density_single_sign():
    g = Grid(32)
    one = ScalarField(g, np.ones(g.shape))
    fam = adversarial_family(one, 8 * g.spacing, count=4, seed=1)
    rep = ensemble_average("one", fam, one)
    assert np.all(rep.means > 0)


def test_adversarial_detects_small_scale_sign_changes():
    g = Grid(32)
    f = _sin_field(g, k=2)  # wavelength pi, R = pi/4 < wavelength/2
    fam = adversarial_family(f, math.pi / 4, count=4, seed=0)
    rep = ensemble_average("sin", fam, f)
    assert rep.both_signs
