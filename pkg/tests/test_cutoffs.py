import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vscope.cutoffs import (
    ConeCutoff,
    CutoffPair,
    DegenerateConeError,
    IndicatorProfile,
    ProductCutoff,
    SpatialCutoff,
    TemporalCutoff,
    boundary_adjust,
    bridge,
    bridge_order,
    frame_points,
    make_spatial,
    make_temporal,
    refinement_study,
    verify_bounds,
)
from vscope.grid import Grid

R0 = math.pi / 2


def _fd_check(psi, X, h=1e-4):
    """Central differences of value() against gradient() and laplacian()."""
    g = psi.gradient(X)
    lap = psi.laplacian(X)
    fd_g = np.zeros_like(g)
    fd_l = np.zeros(X.shape[1:])
    v0 = psi.value(X)
    for a in range(3):
        e = np.zeros((3,) + (1,) * (X.ndim - 1))
        e[a] = h
        vp, vm = psi.value(X + e), psi.value(X - e)
        fd_g[a] = (vp - vm) / (2 * h)
        fd_l += (vp - 2 * v0 + vm) / h**2
    return np.max(np.abs(g - fd_g)), np.max(np.abs(lap - fd_l))


def _random_points(n, scale, seed=0):
    rng = np.random.default_rng(seed)
    return rng.uniform(-scale, scale, size=(3, n))


def test_bridge_endpoints_and_order():
    assert bridge_order(0.75) == 4
    assert bridge_order(7 / 8) == 8
    s = np.linspace(0, 1, 101)
    b = bridge(s, 4)
    assert b[0] == 0 and b[-1] == 1
    assert np.all(np.diff(b) >= 0)
    np.testing.assert_allclose(b + b[::-1], 1.0, atol=1e-14)
    with pytest.raises(ValueError):
        bridge_order(0.5)


@pytest.mark.parametrize("m", [4, 8])
def test_bridge_derivatives_match_finite_differences(m):
    s = np.linspace(0.02, 0.98, 49)
    h = 1e-6
    np.testing.assert_allclose(bridge(s, m, 1), (bridge(s + h, m) - bridge(s - h, m)) / (2 * h), atol=1e-6)
    np.testing.assert_allclose(
        bridge(s, m, 2), (bridge(s + h, m, 1) - bridge(s - h, m, 1)) / (2 * h), atol=1e-4
    )


def test_temporal_cutoff_shape():
    eta = make_temporal(1.0, 0.75)
    t = np.array([0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0])
    v = eta.value(t)
    assert v[0] == 0 and v[1] == 0 and v[2] == 0
    assert 0 < v[3] < 1
    assert np.all(v[4:] == 1)
    assert np.all(eta.derivative(np.array([0.1, 0.8])) == 0)
    with pytest.raises(ValueError):
        TemporalCutoff(0.0, 0.75, 4)


def test_spatial_cutoff_plateau_and_support():
    psi = make_spatial((0, 0, 0), 1.0, 0.75)
    X = np.array([[0.0, 0.5, 0.99, 1.5, 2.0, 2.5], [0] * 6, [0] * 6])
    v = psi.value(X)
    assert np.all(v[:3] == 1)
    assert 0 < v[3] < 1
    assert v[4] == 0 and v[5] == 0
    with pytest.raises(ValueError):
        make_spatial((0, 0, 0), 1.0, 0.75, box_length=3.0)


def test_spatial_derivatives_fd():
    psi = make_spatial((0.1, -0.2, 0.3), 0.8, 0.75)
    X = _random_points(400, 2.0, 1)
    coarse, fine = _fd_check(psi, X, 1e-3), _fd_check(psi, X, 1e-4)
    # second-order differences: a tenfold smaller step cuts the error ~100x
    assert fine[0] < 1e-5 and coarse[0] / fine[0] > 50
    assert fine[1] < 1e-4 and coarse[1] / fine[1] > 50


def test_cone_derivatives_fd():
    psi0 = make_spatial((0, 0, 0), R0, 0.75)
    elem = make_spatial((R0 * 0.95, 0.0, 0.0), R0 / 2, 0.75)
    cone = boundary_adjust(elem, psi0)
    assert isinstance(cone, ConeCutoff)
    eg, el = _fd_check(cone, _random_points(2000, 2 * R0, 2))
    assert eg < 1e-5
    assert el < 1e-2


def test_boundary_adjust_classes():
    psi0 = make_spatial((0, 0, 0), R0, 0.75)
    assert boundary_adjust(make_spatial((0, 0, 0), R0, 0.75), psi0) is psi0
    inner = make_spatial((0.1, 0, 0), R0 / 4, 0.75)
    assert boundary_adjust(inner, psi0) is inner
    mid = make_spatial((0.6 * R0, 0, 0), R0 / 4, 0.75)
    assert isinstance(boundary_adjust(mid, psi0), ProductCutoff)
    edge = make_spatial((0.9 * R0, 0, 0), R0 / 4, 0.75)
    assert isinstance(boundary_adjust(edge, psi0), ConeCutoff)
    degenerate = make_spatial((0.2 * R0, 0, 0), 0.9 * R0, 0.75)
    assert isinstance(boundary_adjust(degenerate, psi0), ProductCutoff)
    with pytest.raises(DegenerateConeError):
        boundary_adjust(degenerate, psi0, strict=True)


@settings(max_examples=30, deadline=None)
@given(
    r=st.floats(0.7, 1.0),
    q=st.floats(0.15, 0.9),
    theta=st.floats(0, math.pi),
    phi=st.floats(0, 2 * math.pi),
)
def test_adjusted_cutoff_is_dominated_by_macro(r, q, theta, phi):
    psi0 = make_spatial((0, 0, 0), R0, 0.75)
    c = R0 * r * np.array([math.sin(theta) * math.cos(phi), math.sin(theta) * math.sin(phi), math.cos(theta)])
    psi = boundary_adjust(make_spatial(c, q * R0, 0.75), psi0)
    X = _random_points(3000, 2.2 * R0, 5)
    v, v0 = psi.value(X), psi0.value(X)
    assert np.all(v >= 0)
    assert np.all(v <= v0 + 1e-12)


def test_cone_equals_macro_inside_the_element_cone():
    psi0 = make_spatial((0, 0, 0), R0, 0.75)
    cone = boundary_adjust(make_spatial((R0, 0, 0), R0 / 2, 0.75), psi0)
    # points along the ray through the element centre, outside the macro ball
    X = np.array([[1.2 * R0, 1.5 * R0, 1.9 * R0], [0, 0, 0], [0, 0, 0]])
    np.testing.assert_allclose(cone.value(X), psi0.value(X), atol=1e-14)
    # a ray far outside the doubled cone carries nothing
    Y = np.array([[0, 0, 0], [1.2 * R0, 1.5 * R0, 1.9 * R0], [0, 0, 0]])
    assert np.all(cone.value(Y) == 0)


def test_cutoff_pair_exponent():
    pair = CutoffPair(make_spatial((0, 0, 0), 1.0, 0.75), make_temporal(1.0, 0.75), 0.5)
    X = np.array([[1.5], [0.0], [0.0]])
    s = make_spatial((0, 0, 0), 1.0, 0.75).value(X)
    assert pair.value(X, 0.5) == pytest.approx((s * make_temporal(1.0, 0.75).value(0.5)) ** 0.5)
    with pytest.raises(ValueError):
        CutoffPair(pair.spatial, pair.temporal, 0.0)


def test_frame_points_minimum_image():
    g = Grid(8)
    X = frame_points(g, (0.0, 0.0, 0.0))
    assert X.min() >= -math.pi - 1e-12 and X.max() < math.pi
    assert X[:, 0, 0, 0].tolist() == [0.0, 0.0, 0.0]


@pytest.mark.parametrize("rho", [0.75, 7 / 8])
def test_verify_bounds_finite(rho):
    g = Grid(32)
    rep = verify_bounds(make_spatial((0, 0, 0), R0 / 2, rho), g)
    assert np.isfinite(rep.gradient_ratio) and rep.gradient_ratio > 0
    assert np.isfinite(rep.laplacian_ratio)
    t = verify_bounds(make_temporal(1.0, rho), 256)
    assert 0 < t.gradient_ratio < np.inf


def test_refinement_temporal_stable_and_indicator_diverges():
    study = refinement_study(lambda g: make_temporal(1.0, 0.75), resolutions=(64, 128, 256))
    assert study.stable
    ind = refinement_study(
        lambda g: SpatialCutoff((0, 0, 0), R0 / 2, 0.75, 4, profile=IndicatorProfile()),
        resolutions=(16, 32, 64),
    )
    assert ind.diverging and not ind.stable
