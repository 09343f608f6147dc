import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from warpmin.errors import InvalidParams, LeftDomain, RadiusTooLarge
from warpmin.geometry import (christoffel, exp_map, geodesic_distance, geodesic_shoot, largest_monotone_radius,
                              normal_growth_probe)
from warpmin.metric_core import model_metric


def plane():
    return model_metric("flat", f_domain=[(-50.0, 50.0, False)])


SPHERE = model_metric("sphere_polar", k=1.0)
HYP = model_metric("hyperbolic_polar", k=1.0)
EUC = model_metric("euclidean_polar")


def test_christoffel_examples():
    assert np.allclose(christoffel(plane(), 0.3, [0.7]), 0.0)
    G = christoffel(EUC, 2.0, [0.4])
    assert G[0, 1, 1] == pytest.approx(-2.0)
    assert G[1, 0, 1] == pytest.approx(0.5) and G[1, 1, 0] == pytest.approx(0.5)
    r = 1.1
    G = christoffel(SPHERE, r, [0.0])
    assert G[0, 1, 1] == pytest.approx(-math.sin(r) * math.cos(r))


@settings(max_examples=25, deadline=None)
@given(st.floats(0.2, 2.5), st.floats(0, 6.2))
def test_christoffel_symmetric(r, phi):
    fam = model_metric("killing", h={"type": "fourier", "c0": 2.0, "a": [0.5]})
    G = christoffel(fam, r, [phi])
    assert np.allclose(G, np.swapaxes(G, 1, 2))
    G = christoffel(SPHERE, min(r, 3.0), [phi])
    assert np.allclose(G, np.swapaxes(G, 1, 2))


def test_geodesic_shoot_examples():
    path = geodesic_shoot(plane(), [0.0, 0.0], [0.6, 0.8], 2.0, steps=100)
    assert np.allclose(path.points[-1], [1.2, 1.6], atol=1e-12)
    assert path.arc_params[-1] == 2.0
    eq = geodesic_shoot(SPHERE, [math.pi / 2, 0.0], [0.0, 1.0], 3.0, steps=400)
    assert np.max(np.abs(eq.points[:, 0] - math.pi / 2)) < 1e-12
    rad = geodesic_shoot(EUC, [1.0, 0.3], [1.0, 0.0], 2.0, steps=200)
    assert rad.points[-1, 0] == pytest.approx(3.0, abs=1e-10)


def test_geodesic_shoot_errors():
    with pytest.raises(InvalidParams):
        geodesic_shoot(SPHERE, [1.0, 0.0], [1.0, 0.0], 1.0, steps=8)
    with pytest.raises(LeftDomain) as err:
        geodesic_shoot(EUC, [1.0, 0.0], [-1.0, 0.0], 3.0, steps=300)
    assert err.value.last_point is not None


@pytest.mark.parametrize("fam", [plane(), EUC, HYP, SPHERE,
                                 model_metric("warped", f={"type": "cosh"}),
                                 model_metric("killing", h={"type": "fourier", "c0": 2.0, "a": [0.5]})],
                         ids=["flat", "euc", "hyp", "sph", "warped", "killing"])
def test_speed_drift(fam):
    rng = np.random.default_rng(3)
    start = np.array([1.0, 0.5])
    for _ in range(5):
        v = rng.standard_normal(2)
        path = geodesic_shoot(fam, start, v, 0.8, steps=1000)
        assert path.speed_drift(fam) <= 1e-5


def test_geodesic_distance_examples():
    assert geodesic_distance(plane(), [0.0, 0.0], [3.0, 4.0]) == pytest.approx(5.0, abs=1e-8)
    assert geodesic_distance(SPHERE, [math.pi / 2, 0.0], [math.pi / 2, 1.0]) == pytest.approx(1.0, abs=1e-8)
    assert geodesic_distance(HYP, [1.0, 0.2], [2.0, 0.2]) == pytest.approx(1.0, abs=1e-8)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.5, 1.5), st.floats(0, 1.5), st.floats(0.5, 1.5), st.floats(0, 1.5))
def test_distance_symmetric(r1, p1, r2, p2):
    d1 = geodesic_distance(HYP, [r1, p1], [r2, p2], multistarts=0)
    d2 = geodesic_distance(HYP, [r2, p2], [r1, p1], multistarts=0)
    assert d1 == pytest.approx(d2, abs=1e-7)


def test_exp_map_batch():
    V = np.array([[1.0, 0.0], [0.0, 1.0]])
    X = exp_map(plane(), [0.0, 0.0], V)
    assert np.allclose(X, V)


def test_normal_growth_examples():
    radii = np.linspace(0.1, 1.0, 10)
    h = normal_growth_probe(plane(), [0.0, 0.0], [1.0, 0.0], radii)
    assert np.allclose(h, radii**2, rtol=1e-5)
    assert np.all(np.diff(h) > 0)
    h = normal_growth_probe(HYP, "pole", [1.0], radii)
    assert np.allclose(h, np.cosh(radii) ** 2, rtol=1e-5)
    radii = np.linspace(0.2, 3.0, 15)
    h = normal_growth_probe(SPHERE, "pole", [1.0], radii)
    assert np.allclose(h, np.sin(radii) ** 2, rtol=1e-4, atol=1e-8)
    assert largest_monotone_radius(radii, h) == largest_monotone_radius(radii, np.sin(radii) ** 2)
    assert 1.4 <= largest_monotone_radius(radii, h) <= 1.8


def test_normal_growth_errors():
    with pytest.raises(InvalidParams):
        normal_growth_probe(HYP, "pole", [1.0], [0.5, 0.2])
    with pytest.raises(RadiusTooLarge):
        normal_growth_probe(plane(), [0.0, 0.0], [1.0, 0.0], [10.0], delta=0.1)


def test_gauss_curvature_consistency_on_hyperbolic():
    # h_r = f^2 with f = cosh r; K = -f''/f = -1 <= 0, so f' is non-decreasing
    radii = np.linspace(0.1, 2.0, 40)
    f = np.sqrt(normal_growth_probe(HYP, "pole", [1.0], radii))
    assert np.allclose(f, np.cosh(radii), rtol=1e-5)
    df = np.diff(f) / np.diff(radii)
    assert np.all(np.diff(df) >= 0)


@pytest.mark.parametrize("fam", [plane(), EUC, HYP, SPHERE, model_metric("warped", f={"type": "cosh"}),
                                 model_metric("killing", h={"type": "fourier", "c0": 2.0, "a": [0.5]})],
                         ids=["flat", "euc", "hyp", "sph", "warped", "killing"])
def test_local_growth_near_random_centers(fam):
    rng = np.random.default_rng(7)
    lo, hi = fam.default_region[0]
    radii = np.linspace(0.01, 0.1, 6)
    for _ in range(20):
        c = np.array([rng.uniform(max(lo, 0.3), min(hi, 2.5)), rng.uniform(0, 6)])
        d = rng.standard_normal(2)
        h = normal_growth_probe(fam, c, d, radii)
        assert largest_monotone_radius(radii, h) > 0
        assert h[1] > h[0]
