import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from warpmin.errors import DegenerateMetric, DomainError, InvalidParams, UnknownModel
from warpmin.metric_core import (classify_monotonicity, conformal_family, eval_metric, lie_derivative_t,
                                 metric_from_spec, model_metric, product_extension, reparametrize_t, sample_points)

MODELS = [
    ("flat", {}),
    ("euclidean_polar", {}),
    ("hyperbolic_polar", {"k": 1.0}),
    ("sphere_polar", {"k": 1.0}),
    ("warped", {"f": {"type": "cosh"}}),
    ("warped", {"f": {"type": "exp", "b": 0.7}, "fiber_dim": 2}),
    ("killing", {"h": {"type": "fourier", "c0": 2.0, "a": [0.5]}}),
    ("doubly_warped", {"f1": {"type": "cosh"}, "f2": {"type": "exp", "b": 0.5}}),
]


def test_eval_metric_examples():
    b, g = eval_metric(model_metric("euclidean_polar"), 1.0, [0.3])
    assert b == 1.0 and np.allclose(g, [[1.0]])
    b, g = eval_metric(model_metric("flat"), 0.4, [2.0])
    assert b == 1.0 and np.allclose(g, [[1.0]])
    b, g = eval_metric(model_metric("sphere_polar", k=1.0), math.pi / 4, [0.0])
    assert b == 1.0 and g[0, 0] == pytest.approx(0.5, abs=1e-14)


def test_eval_metric_outside_domain():
    with pytest.raises(DomainError):
        eval_metric(model_metric("sphere_polar", k=1.0), 4.0, [0.0])
    with pytest.raises(DomainError):
        eval_metric(model_metric("euclidean_polar"), -1.0, [0.0])


def test_degenerate_metric_detected():
    fam = model_metric("warped", f={"type": "sin"})  # f(0) = 0
    with pytest.raises(DegenerateMetric):
        eval_metric(fam, 0.0, [0.0])


def test_lie_derivative_examples():
    _, dg = lie_derivative_t(model_metric("warped", f={"type": "cosh"}), 0.0, [1.0])
    assert abs(dg[0, 0]) < 1e-15
    _, dg = lie_derivative_t(model_metric("euclidean_polar"), 2.0, [0.0])
    assert dg[0, 0] == pytest.approx(4.0)
    _, dg = lie_derivative_t(model_metric("sphere_polar", k=1.0), 3 * math.pi / 4, [0.0])
    assert dg[0, 0] == pytest.approx(math.sin(1.5 * math.pi)) and dg[0, 0] < 0


def test_classification_examples():
    hyp = classify_monotonicity(model_metric("hyperbolic_polar", k=1.0), [(0.1, 3.0), (0.0, 2 * math.pi)])
    assert "expanding" in hyp.flags and "non_shrinking" in hyp.flags
    flat = classify_monotonicity(model_metric("flat"), [(-1, 1), (0, 6)])
    assert flat.flags == {"non_shrinking", "non_expanding"}
    sph = classify_monotonicity(model_metric("sphere_polar", k=1.0), [(0.1, 3.0), (0, 6)])
    assert sph.flags == {"indefinite"}
    assert len(sph.witnesses) == 3


def test_classification_contracting():
    rep = classify_monotonicity(model_metric("warped", f={"type": "exp", "b": -1.0}), [(-1, 1), (0, 6)])
    assert "contracting" in rep.flags and "non_expanding" in rep.flags


def test_product_extension_examples():
    flat = model_metric("flat")
    ext = product_extension(flat)
    assert ext.fiber_dim == 2
    _, g = eval_metric(ext, 0.3, [1.0, 2.0])
    assert np.allclose(g, np.eye(2))
    assert classify_monotonicity(ext, [(-1, 1), (0, 6), (0, 6)], grid=4).flags == {"non_shrinking", "non_expanding"}

    pol = product_extension(model_metric("euclidean_polar"))
    _, dg = lie_derivative_t(pol, 1.5, [0.2, 0.1])
    assert np.allclose(dg, np.diag([3.0, 0.0]))

    hyp = product_extension(model_metric("hyperbolic_polar", k=1.0))
    flags = classify_monotonicity(hyp, [(0.1, 3.0), (0, 6), (0, 6)], grid=5).flags
    assert "non_shrinking" in flags and "expanding" not in flags


def test_model_metric_examples():
    sph = model_metric("sphere_polar", k=1.0)
    assert sph.t_interval == (0.0, math.pi)
    assert sph.f_domain[0][2]  # periodic angle
    warped_one = model_metric("warped", f=1.0)
    _, g = eval_metric(warped_one, 0.7, [0.1])
    assert np.allclose(g, [[1.0]])
    hyp4 = model_metric("hyperbolic_polar", k=4.0)
    _, g = eval_metric(hyp4, 1.0, [0.0])
    assert g[0, 0] == pytest.approx(4.0**-0.5 * math.cosh(2.0) ** 2, rel=1e-14)


def test_model_metric_errors():
    with pytest.raises(UnknownModel):
        model_metric("klein_bottle")
    with pytest.raises(InvalidParams):
        model_metric("hyperbolic_polar", k=-1.0)
    with pytest.raises(InvalidParams):
        metric_from_spec({"k": 1.0})


def test_metric_from_spec_product_and_list_params():
    fam = metric_from_spec({"model": "product_extension", "base": {"model": "euclidean_polar"}})
    assert fam.fiber_dim == 2
    assert model_metric("sphere_polar", [4.0]).t_interval[1] == pytest.approx(math.pi / 2)


@pytest.mark.parametrize("name,params", MODELS, ids=[m[0] + str(i) for i, m in enumerate(MODELS)])
def test_analytic_matches_finite_difference(name, params):
    fam = model_metric(name, params)
    fd = model_metric(name, {**params, "derivative_mode": "finite_difference"})
    X = sample_points(fam, fam.default_region, 100, np.random.default_rng(1))
    db_a, dg_a = fam.time_derivatives(X[:, 0], X[:, 1:])
    db_f, dg_f = fd.time_derivatives(X[:, 0], X[:, 1:])
    h = fd.t_step
    # centred-difference roundoff grows like eps * |value| / h, so compare relative to magnitude
    assert np.max(np.abs(db_a - db_f) / np.maximum(1.0, np.abs(db_a))) <= 10 * h**2 + 1e-8
    assert np.max(np.abs(dg_a - dg_f) / np.maximum(1.0, np.abs(dg_a))) <= 10 * h**2 + 1e-8


def _warped_flags_oracle(f, lo, hi):
    s = np.linspace(lo, hi, 9)
    ff = f(s) * f.deriv(s)
    flags = set()
    if ff.min() >= 0:
        flags.add("non_shrinking")
        if ff.min() > 0:
            flags.add("expanding")
    if ff.max() <= 0:
        flags.add("non_expanding")
        if ff.max() < 0:
            flags.add("contracting")
    return flags or {"indefinite"}


@settings(max_examples=30, deadline=None)
@given(st.floats(-1.5, 1.5), st.floats(0.3, 2.0), st.floats(-1.0, 1.0).filter(lambda v: abs(v) > 0.05))
def test_warped_flags_match_sign_of_f_fprime(lo, width, b):
    from warpmin.functions import make_function
    spec = {"type": "exp", "b": b}
    fam = model_metric("warped", f=spec)
    rep = classify_monotonicity(fam, [(lo, lo + width), (0, 6)], grid=9)
    assert set(rep.flags) == _warped_flags_oracle(make_function(spec), lo, lo + width)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.2, 5.0))
def test_flags_invariant_under_fiber_scaling(scale):
    base = model_metric("hyperbolic_polar", k=1.0)
    scaled = conformal_family(base, lambda X: np.full(np.atleast_2d(X).shape[0], math.log(scale)) * 0.0)
    region = [(0.1, 3.0), (0, 6)]
    # rescaling x by a constant multiplies g by a constant; generalized eigenvalues do not move
    sx = model_metric("warped", f={"type": "cosh", "a": scale})
    assert classify_monotonicity(sx, [(0.1, 3.0), (0, 6)]).flags == \
        classify_monotonicity(model_metric("warped", f={"type": "cosh"}), [(0.1, 3.0), (0, 6)]).flags
    assert classify_monotonicity(scaled, region).flags == classify_monotonicity(base, region).flags


@settings(max_examples=20, deadline=None)
@given(st.sampled_from(["flat", "euclidean_polar", "sphere_polar", "killing"]))
def test_product_extension_never_strict(name):
    fam = model_metric(name, {"k": 1.0} if name == "sphere_polar" else {})
    ext = product_extension(fam)
    region = list(fam.default_region) + [(0.0, 6.0)]
    flags = classify_monotonicity(ext, region, grid=4).flags
    base_flags = classify_monotonicity(fam, fam.default_region, grid=4).flags
    assert not flags & {"expanding", "contracting"}
    for keep in ("non_shrinking", "non_expanding"):
        assert (keep in flags) == (keep in base_flags)


def test_reparametrize_t_pulls_back():
    base = model_metric("warped", f={"type": "cosh"})
    rep = reparametrize_t(base, {"type": "affine", "a": 2.0, "b": 0.0}, (-1.0, 1.0))
    b, g = eval_metric(rep, 0.5, [0.0])
    assert b == pytest.approx(4.0)
    assert g[0, 0] == pytest.approx(math.cosh(1.0) ** 2)
