import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from warpmin.errors import InvalidParams
from warpmin.flow_lab import (FlowPolicy, _spacing_ratio, ball_threshold_experiment, flow_step, geodesic_circle_seed,
                              latitude_seed, max_principle_probe, polish_minimal, resample, run_flow)
from warpmin.metric_core import classify_monotonicity, model_metric, product_extension
from warpmin.submanifold import closed_curve, grid_patch, mean_curvature_norm, volume

SPHERE = model_metric("sphere_polar", k=1.0)
HYP = model_metric("hyperbolic_polar", k=1.0)
FLAT = model_metric("flat")
COSH = model_metric("warped", f={"type": "cosh"})
EXP = model_metric("warped", f={"type": "exp"})


def circle(R, n=128, center=(0.0, 3.0)):
    s = 2 * np.pi * np.arange(n) / n
    return closed_curve(np.column_stack([center[0] + R * np.cos(s), center[1] + R * np.sin(s)]))


def test_equator_is_a_fixed_point():
    eq = latitude_seed(SPHERE, math.pi / 2, 64)
    out = flow_step(eq, SPHERE, 1e-2)
    assert np.max(np.abs(out.vertices - eq.vertices)) <= 1e-6


def test_flat_circle_shrinks_at_unit_speed():
    imm = circle(1.0)
    dt = 1e-3
    out = flow_step(imm, FLAT, dt)
    r0 = np.linalg.norm(imm.vertices - [0.0, 3.0], axis=1).mean()
    r1 = np.linalg.norm(out.vertices - [0.0, 3.0], axis=1).mean()
    assert (r0 - r1) == pytest.approx(dt * (2 * math.pi / 128) / (2 * math.sin(math.pi / 128)), rel=1e-2)


def test_zero_step_is_identity_and_negative_rejected():
    imm = circle(0.7)
    assert flow_step(imm, FLAT, 0.0) is imm
    with pytest.raises(InvalidParams):
        flow_step(imm, FLAT, -1e-3)


def test_policy_validation():
    with pytest.raises(InvalidParams):
        FlowPolicy(max_steps=0)
    with pytest.raises(InvalidParams):
        FlowPolicy(dt0=0.0)


def test_hyperbolic_curve_collapses():
    imm, _ = geodesic_circle_seed(HYP, [1.0, 0.5], 0.4, 48, np.random.default_rng(2), 0.1)
    assert run_flow(imm, HYP).verdict == "collapsed"


def test_sphere_latitude_reaches_equator():
    tr = run_flow(latitude_seed(SPHERE, math.pi / 2 + 0.3, 64), SPHERE, FlowPolicy(polish_below=0.5))
    assert tr.verdict == "converged_minimal"
    assert tr.tau_spread <= 1e-4
    assert abs(tr.tau_min[-1] - math.pi / 2) <= 1e-4


def test_sphere_latitude_without_polish_leaves_the_unstable_equator():
    tr = run_flow(latitude_seed(SPHERE, math.pi / 2 + 0.3, 64), SPHERE)
    assert tr.verdict in ("collapsed", "left_domain")


def test_strictly_expanding_product_collapses():
    fam = product_extension(EXP)
    for seed in range(3):
        tr = run_flow(latitude_seed(fam, 0.5, 48, np.random.default_rng(seed), 0.1), fam)
        assert tr.verdict == "collapsed"


@pytest.mark.parametrize("seed", range(4))
def test_converged_curves_sit_at_the_neck(seed):
    # f = cosh has its only critical point at t = 0
    rng = np.random.default_rng(seed)
    tr = run_flow(latitude_seed(COSH, rng.uniform(-1, 1), 48, rng, 0.1), COSH)
    assert tr.verdict == "converged_minimal"
    assert abs(tr.tau_min[-1]) <= 1e-6 and abs(tr.tau_max[-1]) <= 1e-6


def test_trace_lengths_non_increasing():
    for fam, imm in ((COSH, latitude_seed(COSH, 0.8, 48, np.random.default_rng(0), 0.1)),
                     (HYP, geodesic_circle_seed(HYP, [1.0, 0.5], 0.4, 48, np.random.default_rng(2), 0.1)[0]),
                     (FLAT, circle(1.0, 64))):
        tr = run_flow(imm, fam, FlowPolicy(polish=False, max_steps=200))
        L = np.array(tr.lengths)
        assert np.all(np.diff(L) <= 1e-10 * L[:-1])


def test_confinement_for_converged_monotone_runs():
    for seed in range(3):
        rng = np.random.default_rng(seed)
        tr = run_flow(latitude_seed(FLAT, rng.uniform(-1, 1), 48, rng, 0.1), FLAT)
        assert tr.verdict == "converged_minimal"
        lo, hi = tr.tau_min[-1], tr.tau_max[-1]
        flags = classify_monotonicity(FLAT, [(lo - 0.1, hi + 0.1), (0, 2 * math.pi)]).flags
        assert "non_shrinking" in flags
        assert hi - lo <= 1e-3


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.3, 2.5))
def test_resample_evens_spacing_and_keeps_length(seed, r):
    rng = np.random.default_rng(seed)
    n = 200
    u = 2 * math.pi * np.arange(n) / n
    s = u + rng.uniform(0.3, 0.9) * np.sin(u + rng.uniform(0, 2 * math.pi))  # smooth uneven parametrisation
    imm = closed_curve(np.column_stack([r + 0.1 * np.sin(2 * s), s]))
    for fam in (HYP, SPHERE):
        if not fam.in_domain(imm.vertices, True).all():
            continue
        out = resample(imm, fam)
        L0, L1 = volume(imm, fam), volume(out, fam)
        # chart-linear interpolation: length moves only at second order in the spacing
        assert abs(L1 - L0) <= 1e-3 * L0
        assert _spacing_ratio(out, fam) <= 1.2


def test_polish_rejects_patches():
    u, v = np.meshgrid(np.linspace(0, 1, 4), np.linspace(0, 1, 4), indexing="ij")
    fam = model_metric("flat", fiber_dim=2)
    patch = grid_patch(np.column_stack([0 * u.ravel(), u.ravel(), v.ravel()]), 4, 4)
    with pytest.raises(InvalidParams):
        polish_minimal(patch, fam)


def test_polish_finds_the_neck():
    imm = latitude_seed(COSH, 0.05, 48, np.random.default_rng(0), 0.2)
    out, res, ok = polish_minimal(imm, COSH)
    assert ok and res <= 1e-6
    assert np.nanmax(mean_curvature_norm(out, COSH)) <= 1e-6


def test_max_principle_probe():
    eq = run_flow(latitude_seed(SPHERE, math.pi / 2, 48), SPHERE)
    assert eq.verdict == "converged_minimal"
    assert not max_principle_probe(eq)["strict"]
    neck = run_flow(latitude_seed(COSH, 0.5, 48, np.random.default_rng(0), 0.1), COSH)
    assert not max_principle_probe(neck)["strict"]
    bump = latitude_seed(FLAT, 1.0, 48).vertices.copy()
    bump[10, 0] += 0.2
    rep = max_principle_probe(closed_curve(bump))
    assert rep["strict"] and rep["vertex"] == 10


def test_trace_csv_is_deterministic():
    a = run_flow(latitude_seed(COSH, 0.6, 32, np.random.default_rng(5), 0.1), COSH, rng=np.random.default_rng(1))
    b = run_flow(latitude_seed(COSH, 0.6, 32, np.random.default_rng(5), 0.1), COSH, rng=np.random.default_rng(1))
    assert a.to_csv() == b.to_csv()
    assert a.to_csv().splitlines()[0] == "time,length,tau_min,tau_max,theta_max,residual"


def test_ball_threshold_small_sphere_run():
    est = ball_threshold_experiment(SPHERE, "pole", [1.2, 1.8], seeds_per_radius=2, n=24, diameter=math.pi)
    assert [r.successes > 0 for r in est.rows] == [False, True]
    assert est.threshold == 1.8 and est.normalized == pytest.approx(1.8 / math.pi)


def test_ball_threshold_hyperbolic_and_flat_have_none():
    est = ball_threshold_experiment(HYP, "pole", [0.8, 1.6], seeds_per_radius=2, n=24)
    assert est.threshold is None
    plane = model_metric("flat", f_domain=[(-50.0, 50.0, False)])
    est = ball_threshold_experiment(plane, [0.0, 0.0], [0.5, 1.0], seeds_per_radius=2, n=24)
    assert est.threshold is None
    assert all(v == "collapsed" for r in est.rows for v in r.verdicts)


def test_ball_threshold_rejects_bad_radii():
    with pytest.raises(InvalidParams):
        ball_threshold_experiment(SPHERE, "pole", [1.0, 0.5])
