import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from warpmin.errors import DomainError, InvalidParams, StructureMismatch
from warpmin.graph_pde import (Grid, GraphField, NewtonOptions, closed_form_residual, dirichlet_solve,
                               field_from_csv, field_from_function, field_to_csv, graph_mean_curvature,
                               graph_normal, newton_solve, specialization_crosscheck)
from warpmin.metric_core import model_metric

FLAT = model_metric("flat")
COSH = model_metric("warped", f={"type": "cosh"})
EXP = model_metric("warped", f={"type": "exp", "b": 1.0})


def test_grid_layout():
    g = Grid.periodic(8)
    assert g.coords()[0][-1] < 2 * math.pi  # no seam node
    d = Grid.dirichlet(5, dim=2)
    assert d.boundary_mask().sum() == 16
    with pytest.raises(InvalidParams):
        Grid.dirichlet(2)


def test_field_validation():
    with pytest.raises(InvalidParams):
        GraphField(Grid.periodic(8), np.full(8, np.nan))
    with pytest.raises(InvalidParams):
        GraphField(Grid.dirichlet(8), np.zeros(8), jumps=(1.0,))


def test_graph_normal_examples():
    g = Grid.periodic(16)
    assert np.allclose(graph_normal(FLAT, field_from_function(g, lambda x: np.full_like(x, 0.3)), 3), [1.0, 0.0])
    lin = field_from_function(g, lambda x: x.copy(), jumps=(2 * math.pi,))
    N = graph_normal(FLAT, lin, 5)
    assert np.allclose(N, np.array([1.0, -1.0]) / math.sqrt(2))
    assert np.allclose(graph_normal(COSH, field_from_function(g, lambda x: np.full_like(x, 0.8)), 0), [1.0, 0.0])
    with pytest.raises(DomainError):
        graph_normal(FLAT, field_from_function(Grid.dirichlet(8), lambda x: 0 * x), 0)


@settings(max_examples=25, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.integers(0, 15))
def test_graph_normal_is_unit(a, b, node):
    fam = model_metric("killing", h={"type": "fourier", "c0": 2.0, "a": [0.5]})
    g = Grid.periodic(16)
    field = field_from_function(g, lambda x: a * np.sin(x) + b * np.cos(2 * x))
    N = graph_normal(fam, field, node)
    x = g.coords()[0][node]
    X = np.array([[field.values[node], x]])
    G = fam.ambient(X)[0]
    assert N @ G @ N == pytest.approx(1.0, abs=1e-10)
    assert N[0] > 0


def test_mean_curvature_examples():
    g = Grid.periodic(32, dim=2)
    aff = field_from_function(g, lambda x, y: 0.3 * x - 0.2 * y + 1.0, jumps=(0.6 * math.pi, -0.4 * math.pi))
    assert np.max(np.abs(graph_mean_curvature(model_metric("flat", fiber_dim=2), aff))) <= 1e-8
    g1 = Grid.periodic(16)
    for c in (-0.7, 0.0, 0.4, 1.3):
        const = field_from_function(g1, lambda x: np.full_like(x, c))
        res = graph_mean_curvature(COSH, const)
        assert np.allclose(res, math.tanh(c), atol=1e-6)
    assert np.max(np.abs(graph_mean_curvature(COSH, field_from_function(g1, lambda x: 0 * x)))) == 0.0


@settings(max_examples=20, deadline=None)
@given(st.floats(-2, 2), st.sampled_from([1, 2]))
def test_constant_residual_law(c, dim):
    fam = model_metric("warped", f={"type": "exp", "b": 0.7}, fiber_dim=dim)
    grid = Grid.periodic(8, dim=dim)
    field = GraphField(grid, np.full(grid.shape, c))
    assert np.allclose(graph_mean_curvature(fam, field), dim * 0.7, atol=1e-8)


def _orders(errors):
    e = np.asarray(errors)
    return np.log2(e[:-1] / e[1:])


def test_crosscheck_examples():
    # euclidean and warped cases converge at second order
    for fam, which, func in ((FLAT, "euclidean", lambda x: 0.5 * np.sin(x) + 0.2 * np.cos(3 * x)),
                             (COSH, "warped", lambda x: 0.3 * np.sin(x))):
        errs = [specialization_crosscheck(fam, field_from_function(Grid.periodic(n), func), which)
                for n in (128, 256, 512, 1024)]
        assert min(_orders(errs)) >= 1.9
    kill = model_metric("killing", h=1.0)
    for n in (32, 64):
        field = field_from_function(Grid.periodic(n), lambda x: 0.5 * np.sin(x))
        a = specialization_crosscheck(kill, field, "killing")
        b = specialization_crosscheck(FLAT, field, "euclidean")
        assert a == b


def test_crosscheck_structure_mismatch():
    field = field_from_function(Grid.periodic(16), lambda x: 0.3 + 0.1 * np.sin(x))
    with pytest.raises(StructureMismatch):
        closed_form_residual(COSH, field, "euclidean")
    with pytest.raises(StructureMismatch):
        closed_form_residual(FLAT, field, "killing")


def test_newton_cosh_goes_to_zero():
    field = field_from_function(Grid.periodic(32), lambda x: 0.4 * np.sin(x))
    out, rep = newton_solve(COSH, field)
    assert rep.converged and rep.verdict == "constant_solution"
    assert np.max(np.abs(out.values)) <= 1e-8


def test_newton_flat_finds_affine(rng):
    grid = Grid.periodic(24)
    vals = 0.3 * grid.coords()[0] + 0.05 * rng.standard_normal(24)
    out, rep = newton_solve(FLAT, GraphField(grid, vals, (0.3 * 2 * math.pi,)), pin=0)
    assert rep.converged
    slope = np.diff(out.values)
    assert np.allclose(slope, slope[0], atol=1e-8)
    # converged means the re-evaluated residual is within tolerance
    assert np.max(np.abs(graph_mean_curvature(FLAT, out))) <= 2 * 1e-10


def test_newton_exp_does_not_converge():
    field = field_from_function(Grid.periodic(16), lambda x: 0.2 * np.sin(x))
    _, rep = newton_solve(EXP, field, max_iter=30)
    assert not rep.converged
    assert rep.verdict in ("no_convergence", "residual_floor")
    assert rep.final_infnorm_residual >= 0.9


def test_newton_start_outside_domain():
    fam = model_metric("warped", f={"type": "exp"}, t_interval=(0.0, 1.0))
    with pytest.raises(DomainError):
        newton_solve(fam, GraphField(Grid.periodic(8), np.full(8, 2.0)))


def test_dirichlet_examples():
    grid = Grid.dirichlet(33)
    out, rep = dirichlet_solve(COSH, grid, 0.0, sign="ge")
    assert rep.verdict == "constant_solution" and np.max(np.abs(out.values)) <= 1e-8
    out, rep = dirichlet_solve(model_metric("flat", fiber_dim=2), Grid.dirichlet(12, dim=2), 0.7)
    assert rep.verdict == "constant_solution" and np.allclose(out.values, 0.7)
    _, rep = dirichlet_solve(EXP, grid, 0.0, sign="ge", max_iter=40)
    assert not rep.converged and rep.final_infnorm_residual >= 0.9


def test_killing_dirichlet_rigidity(rng):
    grid = Grid.dirichlet(9, dim=2)
    for _ in range(5):
        a1, b1 = rng.uniform(-0.5, 0.5, 2)
        fam = model_metric("killing", fiber_dim=2, h={"type": "fourier", "c0": 2.0, "a": [a1], "b": [b1]},
                           f_domain=[(-1.0, 1.0, False)] * 2)
        c = rng.uniform(-1, 1)
        out, rep = dirichlet_solve(fam, grid, c, bump=0.2)
        assert rep.verdict == "constant_solution"
        assert np.allclose(out.values, c, atol=1e-8)


def test_report_and_csv_round_trip():
    field = field_from_function(Grid.periodic(8, dim=2), lambda x, y: np.sin(x) * np.cos(y) + 0.1 * x,
                                jumps=(0.2 * math.pi, 0.0), family_id="flat")
    back = field_from_csv(field_to_csv(field))
    assert np.array_equal(back.values, field.values)
    assert back.jumps == field.jumps and back.grid.axes == field.grid.axes
    _, rep = newton_solve(COSH, field_from_function(Grid.periodic(8), lambda x: 0.1 * np.sin(x)), max_iter=3)
    d = rep.to_dict()
    assert set(d) >= {"converged", "iterations", "residual_norm_history", "final_infnorm_residual", "u_range",
                      "verdict"}


def test_solver_options_validation():
    field = field_from_function(Grid.periodic(8), lambda x: 0 * x)
    with pytest.raises(InvalidParams):
        newton_solve(COSH, field, sign="sideways")
    with pytest.raises(InvalidParams):
        newton_solve(COSH, field, max_iter=0)
