"""Scenario runners: one entry point per experiment type.

A scenario is a plain mapping (usually parsed from TOML)::

    id = "hyp"
    experiment = "classify"
    seed = 0
    [metric]
    model = "hyperbolic_polar"
    [params]
    grid = 9

``run_scenario`` returns ``(summary, artifacts)``: a JSON-ready dict and a
mapping of file names to text contents.  Writing files is left to callers.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ConfigError, InvalidParams, WarpminError
from .flow_lab import FlowPolicy, ball_threshold_experiment, geodesic_circle_seed, latitude_seed, run_flow
from .geometry import largest_monotone_radius, normal_growth_probe
from .graph_pde import Grid, GraphField, NewtonOptions, dirichlet_solve, field_to_csv, newton_solve
from .metric_core import MetricFamily, classify_monotonicity, metric_from_spec
from .submanifold import (closed_curve, discrete_laplace_beltrami, dumps_immersion, laplacian_tau, load_immersion,
                          mean_curvature_norm)

EXPERIMENTS = ("classify", "formula_check", "graph_solve", "dirichlet", "flow", "ball_threshold", "normal_growth")


def _f(v) -> str:
    return format(float(v), ".17g")


def _csv(header, rows) -> str:
    lines = [",".join(header)]
    lines += [",".join(_f(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def _need(table, key, where=""):
    if key not in table:
        raise ConfigError(f"missing required key {where + key!r}", where + key)
    return table[key]


def validate(scenario: dict) -> dict:
    """Check the top-level structure and fill defaults."""
    if not isinstance(scenario, dict):
        raise ConfigError("scenario must be a table", "<root>")
    sc = dict(scenario)
    sc.setdefault("id", "scenario")
    if not isinstance(sc["id"], str) or not sc["id"]:
        raise ConfigError("id must be a non-empty string", "id")
    exp = _need(sc, "experiment")
    if exp not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {exp!r}; choose from {', '.join(EXPERIMENTS)}", "experiment")
    metric = _need(sc, "metric")
    if not isinstance(metric, dict) or "model" not in metric:
        raise ConfigError("metric must be a table with a 'model' key", "metric")
    seed = sc.setdefault("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("seed must be an integer", "seed")
    params = sc.setdefault("params", {})
    if not isinstance(params, dict):
        raise ConfigError("params must be a table", "params")
    return sc


def build_metric(spec: dict) -> MetricFamily:
    try:
        return metric_from_spec(spec)
    except (InvalidParams, KeyError) as exc:
        raise ConfigError(f"bad metric table: {exc}", "metric") from exc


def run_scenario(scenario: dict, tolerance: float | None = None):
    sc = validate(scenario)
    family = build_metric(sc["metric"])
    runner = _RUNNERS[sc["experiment"]]
    try:
        summary, artifacts = runner(family, sc["params"], sc["seed"], tolerance)
    except ConfigError:
        raise
    except WarpminError as exc:
        exc.args = (f"scenario {sc['id']!r}: {exc.args[0] if exc.args else exc}",) + tuple(exc.args[1:])
        raise
    head = {"id": sc["id"], "experiment": sc["experiment"], "seed": sc["seed"], "metric": family.spec}
    return {**head, **summary}, artifacts


# ----------------------------------------------------------------------
# runners


def _classify(family, p, seed, tol):
    rep = classify_monotonicity(family, p.get("region"), grid=int(p.get("grid", 9)),
                                tolerance=tol if tol is not None else float(p.get("tolerance", 1e-9)))
    return {"result": rep.to_dict()}, {}


def _build_immersion(family, seed_spec, rng):
    kind = _need(seed_spec, "kind", "params.seed.")
    n = int(seed_spec.get("n", 64))
    amp = float(seed_spec.get("amplitude", 0.0))
    if kind == "latitude":
        return latitude_seed(family, float(_need(seed_spec, "level", "params.seed.")), n, rng, amp,
                             axis=int(seed_spec.get("axis", 1)))
    if kind == "geodesic_circle":
        imm, _ = geodesic_circle_seed(family, _need(seed_spec, "center", "params.seed."),
                                      float(_need(seed_spec, "radius", "params.seed.")), n, rng, amp)
        return imm
    if kind == "file":
        return load_immersion(_need(seed_spec, "path", "params.seed."))
    if kind == "points":
        return closed_curve(np.asarray(_need(seed_spec, "vertices", "params.seed."), dtype=float))
    raise ConfigError(f"unknown seed kind {kind!r}", "params.seed.kind")


def _formula_check(family, p, seed, tol):
    rng = np.random.default_rng(seed)
    imm = _build_immersion(family, _need(p, "seed", "params."), rng)
    vals = laplacian_tau(imm, family)
    lb = discrete_laplace_beltrami(imm, family, imm.vertices[:, 0])
    hn = mean_curvature_norm(imm, family)
    rows = np.column_stack([imm.vertices[:, 0], vals.laplacian_tau, vals.laplacian_tau_full,
                            vals.conformal_laplacian_tau, lb, hn])
    gap = np.abs(vals.laplacian_tau_full - lb)
    summary = {"vertices": imm.count, "mean_curvature_max": vals.mean_curvature_max,
               "nonminimal": vals.nonminimal, "max_gap_full_vs_discrete": float(np.nanmax(gap))}
    return summary, {"vertices.csv": _csv(["tau", "laplacian_tau", "laplacian_tau_full", "conformal", "discrete",
                                            "H_norm"], rows)}


def _grid(p, dirichlet=False):
    g = _need(p, "grid", "params.")
    n = int(_need(g, "n", "params.grid."))
    dim = int(g.get("dim", 1))
    if dirichlet:
        return Grid.dirichlet(n, lo=float(g.get("lo", -1.0)), hi=float(g.get("hi", 1.0)), dim=dim)
    return Grid.periodic(n, length=float(g.get("length", 2 * math.pi)), dim=dim, lo=float(g.get("lo", 0.0)))


def _initial(grid, spec, rng):
    c = float(spec.get("constant", 0.0))
    amp = float(spec.get("amplitude", 0.0))
    noise = float(spec.get("noise", 0.0))
    slope = [float(s) for s in spec.get("slope", [0.0] * grid.ndim)]
    mesh = grid.mesh()
    vals = np.full(grid.shape, c)
    for k, m in enumerate(mesh):
        P = grid.axes[k][1] - grid.axes[k][0]
        vals = vals + amp * np.sin(2 * math.pi * (m - grid.axes[k][0]) / P) + slope[k] * m
    if noise:
        vals = vals + noise * rng.standard_normal(grid.shape)
    jumps = tuple(s * (grid.axes[k][1] - grid.axes[k][0]) for k, s in enumerate(slope))
    return vals, jumps


def _solver_opts(p, tol):
    o = dict(p.get("solver", {}))
    if tol is not None:
        o["tolerance"] = tol
    try:
        return NewtonOptions(**o)
    except TypeError as exc:
        raise ConfigError(f"bad solver option: {exc}", "params.solver") from exc


def _graph_solve(family, p, seed, tol):
    rng = np.random.default_rng(seed)
    grid = _grid(p)
    vals, jumps = _initial(grid, p.get("initial", {}), rng)
    field, rep = newton_solve(family, GraphField(grid, vals, jumps, family.name), _solver_opts(p, tol))
    return {"report": rep.to_dict()}, {"field.csv": field_to_csv(field), "residuals.csv":
                                       _csv(["iteration", "residual"], enumerate(rep.residual_norm_history))}


def _dirichlet(family, p, seed, tol):
    grid = _grid(p, dirichlet=True)
    opts = _solver_opts(p, tol)
    field, rep = dirichlet_solve(family, grid, float(p.get("t0", 0.0)), sign=p.get("sign", "free"),
                                 bump=float(p.get("bump", 0.1)), opts=opts)
    return {"report": rep.to_dict()}, {"field.csv": field_to_csv(field), "residuals.csv":
                                       _csv(["iteration", "residual"], enumerate(rep.residual_norm_history))}


def _policy(p, tol):
    o = dict(p.get("policy", {}))
    if tol is not None:
        o["residual_tol"] = tol
    try:
        return FlowPolicy(**o)
    except TypeError as exc:
        raise ConfigError(f"bad policy option: {exc}", "params.policy") from exc


def _flow(family, p, seed, tol):
    rng = np.random.default_rng(seed)
    imm = _build_immersion(family, _need(p, "seed", "params."), rng)
    tr = run_flow(imm, family, _policy(p, tol), np.random.default_rng([seed, 1]))
    return {"trace": tr.summary()}, {"trace.csv": tr.to_csv(), "final_immersion.txt": dumps_immersion(tr.final_immersion)}


def _radii(spec, key):
    if isinstance(spec, dict):
        start, stop, step = (float(_need(spec, k, f"params.{key}.")) for k in ("start", "stop", "step"))
        return list(np.arange(start, stop + 0.5 * step, step))
    if isinstance(spec, (list, tuple)):
        return [float(r) for r in spec]
    raise ConfigError(f"{key} must be a list or a start/stop/step table", f"params.{key}")


def _ball(family, p, seed, tol):
    radii = _radii(_need(p, "radii", "params."), "radii")
    center = p.get("center", "pole")
    est = ball_threshold_experiment(family, center, radii, seeds_per_radius=int(p.get("seeds_per_radius", 5)),
                                    n=int(p.get("n", 32)), rng_seed=seed, amplitude=float(p.get("amplitude", 0.1)),
                                    policy=_policy(p, tol) if "policy" in p or tol is not None else None,
                                    refine=float(p.get("refine", 0.0)), diameter=p.get("diameter"))
    rows = [(r.radius, r.seeds, r.successes) for r in est.rows]
    return {"estimate": est.to_dict()}, {"radii.csv": _csv(["radius", "seeds", "successes"], rows)}


def _growth(family, p, seed, tol):
    radii = _radii(_need(p, "radii", "params."), "radii")
    center = p.get("center", "pole")
    direction = _need(p, "direction", "params.")
    h = normal_growth_probe(family, center, direction, radii, mode=p.get("mode", "auto"),
                            delta=float(p.get("delta", 1e-3)))
    mono = largest_monotone_radius(radii, h)
    summary = {"largest_monotone_radius": mono, "strictly_increasing": bool(np.all(np.diff(h) > 0))}
    return summary, {"growth.csv": _csv(["radius", "h"], zip(radii, h))}


_RUNNERS = {
    "classify": _classify,
    "formula_check": _formula_check,
    "graph_solve": _graph_solve,
    "dirichlet": _dirichlet,
    "flow": _flow,
    "ball_threshold": _ball,
    "normal_growth": _growth,
}
