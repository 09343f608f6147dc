"""Steepest descent of discrete length for closed curves, and the ball experiments.

Vertices move along the discrete mean curvature vector with Armijo
backtracking, so the discrete length never increases.  When the residual is
already small the run switches to a Newton polish on normal offsets; this is
what lets the experiments land on unstable minimal curves (great circles,
equators), which pure descent would only pass by.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .errors import CollapseDetected, InvalidParams, LeftDomain, NoConvergence, SeedOutsideBall
from .geometry import exp_map, geodesic_distances, _orthonormal_basis
from .metric_core import MetricFamily
from .submanifold import (DiscreteImmersion, closed_curve, frames, induced_metric, mean_curvature, mean_curvature_norm,
                          tau_theta, volume, volume_gradient)

VERDICTS = ("converged_minimal", "collapsed", "left_domain", "budget_exhausted")


@dataclass(frozen=True)
class FlowPolicy:
    dt0: float = 1e-2
    dt_max: float = 1.0
    max_steps: int = 4000
    residual_tol: float = 1e-6
    collapse_ratio: float = 1e-2
    collapse_tau_spread: float = 1e-3
    armijo: float = 1e-4
    resample_ratio: float = 1.5
    max_restarts: int = 3
    restart_amplitude: float = 1e-2
    polish: bool = True
    polish_below: float = 5e-2
    polish_every: int = 25
    polish_iters: int = 25

    def __post_init__(self):
        if self.max_steps < 1:
            raise InvalidParams("max_steps must be >= 1")
        if not self.dt0 > 0 or not self.residual_tol > 0:
            raise InvalidParams("dt0 and residual_tol must be positive")


@dataclass
class FlowTrace:
    times: list = field(default_factory=list)
    lengths: list = field(default_factory=list)
    tau_min: list = field(default_factory=list)
    tau_max: list = field(default_factory=list)
    theta_max: list = field(default_factory=list)
    residual_norm: list = field(default_factory=list)
    verdict: str = "budget_exhausted"
    final_immersion: DiscreteImmersion | None = None
    restarts: int = 0
    exit_reason: str = ""
    polished: bool = False
    steps: int = 0

    @property
    def tau_spread(self) -> float:
        return self.tau_max[-1] - self.tau_min[-1]

    def summary(self) -> dict:
        return {
            "verdict": self.verdict,
            "steps": self.steps,
            "restarts": self.restarts,
            "polished": self.polished,
            "exit_reason": self.exit_reason,
            "final_length": self.lengths[-1] if self.lengths else None,
            "final_residual": self.residual_norm[-1] if self.residual_norm else None,
            "tau_spread": self.tau_spread if self.tau_min else None,
            "theta_max": self.theta_max[-1] if self.theta_max else None,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("time,length,tau_min,tau_max,theta_max,residual\n")
        for row in zip(self.times, self.lengths, self.tau_min, self.tau_max, self.theta_max, self.residual_norm):
            buf.write(",".join(format(float(v), ".17g") for v in row) + "\n")
        return buf.getvalue()


# ----------------------------------------------------------------------
# single steps


def _unwrap(imm, family):
    V = imm.vertices
    d = family.wrap(np.diff(V, axis=0))
    return np.vstack([V[:1], V[0] + np.cumsum(d, axis=0)])


def resample(imm: DiscreteImmersion, family: MetricFamily) -> DiscreteImmersion:
    """Redistribute closed-curve vertices uniformly in metric arc length (chart-linear)."""
    if imm.topology != "closed_curve":
        return imm
    V = _unwrap(imm, family)
    closing = family.wrap(imm.vertices[0] - imm.vertices[-1])
    Vc = np.vstack([V, V[-1] + closing])
    d = np.diff(Vc, axis=0)
    mid = Vc[:-1] + 0.5 * d
    G = family.ambient(mid)
    ell = np.sqrt(np.einsum("ni,nij,nj->n", d, G, d))
    s = np.concatenate([[0.0], np.cumsum(ell)])
    target = np.linspace(0.0, s[-1], imm.count, endpoint=False)
    new = np.column_stack([np.interp(target, s, Vc[:, k]) for k in range(Vc.shape[1])])
    return imm.with_vertices(new)


def _wrap_vertices(imm, family):
    V = imm.vertices.copy()
    for k, (lo, hi, per) in enumerate(family.f_domain):
        if per:
            V[:, k + 1] = lo + np.mod(V[:, k + 1] - lo, hi - lo)
    return imm.with_vertices(V)


def _spacing_ratio(imm, family):
    if imm.topology != "closed_curve":
        return 1.0
    V = imm.vertices
    d = family.wrap(np.roll(V, -1, 0) - V)
    mid = V + 0.5 * d
    ell = np.sqrt(np.einsum("ni,nij,nj->n", d, family.ambient(mid), d))
    return float(ell.max() / ell.min())


def _maybe_resample(imm, family, ratio):
    # chart-linear resampling can lengthen a curve slightly in curved
    # metrics; keep the old vertices then, so traces stay monotone
    if _spacing_ratio(imm, family) <= ratio:
        return imm
    cand = resample(imm, family)
    return cand if volume(cand, family) <= volume(imm, family) else imm


def _arc_laplacian(imm, family):
    """Scalar arc-length Laplacian of the curve as a sparse matrix (zero rows at fixed ends)."""
    a, b = imm.edges()
    ell = induced_metric(imm, family)
    N = imm.count
    w = 1.0 / ell
    dual = np.zeros(N)
    np.add.at(dual, a, 0.5 * ell)
    np.add.at(dual, b, 0.5 * ell)
    rows = np.concatenate([a, b, a, b])
    cols = np.concatenate([b, a, a, b])
    vals = np.concatenate([w, w, -w, -w])
    L = sparse.csr_matrix((vals, (rows, cols)), shape=(N, N))
    scale = np.where(imm.interior_mask(), 1.0 / dual, 0.0)
    return sparse.diags(scale) @ L


def _descent(imm, family, dt, armijo, collar=True, implicit=True):
    """One Armijo-backtracked step; returns ``(new_imm, accepted_dt, H)``.

    With ``implicit`` the move is ``dt (I - dt L)^-1 H`` where ``L`` is the
    arc-length Laplacian: the stiff part of the curvature is treated
    implicitly so short edges do not force tiny steps.  Either way a step is
    only accepted when the length drops by the Armijo margin.
    """
    frame = frames(imm, family)
    H = mean_curvature(imm, family, frame)
    H = np.nan_to_num(H)
    grad, dual = volume_gradient(imm, family)
    L0 = float(volume(imm, family))
    Lap = _arc_laplacian(imm, family) if implicit and imm.topology != "grid_patch" else None
    eye = sparse.identity(imm.count, format="csc")
    lam = dt
    while lam > 1e-14:
        if Lap is None:
            step = lam * H
        else:
            step = spsolve((eye - lam * Lap).tocsc(), lam * H)
            step = step.reshape(H.shape)
        slope = float((grad * step).sum())
        Vn = imm.vertices + step
        if slope < 0 and family.in_domain(Vn, collar).all():
            try:
                trial = imm.with_vertices(Vn)
                L1 = volume(trial, family)
            except InvalidParams:
                L1 = math.inf
            if L1 <= L0 + armijo * slope:
                return trial, lam, H
        lam *= 0.5
    return imm, 0.0, H


def flow_step(imm: DiscreteImmersion, family: MetricFamily, dt: float, armijo: float = 1e-4,
              resample_ratio: float = 1.5) -> DiscreteImmersion:
    """Move vertices by ``dt * H`` (halving ``dt`` until Armijo descent), then
    redistribute vertices when edge lengths become uneven."""
    if dt < 0:
        raise InvalidParams("dt must be non-negative")
    if dt == 0:
        return imm
    new, lam, _ = _descent(imm, family, dt, armijo)
    if lam == 0.0:
        if not family.in_domain(imm.vertices + dt * np.nan_to_num(mean_curvature(imm, family)), True).all():
            raise LeftDomain("flow step leaves the chart for every trial step", imm.vertices[0])
        return imm
    return _maybe_resample(new, family, resample_ratio)


# ----------------------------------------------------------------------
# Newton polish on normal offsets


def _curve_colors(n, closed):
    colors = np.arange(n) % 3
    if closed and n % 3:
        # fix the seam so vertices closer than 3 never share a colour
        for i in range(n - (n % 3) - 1, n):
            used = {colors[(i + s) % n] for s in (-2, -1, 1, 2)}
            c = 0
            while c in used:
                c += 1
            colors[i] = c
    return colors


def polish_minimal(imm: DiscreteImmersion, family: MetricFamily, tol: float = 1e-6, max_iter: int = 25,
                   collar: bool = True, max_offset: float = 0.05):
    """Newton iteration on per-vertex normal offsets for ``grad L . N_i = 0``.

    The Jacobian is assembled by coloured forward differences and solved in
    the minimum-norm least-squares sense, so rotational kernels (families of
    great circles) do not stall it.  Returns ``(imm, residual, success)``.
    """
    if imm.topology == "grid_patch":
        raise InvalidParams("polish is implemented for curves")
    closed = imm.topology == "closed_curve"
    n = imm.count
    interior = imm.interior_mask()

    def F_of(V, Nf):
        cur = imm.with_vertices(V)
        grad, _ = volume_gradient(cur, family)
        out = np.einsum("ni,nki->nk", grad, Nf)
        out[~interior] = 0.0
        return out

    def hres(cur):
        return float(np.nanmax(mean_curvature_norm(cur, family)))

    cur = imm
    res = hres(cur)
    colors = _curve_colors(n, closed)
    for _ in range(max_iter):
        if res <= tol:
            return cur, res, True
        _, Nf = frames(cur, family)
        V = cur.vertices
        m = Nf.shape[1]
        F0 = F_of(V, Nf)
        J = np.zeros((n * m, n * m))
        eps = 1e-7
        for c in range(colors.max() + 1):
            members = np.flatnonzero(colors == c)
            for k in range(m):
                Vp = V.copy()
                Vp[members] += eps * Nf[members, k]
                dF = (F_of(Vp, Nf) - F0) / eps
                for v in members:
                    for w in ((v - 1) % n, v, (v + 1) % n) if closed else (max(v - 1, 0), v, min(v + 1, n - 1)):
                        J[w * m:(w + 1) * m, v * m + k] = dF[w]
        keep = np.repeat(interior, m)
        step = np.zeros(n * m)
        step[keep] = np.linalg.lstsq(J[np.ix_(keep, keep)], -F0.ravel()[keep], rcond=1e-10)[0]
        step = step.reshape(n, m)
        # near-kernel directions (rigid motions) can produce huge minimum-norm
        # steps; cap the offset so the iteration stays near its seed
        big = float(np.abs(step).max())
        lam = min(1.0, max_offset / big) if big > 0 else 1.0
        base = float(np.abs(F0).max())
        moved = False
        while lam > 1e-6:
            Vn = V + lam * np.einsum("nk,nki->ni", step, Nf)
            if family.in_domain(Vn, collar).all():
                try:
                    trial = imm.with_vertices(Vn)
                    Ft = F_of(Vn, frames(trial, family)[1])
                except InvalidParams:
                    Ft = None
                if Ft is not None and float(np.abs(Ft).max()) < base:
                    cur = trial
                    moved = True
                    break
            lam *= 0.5
        if not moved:
            break
        res = hres(cur)
    return cur, res, res <= tol


# ----------------------------------------------------------------------
# driver


def _record(trace, imm, family, time, frame=None):
    tau, theta, _, _ = tau_theta(imm, family, frame)
    res = float(np.nanmax(mean_curvature_norm(imm, family))) if imm.interior_mask().any() else 0.0
    trace.times.append(float(time))
    trace.lengths.append(float(volume(imm, family)))
    trace.tau_min.append(float(tau.min()))
    trace.tau_max.append(float(tau.max()))
    trace.theta_max.append(float(theta.max()))
    trace.residual_norm.append(res)
    return res


def perturb_curve(imm: DiscreteImmersion, family: MetricFamily, rng, amplitude: float) -> DiscreteImmersion:
    """Smooth normal perturbation of a curve by random low Fourier modes."""
    _, Nf = frames(imm, family)
    n = imm.count
    s = 2 * math.pi * np.arange(n) / n
    disp = np.zeros_like(imm.vertices)
    for k in range(Nf.shape[1]):
        amp = np.zeros(n)
        for mode in (2, 3, 4):
            amp += rng.uniform(-1, 1) * np.cos(mode * s + rng.uniform(0, 2 * math.pi))
        disp += amplitude / 3.0 * amp[:, None] * Nf[:, k]
    return imm.with_vertices(imm.vertices + disp)


def run_flow(imm: DiscreteImmersion, family: MetricFamily, policy: FlowPolicy | None = None, rng=None) -> FlowTrace:
    """Iterate descent steps until a verdict.

    Verdicts: ``converged_minimal`` (max |H| <= tol), ``collapsed`` (length
    below ``collapse_ratio`` of the initial length with tau spread below
    ``collapse_tau_spread``), ``left_domain`` (the collar was entered more
    than ``max_restarts`` times), ``budget_exhausted``.
    """
    policy = policy or FlowPolicy()
    rng = rng if rng is not None else np.random.default_rng(0)
    seed = imm
    trace = FlowTrace()
    L0 = volume(imm, family)
    dt = policy.dt0
    time = 0.0
    restarts = 0
    since_polish = policy.polish_every
    step = 0
    while True:
        res = _record(trace, imm, family, time)
        if res <= policy.residual_tol:
            trace.verdict = "converged_minimal"
            break
        L = trace.lengths[-1]
        if L < policy.collapse_ratio * L0 and trace.tau_max[-1] - trace.tau_min[-1] < policy.collapse_tau_spread:
            trace.verdict = "collapsed"
            break
        if step >= policy.max_steps:
            trace.verdict = "budget_exhausted"
            break
        if policy.polish and res <= policy.polish_below and since_polish >= policy.polish_every:
            since_polish = 0
            cand, cres, ok = polish_minimal(imm, family, policy.residual_tol, policy.polish_iters)
            if ok:
                imm = cand
                trace.polished = True
                continue
        since_polish += 1
        step += 1
        new, lam, _ = _descent(imm, family, dt, policy.armijo)
        if lam == 0.0:
            # no admissible descent: blocked by the collar or at a critical point
            H = np.nan_to_num(mean_curvature(imm, family))
            if not family.in_domain(imm.vertices + dt * H, True).all():
                if restarts >= policy.max_restarts:
                    trace.verdict = "left_domain"
                    trace.exit_reason = "collar"
                    break
                restarts += 1
                imm = perturb_curve(seed, family, rng, policy.restart_amplitude)
                dt = policy.dt0
                continue
            dt = policy.dt0
            continue
        imm = _wrap_vertices(new, family)
        time += lam
        # the implicit step degenerates into a rigid translation once dt far
        # exceeds the curvature time scale 1 / max|H|^2; keep dt below it
        dt = min(2.0 * lam, policy.dt_max, 1.0 / max(res, 1e-300) ** 2)
        imm = _maybe_resample(imm, family, policy.resample_ratio)
    trace.final_immersion = imm
    trace.restarts = restarts
    trace.steps = step
    return trace


def max_principle_probe(trace_or_imm, tol: float = 1e-9) -> dict:
    """Whether ``tau`` has a strict local maximum over graph neighbours."""
    imm = trace_or_imm.final_immersion if isinstance(trace_or_imm, FlowTrace) else trace_or_imm
    tau = imm.vertices[:, 0]
    n = imm.count
    i = int(np.argmax(tau))
    if imm.topology == "grid_patch":
        nu, nv = imm.shape
        a, b = divmod(i, nv)
        nb = []
        for da, db in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            aa, bb = a + da, b + db
            if imm.periodic[0]:
                aa %= nu
            if imm.periodic[1]:
                bb %= nv
            if 0 <= aa < nu and 0 <= bb < nv:
                nb.append(aa * nv + bb)
    elif imm.topology == "closed_curve":
        nb = [(i - 1) % n, (i + 1) % n]
    else:
        nb = [j for j in (i - 1, i + 1) if 0 <= j < n]
    gap = float(tau[i] - tau[nb].max())
    scale = max(1.0, float(np.abs(tau).max()))
    return {"vertex": i, "tau_max": float(tau[i]), "neighbor_max": float(tau[nb].max()),
            "gap": gap, "strict": bool(gap > tol * scale)}


# ----------------------------------------------------------------------
# seeds


def latitude_seed(family: MetricFamily, level: float, n: int, rng=None, amplitude: float = 0.0,
                  axis: int = 1) -> DiscreteImmersion:
    """Closed curve ``t = level (1 + perturbation)`` winding once around periodic ``axis``.

    The perturbation is a random combination of modes 2-4 with sup norm at
    most ``amplitude``; for ``level = 0`` it is added absolutely.
    """
    lo, hi, per = family.f_domain[axis - 1]
    if not per:
        raise InvalidParams("latitude seeds need a periodic fiber coordinate")
    s = lo + (hi - lo) * np.arange(n) / n
    pert = np.zeros(n)
    if rng is not None and amplitude:
        phase = 2 * math.pi * (s - lo) / (hi - lo)
        for mode in (2, 3, 4):
            pert += rng.uniform(-1, 1) * np.cos(mode * phase + rng.uniform(0, 2 * math.pi))
        pert *= amplitude / 3.0
    V = np.zeros((n, family.dim_total))
    mid = [0.5 * (a + b) if per_ is False and math.isfinite(a) and math.isfinite(b) else a
           for a, b, per_ in family.f_domain]
    for k in range(family.fiber_dim):
        V[:, k + 1] = mid[k]
    V[:, 0] = level * (1.0 + pert) if level != 0 else pert
    V[:, axis] = s
    return closed_curve(V)


def geodesic_circle_seed(family: MetricFamily, center, radius: float, n: int, rng=None, amplitude: float = 0.0,
                         steps: int = 200):
    """Image of a (perturbed) circle of radius ``radius`` under ``exp_center``.

    Returns ``(imm, V)`` where ``V`` are the initial velocities, usable as
    shooting hints for distance checks.
    """
    c = np.asarray(center, dtype=float)
    G0 = family.ambient(c[None, :])[0]
    B = _orthonormal_basis(G0)
    e1, e2 = B[:, 0], B[:, 1]
    psi = 2 * math.pi * np.arange(n) / n
    rho = np.full(n, float(radius))
    if rng is not None and amplitude:
        pert = np.zeros(n)
        for mode in (2, 3, 4):
            pert += rng.uniform(-1, 1) * np.cos(mode * psi + rng.uniform(0, 2 * math.pi))
        rho = radius * (1.0 + amplitude / 3.0 * pert)
    V = rho[:, None] * (np.cos(psi)[:, None] * e1 + np.sin(psi)[:, None] * e2)
    X = exp_map(family, c, V, steps=steps)
    return closed_curve(X), V


# ----------------------------------------------------------------------
# geodesic ball threshold


@dataclass
class BallResult:
    radius: float
    seeds: int
    successes: int
    verdicts: list

    def to_dict(self):
        return {"radius": self.radius, "seeds": self.seeds, "successes": self.successes, "verdicts": self.verdicts}


@dataclass
class ThresholdEstimate:
    threshold: float | None
    normalized: float | None
    diameter: float | None
    rows: list
    seeds_per_radius: int

    def to_dict(self):
        return {"threshold": self.threshold, "normalized": self.normalized, "diameter": self.diameter,
                "seeds_per_radius": self.seeds_per_radius, "rows": [r.to_dict() for r in self.rows]}


def _ball_distance(family, center, X, hints=None):
    if isinstance(center, str):
        return X[:, 0] - family.t_interval[0]
    return geodesic_distances(family, np.asarray(center, dtype=float), X, v_hint=hints, multistarts=0)


def _seeds_for_radius(family, center, R, count, n, rng, amplitude):
    # radii spread over (R/2, 0.98 R]; amplitudes shrink near the rim so every
    # perturbed seed still fits inside the ball
    seeds = []
    for i in range(count):
        rho = R * (0.5 + 0.48 * (i + 1) / count)
        amp = min(amplitude, 0.98 * (R / rho - 1.0))
        if isinstance(center, str):
            imm = latitude_seed(family, family.t_interval[0] + rho, n, rng, amp)
            dist = _ball_distance(family, center, imm.vertices)
        else:
            imm, V = geodesic_circle_seed(family, center, rho, n, rng, amp)
            dist = _ball_distance(family, center, imm.vertices, V)
        if np.any(dist > R):
            raise SeedOutsideBall(f"seed {i} leaves the ball of radius {R}")
        seeds.append(imm)
    return seeds


def ball_threshold_experiment(family: MetricFamily, center, radii, seeds_per_radius: int = 5, n: int = 32,
                              rng_seed: int = 0, amplitude: float = 0.1, policy: FlowPolicy | None = None,
                              refine: float = 0.0, diameter: float | None = None) -> ThresholdEstimate:
    """Smallest radius whose geodesic ball contains a converged minimal curve.

    ``center`` is an ambient point or ``"pole"`` (``t = t_lo`` of a polar
    chart).  Each radius gets ``seeds_per_radius`` perturbed circles (modes
    2-4, amplitude at most ``amplitude`` of the radius).  A run counts when it
    ends ``converged_minimal`` with every vertex inside the ball.  With
    ``refine > 0`` the bracket around the first success is bisected down to
    that width.
    """
    radii = [float(r) for r in radii]
    if any(b <= a for a, b in zip(radii, radii[1:])):
        raise InvalidParams("radii must be increasing")
    policy = policy or FlowPolicy(polish_below=0.5, max_steps=400)

    def trial(R):
        rng = np.random.default_rng([rng_seed, int(round(R * 1e6))])
        seeds = _seeds_for_radius(family, center, R, seeds_per_radius, n, rng, amplitude)
        verdicts = []
        ok = 0
        for sid, seed in enumerate(seeds):
            tr = run_flow(seed, family, policy, np.random.default_rng([rng_seed, sid]))
            verdict = tr.verdict
            if verdict == "converged_minimal":
                d = _ball_distance(family, center, tr.final_immersion.vertices,
                                   None if isinstance(center, str) else _hint(family, center, tr.final_immersion))
                if np.all(d <= R + 1e-9):
                    ok += 1
                else:
                    verdict = "converged_outside_ball"
            verdicts.append(verdict)
        return BallResult(R, len(seeds), ok, verdicts)

    rows = [trial(R) for R in radii]
    first = next((i for i, r in enumerate(rows) if r.successes), None)
    threshold = None
    if first is not None:
        hi = radii[first]
        lo = radii[first - 1] if first > 0 else None
        if refine > 0 and lo is not None:
            while hi - lo > refine:
                mid = 0.5 * (lo + hi)
                row = trial(mid)
                rows.append(row)
                if row.successes:
                    hi = mid
                else:
                    lo = mid
            threshold = 0.5 * (lo + hi)
        else:
            threshold = hi
    rows.sort(key=lambda r: r.radius)
    norm = threshold / diameter if (threshold is not None and diameter) else None
    return ThresholdEstimate(threshold, norm, diameter, rows, seeds_per_radius)


def _hint(family, center, imm):
    # chart chord as a crude initial velocity for distance checks of final curves
    return family.wrap(imm.vertices - np.asarray(center, dtype=float))
