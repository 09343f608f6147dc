"""Christoffel symbols, geodesics and radial growth probes for metric families."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateMetric, DomainError, InvalidParams, LeftDomain, NoConvergence, RadiusTooLarge
from .metric_core import MetricFamily


def _solve_metric(G, rhs):
    """Batched ``G^{-1} rhs``; closed form for 2x2 and 3x3 blocks (hot path of RK4)."""
    D = G.shape[-1]
    if D == 2:
        a, b, c, d = G[:, 0, 0], G[:, 0, 1], G[:, 1, 0], G[:, 1, 1]
        det = a * d - b * c
        if np.any(det == 0):
            raise DegenerateMetric("ambient metric is singular")
        inv = np.stack([np.stack([d, -b], -1), np.stack([-c, a], -1)], -2) / det[:, None, None]
        return inv @ rhs
    if D == 3:
        inv_t = np.stack([np.cross(G[:, 1], G[:, 2]), np.cross(G[:, 2], G[:, 0]), np.cross(G[:, 0], G[:, 1])], 1)
        det = np.einsum("ni,ni->n", G[:, 0], inv_t[:, 0])
        if np.any(det == 0):
            raise DegenerateMetric("ambient metric is singular")
        return np.swapaxes(inv_t, -1, -2) @ rhs / det[:, None, None]
    try:
        return np.linalg.solve(G, rhs)
    except np.linalg.LinAlgError:
        raise DegenerateMetric("ambient metric is singular") from None


def christoffel_batch(family: MetricFamily, X) -> np.ndarray:
    """Symbols ``Gamma[n, k, i, j]`` at a stack of ambient points."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    G = family.ambient(X)
    dG = family.ambient_grad(X)
    first = 0.5 * (np.einsum("nilj->nlij", dG) + np.einsum("njli->nlij", dG) - dG)
    n, D = X.shape
    return _solve_metric(G, first.reshape(n, D, D * D)).reshape(n, D, D, D)


def christoffel(family: MetricFamily, t: float, x) -> np.ndarray:
    """Second-kind symbols ``Gamma[k, i, j]`` at one point (index 0 is ``t``)."""
    X = np.concatenate([[float(t)], np.atleast_1d(np.asarray(x, dtype=float))])[None, :]
    family.require_domain(X)
    G = family.ambient(X)[0]
    try:
        np.linalg.cholesky(G)
    except np.linalg.LinAlgError:
        raise DegenerateMetric(f"metric is not positive definite at {X[0].tolist()}") from None
    return christoffel_batch(family, X)[0]


def geodesic_acceleration(family: MetricFamily, X, V) -> np.ndarray:
    """``-Gamma^k_ij v^i v^j`` for stacks of positions and velocities."""
    G = family.ambient(X)
    dG = family.ambient_grad(X)
    n, D = V.shape
    VV = (V[:, :, None] * V[:, None, :]).reshape(n, D * D, 1)
    A = np.swapaxes(dG, 1, 2).reshape(n, D, D * D) @ VV
    B = dG.reshape(n, D, D * D) @ VV
    return -_solve_metric(G, A - 0.5 * B)[..., 0]


def speed(family: MetricFamily, X, V) -> np.ndarray:
    G = family.ambient(X)
    return np.sqrt(np.einsum("ni,nij,nj->n", V, G, V))


def integrate_geodesics(family: MetricFamily, X0, V0, steps: int, record: bool = False,
                        collar: bool = True, on_exit: str = "raise"):
    """Fixed-step RK4 for many geodesics over unit parameter time.

    Returns final ``(X, V)``; with ``record`` the full ``(steps+1, M, D)``
    histories are returned instead.  With ``on_exit="nan"`` trajectories that
    leave the chart are frozen and reported as NaN instead of raising.
    """
    X = np.array(np.atleast_2d(X0), dtype=float)
    V = np.array(np.atleast_2d(V0), dtype=float)
    h = 1.0 / steps
    alive = family.in_domain(X, collar)
    if not alive.all() and on_exit == "raise":
        raise DomainError(f"geodesic start {X[~alive][0].tolist()} outside the chart")
    hist_x = [X.copy()] if record else None
    hist_v = [V.copy()] if record else None

    def rhs(Y, W, mask):
        acc = np.zeros_like(W)
        if mask.any():
            acc[mask] = geodesic_acceleration(family, Y[mask], W[mask])
        return acc

    for _ in range(steps):
        m = alive
        k1x, k1v = V, rhs(X, V, m)
        Y = X + 0.5 * h * k1x
        m = m & family.in_domain(Y, False)
        k2x, k2v = V + 0.5 * h * k1v, rhs(Y, V + 0.5 * h * k1v, m)
        Y = X + 0.5 * h * k2x
        m = m & family.in_domain(Y, False)
        k3x, k3v = V + 0.5 * h * k2v, rhs(Y, V + 0.5 * h * k2v, m)
        Y = X + h * k3x
        m = m & family.in_domain(Y, False)
        k4x, k4v = V + h * k3v, rhs(Y, V + h * k3v, m)
        Xn = X + h / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
        Vn = V + h / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
        m = m & family.in_domain(Xn, collar) & np.isfinite(Vn).all(axis=1)
        lost = alive & ~m
        if lost.any():
            if on_exit == "raise":
                last = X[lost][0]
                raise LeftDomain(f"geodesic left the chart of {family.name} near {last.tolist()}", last)
            Xn[lost] = np.nan
            Vn[lost] = np.nan
        X = np.where(m[:, None], Xn, X if on_exit == "raise" else np.nan)
        V = np.where(m[:, None], Vn, V if on_exit == "raise" else np.nan)
        alive = m
        if record:
            hist_x.append(X.copy())
            hist_v.append(V.copy())
    if record:
        return np.array(hist_x), np.array(hist_v)
    return X, V


@dataclass(frozen=True)
class GeodesicPath:
    points: np.ndarray
    velocities: np.ndarray
    arc_params: np.ndarray
    energy: float

    def speed_drift(self, family: MetricFamily) -> float:
        s = speed(family, self.points, self.velocities)
        return float(np.max(np.abs(s - s[0])) / s[0])


def geodesic_shoot(family: MetricFamily, start, velocity, length: float, steps: int = 1000,
                   collar: bool = True) -> GeodesicPath:
    """Integrate the unit-speed geodesic through ``start`` in direction ``velocity``."""
    if steps < 16:
        raise InvalidParams("geodesic_shoot needs at least 16 steps")
    if not length > 0:
        raise InvalidParams("length must be positive")
    X0 = np.asarray(start, dtype=float)[None, :]
    V0 = np.asarray(velocity, dtype=float)[None, :]
    family.require_domain(X0, collar)
    s0 = speed(family, X0, V0)[0]
    if not s0 > 0:
        raise InvalidParams("initial velocity must be non-zero")
    V0 = V0 / s0
    xs, vs = integrate_geodesics(family, X0, V0 * length, steps, record=True, collar=collar)
    points = xs[:, 0, :]
    velocities = vs[:, 0, :] / length
    arc = np.linspace(0.0, length, steps + 1)
    energy = 0.5 * float(np.mean(speed(family, points, velocities) ** 2)) * length
    return GeodesicPath(points, velocities, arc, energy)


def exp_map(family: MetricFamily, base, V, steps: int = 200, collar: bool = True) -> np.ndarray:
    """Endpoints ``exp_base(v)`` for a stack of tangent vectors ``V`` at ``base``."""
    V = np.atleast_2d(np.asarray(V, dtype=float))
    X0 = np.broadcast_to(np.asarray(base, dtype=float), V.shape).copy()
    X, _ = integrate_geodesics(family, X0, V, steps, collar=collar)
    return X


def _directions(D: int, count: int) -> np.ndarray:
    # deterministic, roughly uniform unit directions
    if D == 1:
        return np.array([[1.0], [-1.0]])[:count]
    if D == 2:
        a = 2 * math.pi * np.arange(count) / count
        return np.column_stack([np.cos(a), np.sin(a)])
    rng = np.random.default_rng(12345)
    dirs = rng.standard_normal((count, D))
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


def _orthonormal_basis(G: np.ndarray) -> np.ndarray:
    """Columns form a G-orthonormal basis (inverse transpose Cholesky factor)."""
    L = np.linalg.cholesky(G)
    return np.linalg.inv(L).T


def _newton_shoot(family, p, Q, V, steps, tol, max_iter, collar):
    """Batched damped Newton on ``exp_p(v) = q``; returns (V, converged mask)."""
    M, D = Q.shape
    P = np.broadcast_to(p, (M, D)).copy()
    eps = 1e-7

    def residual(Vs, Ps, Qs):
        X, _ = integrate_geodesics(family, Ps, Vs, steps, collar=collar, on_exit="nan")
        return family.wrap(X - Qs)

    scale = np.maximum(1.0, np.linalg.norm(Q - P, axis=1))
    F = residual(V, P, Q)
    nrm = np.linalg.norm(F, axis=1)
    done = nrm <= tol * scale
    for _ in range(max_iter):
        act = np.flatnonzero(~done & np.isfinite(nrm))
        if act.size == 0:
            break
        Va, Pa, Qa, Fa = V[act], P[act], Q[act], F[act]
        hs = eps * np.maximum(1.0, np.linalg.norm(Va, axis=1))
        stackV = np.concatenate([Va + hs[:, None] * np.eye(D)[k] for k in range(D)])
        stackP = np.tile(Pa, (D, 1))
        stackQ = np.tile(Qa, (D, 1))
        Fp = residual(stackV, stackP, stackQ).reshape(D, act.size, D)
        J = np.transpose((Fp - Fa[None]) / hs[None, :, None], (1, 2, 0))
        ok = np.isfinite(J).all(axis=(1, 2))
        step = np.zeros_like(Va)
        if ok.any():
            step[ok] = -np.einsum("nij,nj->ni", np.linalg.pinv(J[ok]), Fa[ok])
        newF = np.full_like(Fa, np.nan)
        newV = Va.copy()
        base = np.linalg.norm(Fa, axis=1)
        # full step first, then all halvings of the failures in one batch
        idx = np.flatnonzero(ok)
        for lams in (np.array([1.0]), 0.5 ** np.arange(1, 11)):
            if idx.size == 0:
                break
            L = lams.size
            trialV = (Va[idx][None] + lams[:, None, None] * step[idx][None]).reshape(L * idx.size, D)
            trialF = residual(trialV, np.tile(Pa[idx], (L, 1)), np.tile(Qa[idx], (L, 1)))
            tn = np.linalg.norm(trialF, axis=1).reshape(L, idx.size)
            good = np.isfinite(tn) & (tn < base[idx][None])
            first = np.argmax(good, axis=0)
            hit = good.any(axis=0)
            pick = first[hit] * idx.size + np.flatnonzero(hit)
            newV[idx[hit]] = trialV[pick]
            newF[idx[hit]] = trialF[pick]
            idx = idx[~hit]
        stalled = ~np.isfinite(newF).all(axis=1)
        V[act] = newV
        F[act] = np.where(stalled[:, None], F[act], newF)
        nrm[act] = np.where(stalled, np.nan, np.linalg.norm(F[act], axis=1))
        done = done | (np.nan_to_num(nrm, nan=np.inf) <= tol * scale)
    return V, done


def geodesic_distances(family: MetricFamily, p, Q, v_hint=None, steps: int = 128, multistarts: int = 8,
                       tol: float = 1e-10, max_iter: int = 30, collar: bool = True,
                       continuation: int = 8) -> np.ndarray:
    """Batched two-point shooting distances from ``p`` to every row of ``Q``.

    Each target is first attempted from the chart chord (or ``v_hint``); the
    multistart fan on the unit sphere of directions is used for all targets
    and the shortest converged solution wins.
    """
    p = np.asarray(p, dtype=float)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    M, D = Q.shape
    family.require_domain(p[None, :], collar)
    G0 = family.ambient(p[None, :])[0]
    chord = family.wrap(Q - p)
    chord_len = np.sqrt(np.einsum("ni,ij,nj->n", chord, G0, chord))
    best = np.full(M, np.inf)
    zero = chord_len == 0
    best[zero] = 0.0

    # direct Newton from the chord (or hinted) velocity; targets it misses are
    # retried by continuation along the chart chord
    V = chord.copy() if v_hint is None else np.array(np.atleast_2d(v_hint), dtype=float)
    V, ok = _newton_shoot(family, p, Q, V, steps, tol, max_iter, collar)
    miss = np.flatnonzero(~ok)
    if v_hint is None and miss.size:
        sub = chord[miss]
        W = sub / continuation
        for s_k in np.linspace(1.0 / continuation, 1.0, continuation):
            W, sub_ok = _newton_shoot(family, p, p + s_k * sub, W, steps, tol, max_iter, collar)
            W = W * ((s_k + 1.0 / continuation) / s_k)
        W = W * (s_k / (s_k + 1.0 / continuation))
        V[miss], ok[miss] = W, sub_ok
    cands = [np.where(ok, np.sqrt(np.einsum("ni,ij,nj->n", V, G0, V)), np.inf)]
    if multistarts:
        B = _orthonormal_basis(G0)
        dirs = _directions(D, multistarts) @ B.T
        S = len(dirs)
        V0 = np.concatenate([chord_len[:, None] * u[None, :] for u in dirs])
        V, ok = _newton_shoot(family, p, np.tile(Q, (S, 1)), V0, steps, tol, max_iter, collar)
        lens = np.sqrt(np.einsum("ni,ij,nj->n", V, G0, V))
        cands.extend(np.where(ok, lens, np.inf).reshape(S, M))
    found = np.min(cands, axis=0)
    best = np.where(zero, 0.0, found)
    if not np.isfinite(best).all():
        bad = int(np.flatnonzero(~np.isfinite(best))[0])
        raise NoConvergence(f"two-point shooting failed for target {Q[bad].tolist()} after {multistarts + 1} starts")
    return best


def geodesic_distance(family: MetricFamily, p, q, **kwargs) -> float:
    """Length of the shortest converged shooting solution from ``p`` to ``q``."""
    return float(geodesic_distances(family, p, np.asarray(q, dtype=float)[None, :], **kwargs)[0])


def _unit(G, v):
    return v / math.sqrt(float(v @ G @ v))


def normal_growth_probe(family: MetricFamily, center, direction, radii, mode: str = "auto",
                        delta: float = 1e-3, steps_per_unit: int = 200, max_separation: float = 0.5) -> np.ndarray:
    """Angular metric coefficient ``h_r(u, u)`` along a radial geodesic.

    ``center`` is an ambient point, or ``"pole"`` for the removed point
    ``t = t_lo`` of a polar chart.  In point mode ``direction`` is the radial
    direction ``v`` at the center and ``u`` is the first metric-orthonormal
    complement; two geodesics at angle ``+-delta`` around ``v`` are shot and
    ``h_r = (|separation| / (2 sin delta))**2``.  In pole mode ``direction``
    is a fiber vector ``u`` and radial t-lines through ``x +- delta u`` are
    differenced, giving ``h_r = g_r(u, u)`` for unit ``u``.
    """
    radii = np.asarray(radii, dtype=float)
    if radii.ndim != 1 or radii.size == 0 or np.any(radii <= 0) or np.any(np.diff(radii) <= 0):
        raise InvalidParams("radii must be positive and strictly increasing")
    if mode == "auto":
        mode = "pole" if isinstance(center, str) else "point"
    steps = max(16, int(math.ceil(radii[-1] * steps_per_unit)))
    D = family.dim_total

    if mode == "pole":
        lo = family.t_interval[0]
        start_t = lo + max(family.collar[0], 1e-12)
        x0 = np.zeros(family.fiber_dim) if isinstance(center, str) else np.asarray(center, dtype=float)[1:]
        u = np.asarray(direction, dtype=float)
        if u.shape != (family.fiber_dim,):
            raise InvalidParams("pole mode needs a fiber direction vector")
        u = u / np.linalg.norm(u)
        if np.any(lo + radii <= start_t):
            raise InvalidParams("radii must exceed the collar width")
        rows = []
        for sgn in (1.0, -1.0):
            X0 = np.concatenate([[start_t], x0 + sgn * delta * u])
            X0 = np.tile(X0, (radii.size, 1))
            V0 = np.zeros((radii.size, D))
            V0[:, 0] = lo + radii - start_t
            rows.append((X0, V0))
        X0 = np.concatenate([rows[0][0], rows[1][0]])
        V0 = np.concatenate([rows[0][1], rows[1][1]])
        # radial t-lines: normalise to unit ambient speed
        V0[:, 0] /= np.sqrt(family.ambient(X0)[:, 0, 0])
        ends, _ = integrate_geodesics(family, X0, V0, steps, collar=False)
        a, b = ends[: radii.size], ends[radii.size:]
        denom = 2.0 * delta
    elif mode == "point":
        c = np.asarray(center, dtype=float)
        family.require_domain(c[None, :], True)
        G0 = family.ambient(c[None, :])[0]
        v = _unit(G0, np.asarray(direction, dtype=float))
        w = None
        for k in range(D):
            e = np.zeros(D)
            e[k] = 1.0
            e = e - (e @ G0 @ v) * v
            if math.sqrt(abs(e @ G0 @ e)) > 1e-6:
                w = _unit(G0, e)
                break
        if w is None:
            raise InvalidParams("could not build a direction orthogonal to the radial one")
        dirs = np.array([math.cos(delta) * v + math.sin(delta) * w, math.cos(delta) * v - math.sin(delta) * w])
        V0 = np.concatenate([radii[:, None] * dirs[0], radii[:, None] * dirs[1]])
        X0 = np.tile(c, (V0.shape[0], 1))
        ends, _ = integrate_geodesics(family, X0, V0, steps, collar=False)
        a, b = ends[: radii.size], ends[radii.size:]
        denom = 2.0 * math.sin(delta)
    else:
        raise InvalidParams(f"unknown probe mode {mode!r}")

    diff = family.wrap(a - b)
    if np.any(np.linalg.norm(diff, axis=1) > max_separation):
        raise RadiusTooLarge("endpoint separation too large for stable differencing; reduce the radius")
    mid = b + 0.5 * diff
    Gm = family.ambient(mid)
    h = np.einsum("ni,nij,nj->n", diff, Gm, diff) / denom**2
    if np.any(h < 1e-20):
        raise RadiusTooLarge("radial geodesics refocus (conjugate point) within the probed radii")
    return h


def largest_monotone_radius(radii, h) -> float:
    """Largest probed radius up to which ``h`` is strictly increasing (0 if none)."""
    radii = np.asarray(radii, dtype=float)
    h = np.asarray(h, dtype=float)
    best = radii[0] if h[0] > 0 else 0.0
    for k in range(1, len(h)):
        if h[k] > h[k - 1]:
            best = radii[k]
        else:
            break
    return float(best)
