"""Discrete immersed curves and grid patches in a metric family.

Lengths and areas are midpoint-rule discretisations of the ambient metric on
chart difference vectors.  The discrete mean curvature vector is the negative
metric gradient of the discrete volume, divided by ``n`` times the vertex dual
measure, and projected onto the normal space; a vertex configuration is
therefore minimal exactly when it is a critical point of the discrete volume.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateElement, DomainError, FrameFailure, InvalidParams
from .metric_core import MetricFamily, conformal_family

TOPOLOGIES = ("closed_curve", "open_curve", "grid_patch")


@dataclass(frozen=True, eq=False)
class DiscreteImmersion:
    vertices: np.ndarray
    topology: str
    shape: tuple | None = None
    periodic: tuple = (False, False)
    boundary_ids: tuple = field(default=())

    def __post_init__(self):
        V = np.array(self.vertices, dtype=float)
        if V.ndim != 2:
            raise InvalidParams("vertices must be a (count, dim) array")
        object.__setattr__(self, "vertices", V)
        V.setflags(write=False)
        if self.topology not in TOPOLOGIES:
            raise InvalidParams(f"unknown topology {self.topology!r}")
        if not np.isfinite(V).all():
            raise InvalidParams("vertices must be finite")
        if self.topology == "closed_curve" and len(V) < 8:
            raise InvalidParams("closed curves need at least 8 vertices")
        if self.topology == "open_curve" and len(V) < 3:
            raise InvalidParams("open curves need at least 3 vertices")
        if self.topology == "grid_patch":
            if self.shape is None or len(self.shape) != 2:
                raise InvalidParams("grid patches need shape=(nu, nv)")
            nu, nv = self.shape
            if nu < 4 or nv < 4 or nu * nv != len(V):
                raise InvalidParams("grid patch dimensions must be >= 4 and match the vertex count")
            if V.shape[1] != 3:
                raise InvalidParams("grid patches are supported in 3-dimensional ambients only")
        ids = self._boundary()
        object.__setattr__(self, "boundary_ids", ids)
        # consecutive vertices must be distinct
        a, b = self.edges()
        if len(a) and np.min(np.abs(V[b] - V[a]).max(axis=1)) == 0.0:
            raise InvalidParams("consecutive vertices coincide")

    @property
    def count(self) -> int:
        return len(self.vertices)

    @property
    def dim(self) -> int:
        """Intrinsic dimension ``n``."""
        return 2 if self.topology == "grid_patch" else 1

    def _boundary(self) -> tuple:
        N = self.count
        if self.topology == "closed_curve":
            return ()
        if self.topology == "open_curve":
            return (0, N - 1)
        nu, nv = self.shape
        idx = np.arange(N).reshape(nu, nv)
        out = set()
        if not self.periodic[0]:
            out.update(idx[0].tolist())
            out.update(idx[-1].tolist())
        if not self.periodic[1]:
            out.update(idx[:, 0].tolist())
            out.update(idx[:, -1].tolist())
        return tuple(sorted(out))

    def interior_mask(self) -> np.ndarray:
        m = np.ones(self.count, dtype=bool)
        m[list(self.boundary_ids)] = False
        return m

    def edges(self):
        """Vertex index pairs of curve edges (empty for patches)."""
        N = self.count
        if self.topology == "closed_curve":
            a = np.arange(N)
            return a, (a + 1) % N
        if self.topology == "open_curve":
            a = np.arange(N - 1)
            return a, a + 1
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)

    def triangles(self) -> np.ndarray:
        nu, nv = self.shape
        pu, pv = self.periodic
        idx = np.arange(self.count).reshape(nu, nv)
        tris = []
        for i in range(nu if pu else nu - 1):
            for j in range(nv if pv else nv - 1):
                a = idx[i, j]
                b = idx[(i + 1) % nu, j]
                c = idx[(i + 1) % nu, (j + 1) % nv]
                d = idx[i, (j + 1) % nv]
                tris.append((a, b, c))
                tris.append((a, c, d))
        return np.array(tris, dtype=int)

    def with_vertices(self, V) -> "DiscreteImmersion":
        return DiscreteImmersion(np.asarray(V, dtype=float), self.topology, self.shape, self.periodic)


def closed_curve(vertices) -> DiscreteImmersion:
    return DiscreteImmersion(vertices, "closed_curve")


def open_curve(vertices) -> DiscreteImmersion:
    return DiscreteImmersion(vertices, "open_curve")


def grid_patch(vertices, nu: int, nv: int, periodic=(False, False)) -> DiscreteImmersion:
    return DiscreteImmersion(vertices, "grid_patch", (int(nu), int(nv)), tuple(bool(p) for p in periodic))


def _check(imm: DiscreteImmersion, family: MetricFamily):
    if imm.vertices.shape[1] != family.dim_total:
        raise InvalidParams(f"immersion lives in dimension {imm.vertices.shape[1]}, metric in {family.dim_total}")
    family.require_domain(imm.vertices)


# ----------------------------------------------------------------------
# volume and its gradient


def _edge_data(imm, family):
    V = imm.vertices
    a, b = imm.edges()
    d = family.wrap(V[b] - V[a])
    mid = V[a] + 0.5 * d
    G = family.ambient(mid)
    q = np.einsum("ni,nij,nj->n", d, G, d)
    return a, b, d, mid, G, q


def induced_metric(imm: DiscreteImmersion, family: MetricFamily) -> np.ndarray:
    """Edge lengths for curves; ``(T, 2, 2)`` first fundamental forms per triangle for patches."""
    _check(imm, family)
    if imm.topology == "grid_patch":
        A, B, C, _, G = _triangle_frames(imm, family)
        e = np.stack([A, B], axis=1)
        return np.einsum("nai,nij,nbj->nab", e, G, e)
    *_, q = _edge_data(imm, family)
    if np.any(q <= 0):
        raise DegenerateElement("zero-length edge")
    return np.sqrt(q)


def _triangle_frames(imm, family):
    V = imm.vertices
    T = imm.triangles()
    p0 = V[T[:, 0]]
    a = family.wrap(V[T[:, 1]] - p0)
    b = family.wrap(V[T[:, 2]] - p0)
    cen = p0 + (a + b) / 3.0
    G = family.ambient(cen)
    return a, b, cen, T, G


def volume(imm: DiscreteImmersion, family: MetricFamily) -> float:
    """Discrete length (curves) or area (patches)."""
    _check(imm, family)
    if imm.topology == "grid_patch":
        a, b, _, _, G = _triangle_frames(imm, family)
        aa = np.einsum("ni,nij,nj->n", a, G, a)
        bb = np.einsum("ni,nij,nj->n", b, G, b)
        ab = np.einsum("ni,nij,nj->n", a, G, b)
        return float(0.5 * np.sqrt(np.maximum(aa * bb - ab * ab, 0.0)).sum())
    *_, q = _edge_data(imm, family)
    return float(np.sqrt(q).sum())


def volume_gradient(imm: DiscreteImmersion, family: MetricFamily):
    """Coordinate gradient of the discrete volume and the vertex dual measures."""
    _check(imm, family)
    V = imm.vertices
    N, D = V.shape
    grad = np.zeros((N, D))
    dual = np.zeros(N)
    if imm.topology == "grid_patch":
        a, b, cen, T, G = _triangle_frames(imm, family)
        dG = family.ambient_grad(cen)
        Ga, Gb = np.einsum("nij,nj->ni", G, a), np.einsum("nij,nj->ni", G, b)
        aa, bb, ab = (a * Ga).sum(1), (b * Gb).sum(1), (a * Gb).sum(1)
        Q = aa * bb - ab * ab
        if np.any(Q <= 0):
            raise DegenerateElement("a triangle of the patch has collapsed")
        area = 0.5 * np.sqrt(Q)
        dQa = 2 * bb[:, None] * Ga - 2 * ab[:, None] * Gb
        dQb = 2 * aa[:, None] * Gb - 2 * ab[:, None] * Ga
        a_dk_a = np.einsum("ni,nkij,nj->nk", a, dG, a)
        b_dk_b = np.einsum("ni,nkij,nj->nk", b, dG, b)
        a_dk_b = np.einsum("ni,nkij,nj->nk", a, dG, b)
        dQc = a_dk_a * bb[:, None] + aa[:, None] * b_dk_b - 2 * ab[:, None] * a_dk_b
        scale = 1.0 / (4.0 * np.sqrt(Q))[:, None]
        gA = (-dQa - dQb + dQc / 3.0) * scale
        gB = (dQa + dQc / 3.0) * scale
        gC = (dQb + dQc / 3.0) * scale
        for col, gv in zip(range(3), (gA, gB, gC)):
            np.add.at(grad, T[:, col], gv)
            np.add.at(dual, T[:, col], area / 3.0)
        return grad, dual
    a, b, d, mid, G, q = _edge_data(imm, family)
    if np.any(q <= 0):
        raise DegenerateElement("zero-length edge")
    ell = np.sqrt(q)
    dG = family.ambient_grad(mid)
    Gd = np.einsum("nij,nj->ni", G, d)
    metric_part = 0.5 * np.einsum("ni,nkij,nj->nk", d, dG, d)
    gb = (2 * Gd + metric_part) / (2 * ell)[:, None]
    ga = (-2 * Gd + metric_part) / (2 * ell)[:, None]
    np.add.at(grad, a, ga)
    np.add.at(grad, b, gb)
    np.add.at(dual, a, 0.5 * ell)
    np.add.at(dual, b, 0.5 * ell)
    if imm.topology == "open_curve":
        # boundary vertices carry a half edge only; keep the average convention
        dual[0] *= 2.0
        dual[-1] *= 2.0
    return grad, dual


# ----------------------------------------------------------------------
# frames


def tangent_vectors(imm: DiscreteImmersion, family: MetricFamily) -> np.ndarray:
    """Per-vertex chart tangents, shape ``(N, n, D)`` (centred where possible)."""
    V = imm.vertices
    N, D = V.shape
    if imm.topology == "closed_curve":
        T = family.wrap(np.roll(V, -1, axis=0) - np.roll(V, 1, axis=0)) * 0.5
        return T[:, None, :]
    if imm.topology == "open_curve":
        T = np.empty_like(V)
        T[1:-1] = family.wrap(V[2:] - V[:-2]) * 0.5
        T[0] = family.wrap(V[1] - V[0])
        T[-1] = family.wrap(V[-1] - V[-2])
        return T[:, None, :]
    nu, nv = imm.shape
    grid = V.reshape(nu, nv, D)
    out = np.empty((nu, nv, 2, D))
    for axis, per in ((0, imm.periodic[0]), (1, imm.periodic[1])):
        fwd = np.roll(grid, -1, axis=axis)
        bwd = np.roll(grid, 1, axis=axis)
        Tc = family.wrap(fwd - bwd) * 0.5
        if not per:
            sl_first = [slice(None)] * 2
            sl_last = [slice(None)] * 2
            sl_first[axis] = 0
            sl_last[axis] = -1
            Tc[tuple(sl_first)] = family.wrap(fwd - grid)[tuple(sl_first)]
            Tc[tuple(sl_last)] = family.wrap(grid - bwd)[tuple(sl_last)]
        out[:, :, axis] = Tc
    return out.reshape(N, 2, D)


def _gram_schmidt(G, candidates, keep, thresh=1e-8):
    """Metric Gram-Schmidt; returns ``(N, keep, D)`` orthonormal vectors and counts."""
    N, D, _ = G.shape
    basis = np.zeros((N, keep, D))
    count = np.zeros(N, dtype=int)
    rows = np.arange(N)
    for v in candidates:
        w = v.copy()
        for k in range(keep):
            e = basis[:, k]
            w = w - np.einsum("ni,nij,nj->n", w, G, e)[:, None] * e
        nrm = np.sqrt(np.maximum(np.einsum("ni,nij,nj->n", w, G, w), 0.0))
        ref = np.sqrt(np.maximum(np.einsum("ni,nij,nj->n", v, G, v), 1e-300))
        ok = (nrm > thresh * ref) & (count < keep)
        idx = rows[ok]
        basis[idx, count[idx]] = w[ok] / nrm[ok, None]
        count[ok] += 1
    return basis, count


def frames(imm: DiscreteImmersion, family: MetricFamily):
    """Metric-orthonormal tangent and normal frames at every vertex.

    Returns ``(E, Nf)`` of shapes ``(N, n, D)`` and ``(N, D - n, D)``.  The
    normal frame comes from Gram-Schmidt of the coordinate vectors, in
    coordinate order, against the tangent space.
    """
    _check(imm, family)
    V = imm.vertices
    N, D = V.shape
    n = imm.dim
    G = family.ambient(V)
    T = tangent_vectors(imm, family)
    E, cnt = _gram_schmidt(G, [T[:, a] for a in range(n)], n, thresh=1e-10)
    if np.any(cnt < n):
        raise FrameFailure("degenerate tangent space at some vertex")
    full, cnt = _gram_schmidt(G, [E[:, a] for a in range(n)] + list(np.broadcast_to(np.eye(D), (N, D, D)).transpose(1, 0, 2)), D)
    if np.any(cnt < D):
        raise FrameFailure("could not complete an orthonormal normal frame")
    return E, full[:, n:]


def mean_curvature(imm: DiscreteImmersion, family: MetricFamily, frame=None) -> np.ndarray:
    """Discrete mean curvature vectors ``(N, D)``; NaN at boundary vertices."""
    grad, dual = volume_gradient(imm, family)
    V = imm.vertices
    G = family.ambient(V)
    raw = -np.linalg.solve(G, grad[..., None])[..., 0] / (imm.dim * dual)[:, None]
    _, Nf = frame if frame is not None else frames(imm, family)
    comps = np.einsum("ni,nij,nkj->nk", raw, G, Nf)
    H = np.einsum("nk,nkj->nj", comps, Nf)
    H[~imm.interior_mask()] = np.nan
    return H


def mean_curvature_norm(imm: DiscreteImmersion, family: MetricFamily, H=None) -> np.ndarray:
    if H is None:
        H = mean_curvature(imm, family)
    G = family.ambient(imm.vertices)
    return np.sqrt(np.einsum("ni,nij,nj->n", H, G, H))


# ----------------------------------------------------------------------
# tau, theta and the Laplacian formulas


def tau_theta(imm: DiscreteImmersion, family: MetricFamily, frame=None):
    """Return ``(tau, theta, sin2, cos2)`` per vertex.

    ``sin2 = beta |grad tau|^2`` from the discrete tangents, ``cos2`` from the
    normal frame as ``sum_i gbar(N_i, d_t)^2 / beta``.
    """
    _check(imm, family)
    V = imm.vertices
    G = family.ambient(V)
    beta = G[:, 0, 0]
    T = tangent_vectors(imm, family)
    h = np.einsum("nai,nij,nbj->nab", T, G, T)
    dtau = T[:, :, 0]
    grad2 = np.einsum("na,na->n", dtau, np.linalg.solve(h, dtau[..., None])[..., 0])
    sin2 = beta * grad2
    _, Nf = frame if frame is not None else frames(imm, family)
    cos2 = beta * (Nf[:, :, 0] ** 2).sum(axis=1)
    theta = np.arcsin(np.sqrt(np.clip(sin2, 0.0, 1.0)))
    return V[:, 0].copy(), theta, sin2, cos2


@dataclass(frozen=True)
class LaplacianValues:
    laplacian_tau: np.ndarray
    laplacian_tau_full: np.ndarray
    conformal_laplacian_tau: np.ndarray
    mean_curvature_max: float
    nonminimal: bool


def laplacian_tau(imm: DiscreteImmersion, family: MetricFamily, tol_h: float = 1e-6) -> LaplacianValues:
    """Evaluate the closed-form Laplacian of ``tau`` from metric data and the normal frame.

    ``laplacian_tau`` is the value assuming a minimal immersion;
    ``laplacian_tau_full`` adds the mean-curvature term ``(nH)^t`` that the
    minimality assumption drops.  ``nonminimal`` flags ``max |H| > tol_h``.
    """
    frame = frames(imm, family)
    _, Nf = frame
    V = imm.vertices
    G = family.ambient(V)
    t, x = V[:, 0], V[:, 1:]
    beta = G[:, 0, 0]
    g = G[:, 1:, 1:]
    db_t, dg_t = family.time_derivatives(t, x)
    if family.fiber_dim:
        db_x, _ = family.space_derivatives(t, x)
    else:
        db_x = np.zeros((len(t), 0))
    dbeta = np.column_stack([db_t, db_x])
    eta = np.einsum("nii->n", np.linalg.solve(g, dg_t))

    # d_t^T = d_t - sum_i gbar(N_i, d_t) N_i with gbar(N_i, d_t) = beta N_i^t
    gn = beta[:, None] * Nf[:, :, 0]
    dt_vec = np.zeros_like(V)
    dt_vec[:, 0] = 1.0
    dt_top = dt_vec - np.einsum("nk,nkj->nj", gn, Nf)
    sin2 = np.einsum("ni,nij,nj->n", dt_top, G, dt_top) / beta
    NF = Nf[:, :, 1:]
    normal_term = np.einsum("nki,nij,nkj->n", NF, dg_t, NF)
    bracket = sin2 * db_t / beta + eta - normal_term
    lap = -(dbeta * dt_top).sum(axis=1) / beta**2 + bracket / (2 * beta)
    conf = beta ** (-imm.dim / 2.0) / 2.0 * bracket

    H = mean_curvature(imm, family, frame)
    hn = mean_curvature_norm(imm, family, H)
    full = lap + imm.dim * H[:, 0]
    hmax = float(np.nanmax(hn)) if np.isfinite(hn).any() else float("nan")
    return LaplacianValues(lap, full, conf, hmax, bool(not hmax <= tol_h))


def discrete_laplace_beltrami(imm: DiscreteImmersion, family: MetricFamily, f) -> np.ndarray:
    """Laplace-Beltrami of vertex values ``f``: arc-length second differences
    on curves, cotangent weights on patches.  Boundary vertices get NaN."""
    _check(imm, family)
    f = np.asarray(f, dtype=float)
    N = imm.count
    out = np.zeros(N)
    if imm.topology == "grid_patch":
        a, b, cen, T, G = _triangle_frames(imm, family)
        c = b - a
        aa = np.einsum("ni,nij,nj->n", a, G, a)
        bb = np.einsum("ni,nij,nj->n", b, G, b)
        ab = np.einsum("ni,nij,nj->n", a, G, b)
        Q = aa * bb - ab * ab
        if np.any(Q <= 0):
            raise DegenerateElement("a triangle of the patch has collapsed")
        dbl = np.sqrt(Q)
        # cotangents at the three corners
        cot0 = ab / dbl
        cot1 = np.einsum("ni,nij,nj->n", -a, G, c) / dbl
        cot2 = np.einsum("ni,nij,nj->n", -b, G, -c) / dbl
        area = np.zeros(N)
        for col in range(3):
            np.add.at(area, T[:, col], dbl / 6.0)
        for (i, j), cot in (((1, 2), cot0), ((0, 2), cot1), ((0, 1), cot2)):
            vi, vj = T[:, i], T[:, j]
            w = 0.5 * cot
            np.add.at(out, vi, w * (f[vj] - f[vi]))
            np.add.at(out, vj, w * (f[vi] - f[vj]))
        out = out / area
    else:
        ell = induced_metric(imm, family)
        a, b = imm.edges()
        slope = (f[b] - f[a]) / ell
        np.add.at(out, a, slope)
        np.subtract.at(out, b, slope)
        dual = np.zeros(N)
        np.add.at(dual, a, 0.5 * ell)
        np.add.at(dual, b, 0.5 * ell)
        out = out / dual
    out[~imm.interior_mask()] = np.nan
    return out


def eta_and_divY(imm: DiscreteImmersion, family: MetricFamily):
    """``eta = d_t log det g_t`` at the vertices and ``div Y`` for ``Y = eta d_t^T``.

    ``div Y = d eta(d_t^T) + eta d beta(d_t^T) / beta + eta beta Laplacian(tau)``;
    for ``beta = 1`` this is ``sin^2(theta) (d_t eta + cot(theta) u(eta)) + eta Laplacian(tau)``.
    """
    frame = frames(imm, family)
    _, Nf = frame
    V = imm.vertices
    G = family.ambient(V)
    beta = G[:, 0, 0]
    eta = family.eta(V)
    deta = family.eta_gradient(V)
    t, x = V[:, 0], V[:, 1:]
    db_t, _ = family.time_derivatives(t, x)
    db_x = family.space_derivatives(t, x)[0] if family.fiber_dim else np.zeros((len(t), 0))
    dbeta = np.column_stack([db_t, db_x])
    gn = beta[:, None] * Nf[:, :, 0]
    dt_vec = np.zeros_like(V)
    dt_vec[:, 0] = 1.0
    dt_top = dt_vec - np.einsum("nk,nkj->nj", gn, Nf)
    lap = laplacian_tau(imm, family).laplacian_tau_full
    divY = (deta * dt_top).sum(1) + eta * (dbeta * dt_top).sum(1) / beta + eta * beta * lap
    return eta, divY


def tan_theta_probe(imm: DiscreteImmersion, family: MetricFamily) -> dict:
    """Compare the immersion's angle with the ambient bound ``tan(theta) >= 1/sigma``.

    ``sigma`` is the largest constant with ``d_t eta >= sigma |grad^F eta|`` at
    the vertices (infinite when the F-gradient vanishes and ``d_t eta >= 0``).
    """
    V = imm.vertices
    _, theta, _, _ = tau_theta(imm, family)
    deta = family.eta_gradient(V)
    g = family.ambient(V)[:, 1:, 1:]
    dF = deta[:, 1:]
    gradF = np.sqrt(np.maximum(np.einsum("ni,ni->n", dF, np.linalg.solve(g, dF[..., None])[..., 0]), 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(gradF > 1e-14, deta[:, 0] / gradF, np.where(deta[:, 0] >= 0, np.inf, -np.inf))
    sigma = float(np.min(ratio))
    tan_min = float(np.min(np.tan(theta)))
    hypothesis = sigma > 0
    bound = 1.0 / sigma if hypothesis else math.inf
    return {
        "sigma": sigma,
        "tan_theta_min": tan_min,
        "hypothesis_holds": bool(hypothesis),
        "angle_bound_met": bool(hypothesis and tan_min >= bound),
    }


# ----------------------------------------------------------------------
# conformal mean curvature relation


def scalar_mean_curvature(imm: DiscreteImmersion, family: MetricFamily, frame=None) -> np.ndarray:
    """``H = -gbar(Hvec, N_k)`` for every normal ``N_k`` (divergence convention), shape ``(N, D-n)``."""
    frame = frame if frame is not None else frames(imm, family)
    Hv = mean_curvature(imm, family, frame)
    G = family.ambient(imm.vertices)
    return -np.einsum("ni,nij,nkj->nk", Hv, G, frame[1])


def conformal_mc_check(imm: DiscreteImmersion, family: MetricFamily, alpha, alpha_grad=None) -> np.ndarray:
    """Per-vertex residual ``|e^a H~ - H - gbar(grad a, N)|`` (max over normals).

    ``H~`` is the discrete mean curvature of the same vertices for the metric
    ``exp(2a) gbar`` with unit normal ``exp(-a) N``.
    """
    V = imm.vertices
    D = V.shape[1]
    frame = frames(imm, family)
    _, Nf = frame
    H = scalar_mean_curvature(imm, family, frame)
    fam2 = conformal_family(family, alpha, alpha_grad)
    a = np.asarray(alpha(V), dtype=float)
    if alpha_grad is not None:
        da = np.asarray(alpha_grad(V), dtype=float)
    else:
        steps = np.concatenate([[family.t_step], family.x_steps]) * 0.1
        da = np.empty_like(V)
        for k in range(D):
            Vp = V.copy()
            Vm = V.copy()
            Vp[:, k] += steps[k]
            Vm[:, k] -= steps[k]
            da[:, k] = (alpha(Vp) - alpha(Vm)) / (2 * steps[k])
    Hv2 = mean_curvature(imm, fam2)
    G = family.ambient(V)
    # gbar~(Hv2, e^{-a} N) = e^{a} gbar(Hv2, N)
    H2 = -np.exp(a)[:, None] * np.einsum("ni,nij,nkj->nk", Hv2, G, Nf)
    dN = np.einsum("ni,nki->nk", da, Nf)
    res = np.abs(np.exp(a)[:, None] * H2 - H - dN)
    out = res.max(axis=1)
    out[~imm.interior_mask()] = np.nan
    return out


def _orient_normals(imm, G, Nv):
    # the coordinate Gram-Schmidt frame flips sign where a coordinate vector
    # becomes tangent; flip back so neighbouring normals agree
    Nv = Nv.copy()
    if imm.topology == "grid_patch":
        nu, nv = imm.shape
        order = [(i, j) for i in range(nu) for j in range(nv)]
        prev = {(i, j): ((i, j - 1) if j else (i - 1, 0)) for i, j in order[1:]}
        for i, j in order[1:]:
            k, m = i * nv + j, prev[(i, j)][0] * nv + prev[(i, j)][1]
            if Nv[k] @ G[k] @ Nv[m] < 0:
                Nv[k] = -Nv[k]
    else:
        for k in range(1, len(Nv)):
            if Nv[k] @ G[k] @ Nv[k - 1] < 0:
                Nv[k] = -Nv[k]
    return Nv


def tube_extension(imm: DiscreteImmersion, family: MetricFamily, h, width: float | None = None):
    """Ambient function with prescribed normal derivative ``h`` on a hypersurface.

    Builds ``a(X) = sum_i w_i(X) gbar_{p_i}(X - p_i, N_i) h_i / sum_i w_i(X)``
    with Gaussian weights of chart width ``width`` (default two mean edge
    lengths).  Then ``a`` is close to 0 on the hypersurface and
    ``gbar(grad a, N) = h`` up to discretisation error.  The unit normals are
    oriented continuously from vertex 0; returns ``(a, grad_a, normals)``.
    """
    V = imm.vertices
    D = V.shape[1]
    if D - imm.dim != 1:
        raise InvalidParams("tube extension needs a hypersurface (codimension 1)")
    _, Nf = frames(imm, family)
    G = family.ambient(V)
    Nv = _orient_normals(imm, G, Nf[:, 0])
    h = np.broadcast_to(np.asarray(h, dtype=float), (len(V),)).copy()
    if width is None:
        if imm.topology == "grid_patch":
            spacing = np.mean(np.linalg.norm(tangent_vectors(imm, family), axis=2))
        else:
            a, b = imm.edges()
            spacing = np.mean(np.linalg.norm(family.wrap(V[b] - V[a]), axis=1))
        width = 2.0 * spacing
    covec = np.einsum("nij,nj->ni", G, Nv) * h[:, None]
    s2 = float(width) ** 2

    def _terms(X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        diff = family.wrap(X[:, None, :] - V[None, :, :])
        r2 = (diff**2).sum(-1)
        logw = -r2 / (2 * s2)
        logw -= logw.max(axis=1, keepdims=True)
        w = np.exp(logw)
        phi = np.einsum("mni,ni->mn", diff, covec)
        return diff, w, phi

    def alpha(X):
        _, w, phi = _terms(X)
        return (w * phi).sum(1) / w.sum(1)

    def alpha_grad(X):
        diff, w, phi = _terms(X)
        W = w.sum(1)
        val = (w * phi).sum(1) / W
        dw = -w[..., None] * diff / s2
        num = np.einsum("mn,mni->mi", phi, dw) + np.einsum("mn,ni->mi", w, covec)
        return num / W[:, None] - val[:, None] * dw.sum(1) / W[:, None]

    return alpha, alpha_grad, Nv


def slice_shape_check(imm: DiscreteImmersion, family: MetricFamily):
    """For a curve inside a slice ``t = t0``: ``gbar(nabla_T (d_t/sqrt(beta)), T)``
    against ``(d_t g_t)(T, T) / (2 sqrt(beta))`` at every vertex."""
    from .geometry import christoffel_batch

    if imm.topology == "grid_patch":
        raise InvalidParams("slice check is implemented for curves")
    V = imm.vertices
    T = tangent_vectors(imm, family)[:, 0]
    G = family.ambient(V)

    def Z(X):
        out = np.zeros_like(X)
        out[:, 0] = 1.0 / np.sqrt(family.ambient(X)[:, 0, 0])
        return out

    if imm.topology == "closed_curve":
        dZ = (Z(np.roll(V, -1, 0)) - Z(np.roll(V, 1, 0))) * 0.5
    else:
        dZ = np.gradient(Z(V), axis=0)
    Gam = christoffel_batch(family, V)
    cov = dZ + np.einsum("nkij,ni,nj->nk", Gam, T, Z(V))
    lhs = np.einsum("ni,nij,nj->n", cov, G, T)
    _, dg = family.time_derivatives(V[:, 0], V[:, 1:])
    rhs = np.einsum("ni,nij,nj->n", T[:, 1:], dg, T[:, 1:]) / (2 * np.sqrt(G[:, 0, 0]))
    return lhs, rhs


@dataclass(frozen=True)
class VertexGeometry:
    tau: np.ndarray
    theta: np.ndarray
    mean_curvature_vector: np.ndarray
    normal_frame: np.ndarray
    laplacian_tau: np.ndarray
    conformal_laplacian_tau: np.ndarray
    eta: np.ndarray


def vertex_geometry(imm: DiscreteImmersion, family: MetricFamily) -> VertexGeometry:
    frame = frames(imm, family)
    tau, theta, _, _ = tau_theta(imm, family, frame)
    lap = laplacian_tau(imm, family)
    return VertexGeometry(tau, theta, mean_curvature(imm, family, frame), frame[1],
                          lap.laplacian_tau, lap.conformal_laplacian_tau, family.eta(imm.vertices))


# ----------------------------------------------------------------------
# text serialisation


def dumps_immersion(imm: DiscreteImmersion) -> str:
    lines = ["# discrete immersion", f"topology {imm.topology}", f"dim {imm.vertices.shape[1]}", f"count {imm.count}"]
    if imm.topology == "grid_patch":
        lines.append(f"shape {imm.shape[0]} {imm.shape[1]} {int(imm.periodic[0])} {int(imm.periodic[1])}")
    for row in imm.vertices:
        lines.append(" ".join(format(float(v), ".17g") for v in row))
    return "\n".join(lines) + "\n"


def loads_immersion(text: str) -> DiscreteImmersion:
    header = {}
    rows = []
    for raw in io.StringIO(text):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key = line.split()[0]
        if key in ("topology", "dim", "count", "shape"):
            header[key] = line.split()[1:]
        else:
            rows.append([float(v) for v in line.split()])
    try:
        topology = header["topology"][0]
        dim = int(header["dim"][0])
        count = int(header["count"][0])
    except (KeyError, IndexError, ValueError):
        raise InvalidParams("immersion text is missing its topology/dim/count header") from None
    V = np.array(rows, dtype=float).reshape(-1, dim) if rows else np.zeros((0, dim))
    if len(V) != count:
        raise InvalidParams(f"expected {count} vertices, found {len(V)}")
    if topology == "grid_patch":
        nu, nv, pu, pv = (int(s) for s in header["shape"])
        return grid_patch(V, nu, nv, (bool(pu), bool(pv)))
    return DiscreteImmersion(V, topology)


def save_immersion(path, imm: DiscreteImmersion):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_immersion(imm))


def load_immersion(path) -> DiscreteImmersion:
    with open(path, encoding="utf-8") as fh:
        return loads_immersion(fh.read())
