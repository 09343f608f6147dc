"""Minimal-graph operator for ``t = u(x)`` in ``beta dt^2 + g_t`` and its solvers.

The operator is the Euler-Lagrange expression of the graph area
``A(u) = int rho W dx`` with ``rho = sqrt(beta det g)`` and
``W = sqrt(1/beta + Du^T g^{-1} Du)``, divided by ``rho``:

    R(u) = (1/rho) [ d_t(rho W) - D_i( rho (g^{-1} Du)^i / W ) ]

evaluated at ``(u(x), x)``.  ``R`` equals ``n H`` for the upward normal
(positive ``d_t`` component), so constants in a warped product give
``R = n f'(c) / f(c)``.
"""

from __future__ import annotations

import io
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DomainError, DomainEscape, InvalidParams, SingularJacobian, StructureMismatch
from .functions import make_function
from .metric_core import MetricFamily

VERDICTS = ("constant_solution", "nonconstant_solution", "no_convergence", "residual_floor")


@dataclass(frozen=True)
class Grid:
    """Tensor grid on an F-box: one ``(lo, hi, n, periodic)`` tuple per axis.

    Periodic axes hold ``n`` nodes ``lo + i (hi - lo) / n`` (no seam node);
    Dirichlet axes hold ``n`` nodes from ``lo`` to ``hi`` inclusive.
    """

    axes: tuple

    def __post_init__(self):
        axes = tuple((float(lo), float(hi), int(n), bool(p)) for lo, hi, n, p in self.axes)
        if not 1 <= len(axes) <= 2:
            raise InvalidParams("grids are 1D or 2D")
        for lo, hi, n, p in axes:
            if not hi > lo or n < (4 if p else 3):
                raise InvalidParams("each grid axis needs hi > lo and enough nodes")
        object.__setattr__(self, "axes", axes)

    @classmethod
    def periodic(cls, n, length=2 * math.pi, dim=1, lo=0.0):
        return cls(tuple((lo, lo + length, n, True) for _ in range(dim)))

    @classmethod
    def dirichlet(cls, n, lo=-1.0, hi=1.0, dim=1):
        return cls(tuple((lo, hi, n, False) for _ in range(dim)))

    @property
    def ndim(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> tuple:
        return tuple(a[2] for a in self.axes)

    @property
    def spacing(self) -> np.ndarray:
        return np.array([(hi - lo) / (n if p else n - 1) for lo, hi, n, p in self.axes])

    @property
    def periods(self) -> np.ndarray:
        return np.array([(hi - lo) if p else 0.0 for lo, hi, n, p in self.axes])

    def coords(self) -> list:
        out = []
        for (lo, hi, n, p), h in zip(self.axes, self.spacing):
            out.append(lo + h * np.arange(n))
        return out

    def mesh(self) -> list:
        return np.meshgrid(*self.coords(), indexing="ij")

    def points(self) -> np.ndarray:
        return np.column_stack([m.ravel() for m in self.mesh()])

    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        for k, (_, _, n, p) in enumerate(self.axes):
            if not p:
                sl = [slice(None)] * self.ndim
                sl[k] = 0
                mask[tuple(sl)] = True
                sl[k] = n - 1
                mask[tuple(sl)] = True
        return mask

    def to_dict(self) -> dict:
        return {"axes": [list(a) for a in self.axes]}


@dataclass(frozen=True, eq=False)
class GraphField:
    """Values of ``u`` on a grid; ``jumps[k]`` is ``u(x + P_k e_k) - u(x)`` on periodic axes."""

    grid: Grid
    values: np.ndarray
    jumps: tuple = ()
    family_id: str = ""

    def __post_init__(self):
        vals = np.array(self.values, dtype=float).reshape(self.grid.shape)
        if not np.isfinite(vals).all():
            raise InvalidParams("graph values must be finite")
        object.__setattr__(self, "values", vals)
        jumps = tuple(float(j) for j in self.jumps) if self.jumps else (0.0,) * self.grid.ndim
        if len(jumps) != self.grid.ndim:
            raise InvalidParams("one jump per grid axis")
        for j, (_, _, _, p) in zip(jumps, self.grid.axes):
            if j and not p:
                raise InvalidParams("jumps are only meaningful on periodic axes")
        object.__setattr__(self, "jumps", jumps)

    def with_values(self, values) -> "GraphField":
        return GraphField(self.grid, values, self.jumps, self.family_id)

    @property
    def u_range(self) -> tuple:
        return float(self.values.min()), float(self.values.max())


def field_from_function(grid: Grid, func, jumps=(), family_id="") -> GraphField:
    """Sample ``func(*coords)`` on the grid nodes."""
    return GraphField(grid, func(*grid.mesh()), jumps, family_id)


# ----------------------------------------------------------------------
# discrete operator


def _shift(u, axis, step, jump):
    """``u`` at the neighbour ``i + step`` along ``axis`` including the periodic jump."""
    out = np.roll(u, -step, axis=axis)
    if jump:
        n = u.shape[axis]
        sl = [slice(None)] * u.ndim
        if step > 0:
            sl[axis] = slice(n - step, n)
            out[tuple(sl)] += jump
        else:
            sl[axis] = slice(0, -step)
            out[tuple(sl)] -= jump
    return out


def _centered(u, grid, jumps):
    h = grid.spacing
    return [(_shift(u, k, 1, jumps[k]) - _shift(u, k, -1, jumps[k])) / (2 * h[k]) for k in range(grid.ndim)]


def _metric_at(family, t, x):
    b, g = family.evaluate(t, x)
    return b, g


def _flux(family, t, x, Du):
    """``rho (g^{-1} Du) / W`` at the given points; Du has shape ``(M, d)``."""
    b, g = _metric_at(family, t, x)
    gi_du = np.linalg.solve(g, Du[..., None])[..., 0]
    q = (Du * gi_du).sum(1)
    W = np.sqrt(1.0 / b + q)
    rho = np.sqrt(b * np.linalg.det(g))
    return rho[:, None] * gi_du / W[:, None]


def _node_term(family, t, x, Du):
    """``d_t(rho W) / rho`` and ``rho`` at nodes."""
    b, g = _metric_at(family, t, x)
    db, dg = family.time_derivatives(t, x)
    gi_du = np.linalg.solve(g, Du[..., None])[..., 0]
    q = (Du * gi_du).sum(1)
    W = np.sqrt(1.0 / b + q)
    eta = np.einsum("nii->n", np.linalg.solve(g, dg))
    dlogrho = 0.5 * (db / b + eta)
    dW = (-db / b**2 - np.einsum("ni,nij,nj->n", gi_du, dg, gi_du)) / (2 * W)
    rho = np.sqrt(b * np.linalg.det(g))
    return W * dlogrho + dW, rho


def _graph_points(field: GraphField):
    pts = field.grid.points()
    return np.column_stack([field.values.ravel(), pts])


def _check_field(family, field):
    if field.grid.ndim != family.fiber_dim:
        raise StructureMismatch(f"grid is {field.grid.ndim}D but the fiber of {family.name} is {family.fiber_dim}D")
    X = _graph_points(field)
    if not family.in_domain(X).all():
        raise DomainError("graph leaves the ambient domain")


def _residual_raw(family: MetricFamily, grid: Grid, u: np.ndarray, jumps) -> np.ndarray:
    d = grid.ndim
    h = grid.spacing
    mesh = grid.mesh()
    xs = np.column_stack([m.ravel() for m in mesh])
    Dn = _centered(u, grid, jumps)
    node, rho = _node_term(family, u.ravel(), xs, np.column_stack([D.ravel() for D in Dn]))
    div = np.zeros(grid.shape)
    for k in range(d):
        up = _shift(u, k, 1, jumps[k])
        uf = 0.5 * (u + up)
        Df = []
        for m in range(d):
            if m == k:
                Df.append((up - u) / h[k])
            else:
                Df.append(0.5 * (Dn[m] + np.roll(Dn[m], -1, axis=k)))
        xf = xs.copy()
        xf[:, k] += 0.5 * h[k]
        flux = _flux(family, uf.ravel(), xf, np.column_stack([D.ravel() for D in Df]))[:, k].reshape(grid.shape)
        div += (flux - np.roll(flux, 1, axis=k)) / h[k]
    R = node.reshape(grid.shape) - div / rho.reshape(grid.shape)
    R[grid.boundary_mask()] = 0.0
    return R


def graph_mean_curvature(family: MetricFamily, field: GraphField) -> np.ndarray:
    """``n H`` of the graph at every node (0 on Dirichlet boundary nodes)."""
    _check_field(family, field)
    return _residual_raw(family, field.grid, field.values, field.jumps)


def graph_normal(family: MetricFamily, field: GraphField, node) -> np.ndarray:
    """Unit normal ``(d_t / beta - grad^F u) / W`` at a node, as an ambient vector.

    ``grad^F u = g^{-1} Du`` from centred differences.
    """
    _check_field(family, field)
    grid = field.grid
    idx = np.unravel_index(node, grid.shape) if np.isscalar(node) else tuple(node)
    if grid.boundary_mask()[idx]:
        raise DomainError("graph_normal needs an interior or periodic node")
    Dn = _centered(field.values, grid, field.jumps)
    du = np.array([D[idx] for D in Dn])
    x = np.array([c[i] for c, i in zip(grid.coords(), idx)])
    t = np.array([field.values[idx]])
    b, g = family.evaluate(t, x[None, :])
    grad = np.linalg.solve(g[0], du)
    W = math.sqrt(1.0 / b[0] + du @ grad)
    return np.concatenate([[1.0 / b[0]], -grad]) / W


# ----------------------------------------------------------------------
# closed forms, evaluated spectrally


def _spectral_d(v, grid, axis):
    lo, hi, n, p = grid.axes[axis]
    if not p:
        raise StructureMismatch("closed-form cross-check needs periodic axes")
    k = np.fft.fftfreq(n, d=(hi - lo) / n) * 2 * math.pi
    if n % 2 == 0:
        k[n // 2] = 0.0
    shape = [1] * v.ndim
    shape[axis] = n
    return np.real(np.fft.ifft(1j * k.reshape(shape) * np.fft.fft(v, axis=axis), axis=axis))


def _spectral_grad(field):
    grid = field.grid
    u = field.values
    out = []
    for k in range(grid.ndim):
        P = grid.periods[k]
        ramp = field.jumps[k] / P
        mesh_k = grid.mesh()[k] - grid.axes[k][0]
        periodic_part = u - ramp * mesh_k
        out.append(_spectral_d(periodic_part, grid, k) + ramp)
    return out


def _spectral_div(vecs, grid):
    return sum(_spectral_d(v, grid, k) for k, v in enumerate(vecs))


def _require_model(family, names):
    model = family.spec.get("model")
    if model not in names:
        raise StructureMismatch(f"{family.name} does not have the {'/'.join(names)} structure")


def _is_euclidean(family, field):
    X = _graph_points(field)
    t, x = X[:, 0], X[:, 1:]
    b, g = family.evaluate(t, x)
    db, dg = family.time_derivatives(t, x)
    dbx, dgx = family.space_derivatives(t, x)
    eye = np.eye(family.fiber_dim)
    return (np.allclose(b, 1.0, atol=1e-14) and np.allclose(g, eye, atol=1e-14)
            and np.allclose(db, 0, atol=1e-14) and np.allclose(dg, 0, atol=1e-14)
            and np.allclose(dbx, 0, atol=1e-14) and np.allclose(dgx, 0, atol=1e-14))


def closed_form_residual(family: MetricFamily, field: GraphField, which: str) -> np.ndarray:
    """Evaluate a specialised minimal-graph equation, as ``n H``, by spectral differentiation.

    ``euclidean``: ``-div(Du / sqrt(1 + |Du|^2))``.
    ``warped``: ``f'/sqrt(S) (n - |Du|^2/f^2) - div(Du / (f sqrt(S)))``, ``S = f^2 + |Du|^2``.
    ``killing``: ``-[div(h Du / s) + Du.Dh / s]``, ``s = sqrt(1 + h^2 |Du|^2)``.
    ``doubly_warped``: ``psi [L - sum_j (f_j'/f_j) |D_j u|^2 / f_j^2] - sum_j d_j(psi f_j^-2 d_j u)``
    with ``psi = (1 + sum_j |D_j u|^2 / f_j^2)^(-1/2)`` and ``L = sum_j n_j f_j'/f_j``.
    ``doubly_warped_literal`` transcribes the published finite-family formula
    as printed and is for comparison only.
    """
    _check_field(family, field)
    grid = field.grid
    u = field.values
    Du = _spectral_grad(field)
    n = grid.ndim
    if which == "euclidean":
        if not _is_euclidean(family, field):
            raise StructureMismatch(f"{family.name} is not the flat product")
        s = np.sqrt(1 + sum(D**2 for D in Du))
        return -_spectral_div([D / s for D in Du], grid)
    if which == "warped":
        _require_model(family, ("warped", "flat"))
        f = make_function(family.spec.get("f", 1.0))
        fu, fp = f(u), f.deriv(u)
        q = sum(D**2 for D in Du)
        S = fu**2 + q
        return fp / np.sqrt(S) * (n - q / fu**2) - _spectral_div([D / (fu * np.sqrt(S)) for D in Du], grid)
    if which == "killing":
        _require_model(family, ("killing",))
        h1 = make_function(family.spec.get("h", 1.0))
        mesh = grid.mesh()
        hv = h1(mesh[0])
        Dh = [h1.deriv(mesh[0])] + [np.zeros(grid.shape)] * (n - 1)
        if "h2" in family.spec:
            h2 = make_function(family.spec["h2"])
            Dh = [Dh[0] * h2(mesh[1]), hv * h2.deriv(mesh[1])]
            hv = hv * h2(mesh[1])
        s = np.sqrt(1 + hv**2 * sum(D**2 for D in Du))
        dot = sum(a * b for a, b in zip(Du, Dh))
        return -(_spectral_div([hv * D / s for D in Du], grid) + dot / s)
    if which in ("doubly_warped", "doubly_warped_literal"):
        _require_model(family, ("doubly_warped",))
        if n != 2 or family.spec.get("n1", 1) != 1 or family.spec.get("n2", 1) != 1:
            raise StructureMismatch("the doubly-warped cross-check uses a 2D grid with one coordinate per factor")
        fs = [make_function(family.spec.get("f1", 1.0)), make_function(family.spec.get("f2", 1.0))]
        fv = [f(u) for f in fs]
        fp = [f.deriv(u) for f in fs]
        lam = sum(p / v for p, v in zip(fp, fv))
        if which == "doubly_warped":
            psi = 1.0 / np.sqrt(1 + sum(D**2 / v**2 for D, v in zip(Du, fv)))
            corr = sum((p / v) * D**2 / v**2 for p, v, D in zip(fp, fv, Du))
            return psi * (lam - corr) - _spectral_div([psi * D / v**2 for D, v in zip(Du, fv)], grid)
        phi = 1.0 / np.sqrt(1 + sum(v**2 * D**2 for D, v in zip(Du, fv)))
        return -_spectral_div([phi * D / v**2 for D, v in zip(Du, fv)], grid) - phi * lam
    raise InvalidParams(f"unknown specialisation {which!r}")


def specialization_crosscheck(family: MetricFamily, field: GraphField, which: str) -> float:
    """Max-norm gap between the general operator and a closed-form specialisation."""
    general = graph_mean_curvature(family, field)
    closed = closed_form_residual(family, field, which)
    return float(np.max(np.abs(general - closed)))


# ----------------------------------------------------------------------
# Newton solver


@dataclass
class SolverReport:
    converged: bool
    iterations: int
    residual_norm_history: list
    final_infnorm_residual: float
    u_range: tuple
    verdict: str
    active_constraints: int = 0
    pinned_node: int | None = None
    message: str = ""

    def to_dict(self) -> dict:
        return {
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "residual_norm_history": [float(r) for r in self.residual_norm_history],
            "final_infnorm_residual": float(self.final_infnorm_residual),
            "u_range": [float(self.u_range[0]), float(self.u_range[1])],
            "verdict": self.verdict,
            "active_constraints": int(self.active_constraints),
            "pinned_node": self.pinned_node,
            "message": self.message,
        }


@dataclass(frozen=True)
class NewtonOptions:
    tolerance: float = 1e-10
    max_iter: int = 200
    armijo: float = 1e-4
    min_step: float = 1e-10
    pin: int | None = None
    sign: str = "free"
    bound: float = 0.0
    flat_tol: float = 1e-8
    stationarity_tol: float = 1e-8
    max_step: float = 0.5


def _neighbours(grid: Grid, flat_idx: int, radius: int) -> list:
    idx = np.unravel_index(flat_idx, grid.shape)
    out = []
    ranges = []
    for k, (_, _, n, p) in enumerate(grid.axes):
        r = []
        for s in range(-radius, radius + 1):
            j = idx[k] + s
            if p:
                r.append(j % n)
            elif 0 <= j < n:
                r.append(j)
        ranges.append(sorted(set(r)))
    for combo in np.array(np.meshgrid(*ranges, indexing="ij")).reshape(grid.ndim, -1).T:
        out.append(int(np.ravel_multi_index(tuple(combo), grid.shape)))
    return out


def _coloring(grid: Grid, unknowns: np.ndarray) -> np.ndarray:
    """Greedy distance-2 colouring of the 3^d stencil graph."""
    colors = np.full(int(np.prod(grid.shape)), -1)
    for v in unknowns:
        taken = {colors[w] for w in _neighbours(grid, v, 2)}
        c = 0
        while c in taken:
            c += 1
        colors[v] = c
    return colors


def _jacobian(family, grid, u, jumps, unknowns, colors, stencil, R0):
    M = u.size
    pos = -np.ones(M, dtype=int)
    pos[unknowns] = np.arange(unknowns.size)
    rows, cols, vals = [], [], []
    eps = math.sqrt(np.finfo(float).eps)
    flat = u.ravel()
    for c in range(colors[unknowns].max() + 1):
        members = unknowns[colors[unknowns] == c]
        if members.size == 0:
            continue
        steps = eps * (1.0 + np.abs(flat[members]))
        up = flat.copy()
        up[members] += steps
        Rp = _residual_raw(family, grid, up.reshape(grid.shape), jumps).ravel()
        dR = Rp - R0
        for m, hstep in zip(members, steps):
            for r in stencil[m]:
                if pos[r] >= 0:
                    rows.append(pos[r])
                    cols.append(pos[m])
                    vals.append(dR[r] / hstep)
    n = unknowns.size
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def _solve_linear(J, rhs):
    with warnings.catch_warnings():
        warnings.simplefilter("error", spla.MatrixRankWarning)
        try:
            x = spla.spsolve(J.tocsc(), rhs)
            if np.isfinite(x).all():
                return x
        except (spla.MatrixRankWarning, RuntimeError):
            pass
    if J.shape[0] <= 2000:
        return np.linalg.lstsq(J.toarray(), rhs, rcond=None)[0]
    raise SingularJacobian("Jacobian is singular and too large for the dense fallback")


def _safe_residual(family, grid, u, jumps):
    # None when the trial graph leaves the domain or the metric overflows
    if not _in_domain(family, grid, u):
        return None
    with np.errstate(all="ignore"):
        try:
            R = _residual_raw(family, grid, u, jumps).ravel()
        except np.linalg.LinAlgError:
            return None
    return R if np.isfinite(R).all() else None


def _in_domain(family, grid, u):
    X = np.column_stack([u.ravel(), grid.points()])
    return bool(family.in_domain(X).all())


def newton_solve(family: MetricFamily, u0: GraphField, opts: NewtonOptions | None = None, **kwargs):
    """Damped Newton with a coloured finite-difference Jacobian and Armijo backtracking.

    Dirichlet nodes keep their initial values.  ``opts.pin`` fixes one node
    (gauge on periodic grids); ``opts.sign`` in ``{"ge", "le", "free"}``
    clips iterates against ``opts.bound``.  Returns ``(GraphField, SolverReport)``.
    """
    opts = opts or NewtonOptions()
    if kwargs:
        opts = NewtonOptions(**{**opts.__dict__, **kwargs})
    if opts.max_iter < 1:
        raise InvalidParams("max_iter must be >= 1")
    if opts.sign not in ("ge", "le", "free"):
        raise InvalidParams("sign must be 'ge', 'le' or 'free'")
    _check_field(family, u0)
    grid = u0.grid
    jumps = u0.jumps
    u = u0.values.copy()
    if not _in_domain(family, grid, u):
        raise DomainEscape("initial graph lies outside the ambient domain")
    fixed = grid.boundary_mask().ravel().copy()
    if opts.pin is not None:
        fixed[int(opts.pin)] = True
    unknowns = np.flatnonzero(~fixed)
    if unknowns.size == 0:
        raise InvalidParams("no unknowns left to solve for")
    colors = _coloring(grid, unknowns)
    stencil = {m: _neighbours(grid, m, 1) for m in unknowns}

    def project(v):
        flat = v.ravel()
        active = np.zeros(flat.size, dtype=bool)
        if opts.sign == "ge":
            active[unknowns] = flat[unknowns] < opts.bound
        elif opts.sign == "le":
            active[unknowns] = flat[unknowns] > opts.bound
        flat = flat.copy()
        flat[active] = opts.bound
        return flat.reshape(grid.shape), int(active.sum())

    u, active = project(u)
    R = _residual_raw(family, grid, u, jumps).ravel()
    F = R[unknowns]
    history = [float(np.max(np.abs(F)))]
    converged = history[-1] <= opts.tolerance
    stalled = False
    message = ""
    gradnorm = math.inf
    it = 0
    while not converged and it < opts.max_iter:
        it += 1
        J = _jacobian(family, grid, u, jumps, unknowns, colors, stencil, R)
        gradnorm = float(np.max(np.abs(J.T @ F)))
        try:
            step = _solve_linear(J, -F)
        except SingularJacobian as exc:
            message = str(exc)
            stalled = True
            break
        phi0 = 0.5 * float(F @ F)
        big = float(np.max(np.abs(step)))
        lam = min(1.0, opts.max_step / big) if big > 0 else 1.0
        accepted = False
        while lam >= opts.min_step:
            trial = u.ravel().copy()
            trial[unknowns] += lam * step
            trial, act = project(trial.reshape(grid.shape))
            Rt = _safe_residual(family, grid, trial, jumps)
            if Rt is not None:
                Ft = Rt[unknowns]
                if np.isfinite(Ft).all() and 0.5 * float(Ft @ Ft) <= (1 - 2 * opts.armijo * lam) * phi0:
                    accepted = True
                    break
            lam *= 0.5
        if not accepted:
            stalled = True
            message = "line search failed"
            break
        u, R, F, active = trial, Rt, Ft, act
        history.append(float(np.max(np.abs(F))))
        converged = history[-1] <= opts.tolerance

    final = float(np.max(np.abs(F)))
    lo, hi = float(u.min()), float(u.max())
    if converged:
        spread = hi - lo
        flat_ok = spread <= opts.flat_tol * (1 + max(abs(lo), abs(hi)))
        verdict = "constant_solution" if flat_ok else "nonconstant_solution"
    elif stalled and active == 0 and gradnorm <= opts.stationarity_tol * (1 + final):
        verdict = "residual_floor"
    else:
        verdict = "no_convergence"
    if not message:
        message = "converged" if converged else ("stalled" if stalled else "iteration budget exhausted")
    report = SolverReport(bool(converged), it, history, final, (lo, hi), verdict, active, opts.pin, message)
    return GraphField(grid, u, jumps, u0.family_id), report


def dirichlet_solve(family: MetricFamily, grid: Grid, t0: float, sign: str = "free", u0: GraphField | None = None,
                    bump: float = 0.1, opts: NewtonOptions | None = None, **kwargs):
    """Solve ``R(u) = 0`` with ``u = t0`` on the Dirichlet boundary.

    Without ``u0`` the start is ``t0`` plus a smooth bump of height ``bump``
    (signed to respect the constraint).  ``sign`` is ``"ge"``, ``"le"`` or
    ``"free"``.
    """
    if not grid.boundary_mask().any():
        raise InvalidParams("Dirichlet problems need at least one non-periodic axis")
    if u0 is None:
        shape = np.ones(grid.shape)
        for k, ((lo, hi, n, p), c) in enumerate(zip(grid.axes, grid.mesh())):
            shape = shape * (np.sin(math.pi * (c - lo) / (hi - lo)) if not p else 1.0)
        amp = -bump if sign == "le" else bump
        vals = t0 + amp * shape
    else:
        vals = u0.values.copy()
    vals[grid.boundary_mask()] = t0
    start = GraphField(grid, vals, family_id=family.name)
    base = opts or NewtonOptions()
    opts = NewtonOptions(**{**base.__dict__, "sign": sign, "bound": float(t0), **kwargs})
    return newton_solve(family, start, opts)


# ----------------------------------------------------------------------
# serialisation


def field_to_csv(field: GraphField) -> str:
    grid = field.grid
    buf = io.StringIO()
    buf.write("# grid " + json.dumps(grid.to_dict()) + "\n")
    buf.write("# jumps " + json.dumps(list(field.jumps)) + "\n")
    buf.write("# family " + json.dumps(field.family_id) + "\n")
    names = [f"x{k}" for k in range(grid.ndim)] + ["u"]
    buf.write(",".join(names) + "\n")
    pts = grid.points()
    for p, v in zip(pts, field.values.ravel()):
        buf.write(",".join(format(float(c), ".17g") for c in (*p, v)) + "\n")
    return buf.getvalue()


def field_from_csv(text: str) -> GraphField:
    meta = {}
    rows = []
    for line in text.splitlines():
        if line.startswith("# "):
            key, _, val = line[2:].partition(" ")
            meta[key] = json.loads(val)
        elif line and not line.startswith("x"):
            rows.append([float(v) for v in line.split(",")])
    if "grid" not in meta:
        raise InvalidParams("CSV lacks the grid header")
    grid = Grid(tuple(tuple(a) for a in meta["grid"]["axes"]))
    vals = np.array(rows)[:, -1]
    return GraphField(grid, vals, tuple(meta.get("jumps", ())), meta.get("family", ""))
