"""One-parameter metric families ``beta dt^2 + g_t`` on ``I x F``.

Points of the ambient manifold are stored as arrays whose first column is the
interval coordinate ``t`` and whose remaining ``d`` columns are the chart
coordinates ``x`` of the fiber ``F``.  All evaluators are vectorised: they take
``t`` of shape ``(N,)`` and ``x`` of shape ``(N, d)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateMetric, DomainError, InvalidParams, UnknownModel
from .functions import Func1D, make_function

TWO_PI = 2.0 * math.pi
FLAGS = ("non_shrinking", "non_expanding", "expanding", "contracting", "indefinite")


@dataclass(frozen=True, eq=False)
class MetricFamily:
    """Chart description of ``(I x F, beta dt^2 + g_t)``.

    ``f_domain`` holds one ``(lo, hi, periodic)`` triple per fiber coordinate.
    ``collar`` is the width excluded next to singular ends of ``t_interval``
    (polar axes, sphere poles).  Optional ``dbeta_dx``/``dg_dx`` give spatial
    derivatives, shaped ``(N, d)`` and ``(N, d, d, d)`` with the derivative
    index first; when absent they are taken by centred differences.
    """

    name: str
    fiber_dim: int
    t_interval: tuple
    f_domain: tuple
    beta: Callable
    g: Callable
    dbeta_dt: Callable | None = None
    dg_dt: Callable | None = None
    dbeta_dx: Callable | None = None
    dg_dx: Callable | None = None
    derivative_mode: str = "analytic"
    fd_step: float | None = None
    collar: tuple = (0.0, 0.0)
    spec: dict = field(default_factory=dict)
    default_region: tuple | None = None

    def __post_init__(self):
        if self.derivative_mode not in ("analytic", "finite_difference"):
            raise InvalidParams(f"derivative_mode must be analytic or finite_difference, got {self.derivative_mode!r}")
        if self.derivative_mode == "analytic" and (self.dbeta_dt is None or self.dg_dt is None):
            raise InvalidParams("analytic derivative mode needs dbeta_dt and dg_dt")
        if len(self.f_domain) != self.fiber_dim:
            raise InvalidParams("f_domain needs one entry per fiber coordinate")
        lo, hi = self.t_interval
        if not lo < hi:
            raise InvalidParams("t_interval must be a non-empty open interval")

    # -- shape helpers -------------------------------------------------
    @property
    def dim_total(self) -> int:
        return 1 + self.fiber_dim

    @property
    def periods(self) -> np.ndarray:
        """Period of every ambient coordinate, 0 for non-periodic ones."""
        out = np.zeros(self.dim_total)
        for k, (lo, hi, periodic) in enumerate(self.f_domain):
            if periodic:
                out[k + 1] = hi - lo
        return out

    @property
    def t_step(self) -> float:
        if self.fd_step is not None:
            return float(self.fd_step)
        lo, hi = self.t_interval
        span = hi - lo
        return 1e-5 * span if math.isfinite(span) else 1e-5

    @property
    def x_steps(self) -> np.ndarray:
        steps = []
        for lo, hi, _ in self.f_domain:
            span = hi - lo
            steps.append(1e-5 * span if math.isfinite(span) else 1e-5)
        return np.asarray(steps)

    def wrap(self, dX):
        """Wrap coordinate differences into the principal period range."""
        dX = np.asarray(dX, dtype=float)
        p = self.periods
        if not p.any():
            return dX
        safe = np.where(p > 0, p, 1.0)
        wrapped = dX - safe * np.round(dX / safe)
        return np.where(p > 0, wrapped, dX)

    @staticmethod
    def _split(X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return X[:, 0], X[:, 1:]

    # -- domain ----------------------------------------------------------
    def in_domain(self, X, collar: bool = False) -> np.ndarray:
        t, x = self._split(X)
        lo, hi = self.t_interval
        c_lo, c_hi = self.collar if collar else (0.0, 0.0)
        ok = (t > lo + c_lo) & (t < hi - c_hi) & np.isfinite(t)
        for k, (a, b, periodic) in enumerate(self.f_domain):
            ok &= np.isfinite(x[:, k])
            if not periodic:
                ok &= (x[:, k] >= a) & (x[:, k] <= b)
        return ok

    def require_domain(self, X, collar: bool = False):
        ok = self.in_domain(X, collar)
        if not ok.all():
            bad = np.atleast_2d(X)[~ok][0]
            raise DomainError(f"point {bad.tolist()} lies outside the domain of {self.name}")

    # -- evaluation ----------------------------------------------------
    def evaluate(self, t, x):
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        return np.asarray(self.beta(t, x), dtype=float), np.asarray(self.g(t, x), dtype=float)

    def time_derivatives(self, t, x):
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        if self.derivative_mode == "analytic":
            return np.asarray(self.dbeta_dt(t, x), dtype=float), np.asarray(self.dg_dt(t, x), dtype=float)
        h = self.t_step
        bp, gp = self.evaluate(t + h, x)
        bm, gm = self.evaluate(t - h, x)
        return (bp - bm) / (2 * h), (gp - gm) / (2 * h)

    def space_derivatives(self, t, x):
        """Return ``(dbeta_dx, dg_dx)`` shaped ``(N, d)`` and ``(N, d, d, d)``."""
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        d = self.fiber_dim
        if self.dbeta_dx is not None and self.dg_dx is not None:
            return np.asarray(self.dbeta_dx(t, x), dtype=float), np.asarray(self.dg_dx(t, x), dtype=float)
        n = t.shape[0]
        db = np.empty((n, d))
        dg = np.empty((n, d, d, d))
        for k, h in enumerate(self.x_steps):
            xp = x.copy()
            xm = x.copy()
            xp[:, k] += h
            xm[:, k] -= h
            bp, gp = self.evaluate(t, xp)
            bm, gm = self.evaluate(t, xm)
            db[:, k] = (bp - bm) / (2 * h)
            dg[:, k] = (gp - gm) / (2 * h)
        return db, dg

    def ambient(self, X) -> np.ndarray:
        """Full ambient metric matrices, shape ``(N, D, D)``."""
        t, x = self._split(X)
        b, g = self.evaluate(t, x)
        D = self.dim_total
        G = np.zeros((t.shape[0], D, D))
        G[:, 0, 0] = b
        G[:, 1:, 1:] = g
        return G

    def ambient_grad(self, X) -> np.ndarray:
        """Coordinate derivatives ``dG[n, k, i, j] = d_k gbar_ij``."""
        t, x = self._split(X)
        D = self.dim_total
        n = t.shape[0]
        dG = np.zeros((n, D, D, D))
        db_t, dg_t = self.time_derivatives(t, x)
        dG[:, 0, 0, 0] = db_t
        dG[:, 0, 1:, 1:] = dg_t
        if self.fiber_dim:
            db_x, dg_x = self.space_derivatives(t, x)
            dG[:, 1:, 0, 0] = db_x
            dG[:, 1:, 1:, 1:] = dg_x
        return dG

    def eta(self, X) -> np.ndarray:
        """``d/dt log det g_t`` at ambient points."""
        t, x = self._split(X)
        _, g = self.evaluate(t, x)
        _, dg = self.time_derivatives(t, x)
        return np.einsum("nii->n", np.linalg.solve(g, dg))

    def eta_gradient(self, X) -> np.ndarray:
        """Ambient coordinate gradient (covector) of :meth:`eta` by centred differences."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        steps = np.concatenate([[self.t_step], self.x_steps])
        out = np.empty_like(X)
        for k, h in enumerate(steps):
            Xp = X.copy()
            Xm = X.copy()
            Xp[:, k] += h
            Xm[:, k] -= h
            out[:, k] = (self.eta(Xp) - self.eta(Xm)) / (2 * h)
        return out


# ----------------------------------------------------------------------
# scalar API


def _point(t, x, family):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (family.fiber_dim,):
        raise DomainError(f"expected a fiber point with {family.fiber_dim} coordinates, got shape {x.shape}")
    return np.array([float(t)]), x[None, :]


def eval_metric(family: MetricFamily, t: float, x) -> tuple[float, np.ndarray]:
    """Return ``(beta, g)`` at one point, checking domain and definiteness."""
    tt, xx = _point(t, x, family)
    family.require_domain(np.column_stack([tt, xx]))
    b, g = family.evaluate(tt, xx)
    b = float(b[0])
    g = np.array(g[0])
    if not b > 0:
        raise DegenerateMetric(f"beta = {b} is not positive at t={t}, x={xx[0].tolist()}")
    if not np.allclose(g, g.T, rtol=1e-12, atol=1e-14):
        raise DegenerateMetric("g_t is not symmetric")
    try:
        np.linalg.cholesky(g)
    except np.linalg.LinAlgError:
        raise DegenerateMetric(f"g_t is not positive definite at t={t}, x={xx[0].tolist()}") from None
    return b, g


def lie_derivative_t(family: MetricFamily, t: float, x) -> tuple[float, np.ndarray]:
    """Return ``(d_t beta, d_t g_t)`` at one interior point."""
    tt, xx = _point(t, x, family)
    family.require_domain(np.column_stack([tt, xx]))
    if family.derivative_mode == "finite_difference":
        h = family.t_step
        lo, hi = family.t_interval
        if not (lo < t - h and t + h < hi):
            raise DomainError(f"centred difference at t={t} with step {h} leaves the interval {family.t_interval}")
    db, dg = family.time_derivatives(tt, xx)
    return float(db[0]), np.array(dg[0])


# ----------------------------------------------------------------------
# monotonicity


@dataclass(frozen=True)
class MonotonicityReport:
    region: tuple
    flags: frozenset
    witnesses: list
    tolerance: float
    eig_min: float
    eig_max: float
    dbeta_min: float
    dbeta_max: float

    def to_dict(self) -> dict:
        return {
            "region": [list(r) for r in self.region],
            "flags": sorted(self.flags),
            "tolerance": self.tolerance,
            "eig_min": self.eig_min,
            "eig_max": self.eig_max,
            "dbeta_min": self.dbeta_min,
            "dbeta_max": self.dbeta_max,
            "witnesses": self.witnesses,
        }


def generalized_eigenvalues(g: np.ndarray, dg: np.ndarray) -> np.ndarray:
    """Eigenvalues of ``dg`` relative to ``g`` for stacks of symmetric forms."""
    try:
        L = np.linalg.cholesky(g)
    except np.linalg.LinAlgError:
        raise DegenerateMetric("g_t is not positive definite on the sample grid") from None
    A = np.linalg.solve(L, dg)
    M = np.linalg.solve(L, np.swapaxes(A, -1, -2))
    M = 0.5 * (M + np.swapaxes(M, -1, -2))
    return np.linalg.eigvalsh(M)


def sample_grid(region, grid) -> np.ndarray:
    region = [tuple(map(float, r)) for r in region]
    counts = [int(grid)] * len(region) if np.isscalar(grid) else [int(c) for c in grid]
    if len(counts) != len(region):
        raise InvalidParams("grid needs one sample count per region axis")
    if min(counts) < 2:
        raise InvalidParams("need at least 2 samples per axis")
    axes = [np.linspace(lo, hi, c) for (lo, hi), c in zip(region, counts)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([m.ravel() for m in mesh])


def classify_monotonicity(family: MetricFamily, region=None, grid=9, tolerance: float = 1e-9) -> MonotonicityReport:
    """Classify ``d_t beta`` and ``d_t g_t`` over a sampled box.

    The semidefinite test uses generalized eigenvalues of ``d_t g_t`` relative
    to ``g_t`` so that rescaling fiber coordinates leaves the flags unchanged.
    ``tolerance`` is relative to the largest magnitude seen in the region.
    """
    if region is None:
        region = family.default_region
        if region is None:
            raise InvalidParams(f"{family.name} has no default region; pass one explicitly")
    region = tuple(tuple(map(float, r)) for r in region)
    if len(region) != family.dim_total:
        raise InvalidParams("region needs one (lo, hi) pair per ambient coordinate")
    X = sample_grid(region, grid)
    family.require_domain(X)
    t, x = X[:, 0], X[:, 1:]
    b, g = family.evaluate(t, x)
    db, dg = family.time_derivatives(t, x)
    if family.fiber_dim:
        lam = generalized_eigenvalues(g, dg)
        lmin, lmax = lam[:, 0], lam[:, -1]
    else:
        lmin = lmax = np.zeros_like(t)
    rate = db / b
    scale = max(np.abs(lmin).max(), np.abs(lmax).max(), np.abs(rate).max())
    tol = tolerance * scale if scale > 0 else tolerance

    flags = set()
    if lmin.min() >= -tol and rate.min() >= -tol:
        flags.add("non_shrinking")
        if lmin.min() > tol:
            flags.add("expanding")
    if lmax.max() <= tol and rate.max() <= tol:
        flags.add("non_expanding")
        if lmax.max() < -tol:
            flags.add("contracting")
    if not flags:
        flags.add("indefinite")

    witnesses = []
    for label, idx in (("eig_min", int(np.argmin(lmin))), ("eig_max", int(np.argmax(lmax))),
                       ("dbeta_min", int(np.argmin(rate)))):
        witnesses.append({
            "kind": label,
            "point": X[idx].tolist(),
            "eig_min": float(lmin[idx]),
            "eig_max": float(lmax[idx]),
            "dbeta_sign": int(np.sign(db[idx]) if abs(rate[idx]) > tol else 0),
        })
    return MonotonicityReport(region, frozenset(flags), witnesses, float(tol),
                              float(lmin.min()), float(lmax.max()), float(rate.min()), float(rate.max()))


# ----------------------------------------------------------------------
# constructions


def product_extension(family: MetricFamily, period: float = TWO_PI) -> MetricFamily:
    """Append a flat periodic coordinate: ``beta dt^2 + g_t + ds^2``."""
    d = family.fiber_dim

    def g(t, x):
        out = np.zeros((t.shape[0], d + 1, d + 1))
        out[:, :d, :d] = family.g(t, x[:, :d])
        out[:, d, d] = 1.0
        return out

    def beta(t, x):
        return family.beta(t, x[:, :d])

    def dg_dt(t, x):
        _, base = family.time_derivatives(t, x[:, :d])
        out = np.zeros((t.shape[0], d + 1, d + 1))
        out[:, :d, :d] = base
        return out

    def dbeta_dt(t, x):
        base, _ = family.time_derivatives(t, x[:, :d])
        return base

    def dbeta_dx(t, x):
        out = np.zeros((t.shape[0], d + 1))
        if d:
            out[:, :d] = family.space_derivatives(t, x[:, :d])[0]
        return out

    def dg_dx(t, x):
        out = np.zeros((t.shape[0], d + 1, d + 1, d + 1))
        if d:
            out[:, :d, :d, :d] = family.space_derivatives(t, x[:, :d])[1]
        return out

    region = None
    if family.default_region is not None:
        region = tuple(family.default_region) + ((0.0, period),)
    return MetricFamily(
        name=f"{family.name}+S1",
        fiber_dim=d + 1,
        t_interval=family.t_interval,
        f_domain=tuple(family.f_domain) + ((0.0, period, True),),
        beta=beta, g=g, dbeta_dt=dbeta_dt, dg_dt=dg_dt, dbeta_dx=dbeta_dx, dg_dx=dg_dx,
        derivative_mode="analytic", fd_step=family.fd_step, collar=family.collar,
        spec={"model": "product_extension", "base": family.spec, "period": period},
        default_region=region,
    )


def reparametrize_t(family: MetricFamily, phi, s_interval, name: str | None = None) -> MetricFamily:
    """Pull the family back along ``t = phi(s)`` (an isometric change of chart).

    The new lapse is ``beta(phi(s), x) phi'(s)^2``; ``phi`` must be increasing.
    """
    phi = make_function(phi)
    s_lo, s_hi = s_interval

    def beta(s, x):
        return family.beta(phi(s), x) * phi.deriv(s) ** 2

    def g(s, x):
        return family.g(phi(s), x)

    def dbeta_dt(s, x):
        t = phi(s)
        p1, p2 = phi.deriv(s), phi.deriv(s, 2)
        b = family.beta(t, x)
        db, _ = family.time_derivatives(t, x)
        return db * p1**3 + 2.0 * b * p1 * p2

    def dg_dt(s, x):
        _, dg = family.time_derivatives(phi(s), x)
        return dg * phi.deriv(s)[:, None, None]

    def dbeta_dx(s, x):
        db, _ = family.space_derivatives(phi(s), x)
        return db * (phi.deriv(s) ** 2)[:, None]

    def dg_dx(s, x):
        return family.space_derivatives(phi(s), x)[1]

    collar = family.collar
    return MetricFamily(
        name=name or f"{family.name}@reparam",
        fiber_dim=family.fiber_dim,
        t_interval=(float(s_lo), float(s_hi)),
        f_domain=family.f_domain,
        beta=beta, g=g, dbeta_dt=dbeta_dt, dg_dt=dg_dt, dbeta_dx=dbeta_dx, dg_dx=dg_dx,
        collar=(collar[0] and 1e-3, collar[1] and 1e-3),
        spec={"model": "reparametrized", "base": family.spec, "phi": phi.to_spec(),
              "s_interval": [float(s_lo), float(s_hi)]},
    )


def conformal_family(family: MetricFamily, alpha, alpha_grad=None, name: str | None = None) -> MetricFamily:
    """The family ``exp(2 alpha) * gbar``; ``alpha`` maps ambient points ``(N, D)`` to ``(N,)``.

    ``alpha_grad`` returns the coordinate gradient ``(N, D)``; centred
    differences are used when it is omitted.
    """
    D = family.dim_total
    steps = np.concatenate([[family.t_step], family.x_steps]) * 0.1

    def grad(X):
        if alpha_grad is not None:
            return np.asarray(alpha_grad(X), dtype=float)
        out = np.empty_like(X)
        for k in range(D):
            Xp = X.copy()
            Xm = X.copy()
            Xp[:, k] += steps[k]
            Xm[:, k] -= steps[k]
            out[:, k] = (alpha(Xp) - alpha(Xm)) / (2 * steps[k])
        return out

    def pack(t, x):
        return np.column_stack([t, x])

    def beta(t, x):
        return np.exp(2 * alpha(pack(t, x))) * family.beta(t, x)

    def g(t, x):
        return np.exp(2 * alpha(pack(t, x)))[:, None, None] * family.g(t, x)

    def dbeta_dt(t, x):
        X = pack(t, x)
        e = np.exp(2 * alpha(X))
        db, _ = family.time_derivatives(t, x)
        return e * (2 * grad(X)[:, 0] * family.beta(t, x) + db)

    def dg_dt(t, x):
        X = pack(t, x)
        e = np.exp(2 * alpha(X))[:, None, None]
        _, dg = family.time_derivatives(t, x)
        return e * (2 * grad(X)[:, 0, None, None] * family.g(t, x) + dg)

    def dbeta_dx(t, x):
        X = pack(t, x)
        e = np.exp(2 * alpha(X))[:, None]
        db, _ = family.space_derivatives(t, x)
        return e * (2 * grad(X)[:, 1:] * family.beta(t, x)[:, None] + db)

    def dg_dx(t, x):
        X = pack(t, x)
        e = np.exp(2 * alpha(X))[:, None, None, None]
        _, dg = family.space_derivatives(t, x)
        return e * (2 * grad(X)[:, 1:, None, None] * family.g(t, x)[:, None] + dg)

    return replace(
        family,
        name=name or f"exp(2a)*{family.name}",
        beta=beta, g=g, dbeta_dt=dbeta_dt, dg_dt=dg_dt, dbeta_dx=dbeta_dx, dg_dx=dg_dx,
        derivative_mode="analytic",
        spec={"model": "conformal", "base": family.spec},
    )


# ----------------------------------------------------------------------
# model library


def _flat_fiber(d):
    def g(t, x):
        return np.broadcast_to(np.eye(d), (t.shape[0], d, d)).copy()

    def zero(t, x):
        return np.zeros((t.shape[0], d, d))

    def zero_x(t, x):
        return np.zeros((t.shape[0], d, d, d))

    return g, zero, zero_x


def _ones(t, x):
    return np.ones_like(t)


def _zeros(t, x):
    return np.zeros_like(t)


def _zeros_dx(t, x):
    return np.zeros((t.shape[0], x.shape[1]))


def _fiber_domain(params, d, default_period=TWO_PI):
    if "f_domain" in params:
        dom = tuple((float(a), float(b), bool(p)) for a, b, p in params["f_domain"])
        if len(dom) != d:
            raise InvalidParams(f"f_domain needs {d} entries")
        return dom
    period = float(params.get("period", default_period))
    if period <= 0:
        raise InvalidParams("period must be positive")
    return tuple((0.0, period, True) for _ in range(d))


def _t_interval(params, default):
    if "t_interval" in params:
        lo, hi = params["t_interval"]
        return (float(lo), float(hi))
    return default


def _region(t_interval, f_domain, t_default):
    reg = [t_default]
    for a, b, _ in f_domain:
        if math.isfinite(a) and math.isfinite(b):
            reg.append((a, b))
        else:
            reg.append((-1.0, 1.0))
    return tuple(reg)


def _polar(name, profile, dprofile, t_interval, collar, spec, region_t, params):
    def g(t, x):
        return profile(t)[:, None, None]

    def dg(t, x):
        return dprofile(t)[:, None, None]

    f_domain = ((0.0, TWO_PI, True),)
    return MetricFamily(
        name=name, fiber_dim=1, t_interval=t_interval, f_domain=f_domain,
        beta=_ones, g=g, dbeta_dt=_zeros, dg_dt=dg,
        dbeta_dx=_zeros_dx, dg_dx=lambda t, x: np.zeros((t.shape[0], 1, 1, 1)),
        collar=collar, spec=spec, default_region=(region_t, (0.0, TWO_PI)),
    )


def _positive_k(params):
    k = params.get("k", 1.0)
    if isinstance(k, (list, tuple)):
        k = k[0]
    k = float(k)
    if not k > 0:
        raise InvalidParams(f"curvature parameter k must be positive, got {k}")
    return k


def model_metric(name: str, params=None, **kwargs) -> MetricFamily:
    """Construct one of the built-in model families.

    Names: ``flat``, ``euclidean_polar``, ``hyperbolic_polar``,
    ``sphere_polar``, ``warped``, ``killing``, ``doubly_warped``.  Polar
    profiles carry the ``k**-0.5`` factor of the constant-curvature model
    list, so ``hyperbolic_polar(k)`` has ``g = cosh(sqrt(k) r)**2 / sqrt(k)``.
    """
    if isinstance(params, (list, tuple)):
        params = {"k": params[0]} if params else {}
    params = dict(params or {})
    params.update(kwargs)
    collar_w = float(params.get("collar", 1e-3))
    mode = params.get("derivative_mode", "analytic")
    fd_step = params.get("fd_step")
    spec = {"model": name, **{k: (v.to_spec() if isinstance(v, Func1D) else v) for k, v in params.items()}}

    if name == "euclidean_polar":
        fam = _polar(name, lambda r: r**2, lambda r: 2 * r, (0.0, math.inf), (collar_w, 0.0), spec, (0.1, 3.0), params)
    elif name in ("hyperbolic_polar", "sphere_polar"):
        k = _positive_k(params)
        c, s = k**-0.5, math.sqrt(k)
        if name == "hyperbolic_polar":
            fam = _polar(name, lambda r: c * np.cosh(s * r) ** 2, lambda r: c * s * np.sinh(2 * s * r),
                         (0.0, math.inf), (collar_w, 0.0), spec, (0.1, 3.0), params)
        else:
            top = math.pi / s
            fam = _polar(name, lambda r: c * np.sin(s * r) ** 2, lambda r: c * s * np.sin(2 * s * r),
                         (0.0, top), (collar_w, collar_w), spec, (0.1 * top, 0.9 * top), params)
    elif name in ("flat", "warped"):
        d = int(params.get("fiber_dim", 1))
        if d < 1:
            raise InvalidParams("fiber_dim must be >= 1")
        f = make_function(params.get("f", 1.0) if name == "warped" else 1.0)
        spec["f"] = f.to_spec()
        f_domain = _fiber_domain(params, d)
        t_int = _t_interval(params, (-math.inf, math.inf))
        eye = np.eye(d)

        def g(t, x):
            return (f(t) ** 2)[:, None, None] * eye

        def dg(t, x):
            return (2 * f(t) * f.deriv(t))[:, None, None] * eye

        reg_t = params.get("region_t", (max(t_int[0], -2.0) + (0.1 if math.isfinite(t_int[0]) else 0),
                                        min(t_int[1], 2.0) - (0.1 if math.isfinite(t_int[1]) else 0)))
        fam = MetricFamily(
            name=name, fiber_dim=d, t_interval=t_int, f_domain=f_domain,
            beta=_ones, g=g, dbeta_dt=_zeros, dg_dt=dg,
            dbeta_dx=_zeros_dx, dg_dx=lambda t, x: np.zeros((t.shape[0], d, d, d)),
            collar=(0.0, 0.0), spec=spec, default_region=_region(t_int, f_domain, tuple(reg_t)),
        )
    elif name == "killing":
        d = int(params.get("fiber_dim", 1))
        h = make_function(params.get("h", 1.0))
        h2 = make_function(params["h2"]) if "h2" in params else None
        spec["h"] = h.to_spec()
        if h2 is not None:
            spec["h2"] = h2.to_spec()
        if h2 is not None and d < 2:
            raise InvalidParams("h2 needs fiber_dim >= 2")
        f_domain = _fiber_domain(params, d)
        t_int = _t_interval(params, (-math.inf, math.inf))
        gF, zero, zero_x = _flat_fiber(d)

        def lapse(x):
            val = h(x[:, 0])
            if h2 is not None:
                val = val * h2(x[:, 1])
            return val

        def beta(t, x):
            return lapse(x) ** 2

        def dbeta_dx(t, x):
            out = np.zeros((t.shape[0], d))
            v1 = h(x[:, 0])
            v2 = h2(x[:, 1]) if h2 is not None else 1.0
            out[:, 0] = 2 * v1 * h.deriv(x[:, 0]) * v2**2
            if h2 is not None:
                out[:, 1] = 2 * v2 * h2.deriv(x[:, 1]) * v1**2
            return out

        fam = MetricFamily(
            name=name, fiber_dim=d, t_interval=t_int, f_domain=f_domain,
            beta=beta, g=gF, dbeta_dt=_zeros, dg_dt=zero, dbeta_dx=dbeta_dx, dg_dx=zero_x,
            spec=spec, default_region=_region(t_int, f_domain, (-2.0, 2.0)),
        )
    elif name == "doubly_warped":
        f1 = make_function(params.get("f1", 1.0))
        f2 = make_function(params.get("f2", 1.0))
        n1 = int(params.get("n1", 1))
        n2 = int(params.get("n2", 1))
        if n1 < 1 or n2 < 1:
            raise InvalidParams("n1 and n2 must be >= 1")
        spec["f1"], spec["f2"] = f1.to_spec(), f2.to_spec()
        d = n1 + n2
        f_domain = _fiber_domain(params, d)
        t_int = _t_interval(params, (-math.inf, math.inf))
        mask1 = np.array([1.0] * n1 + [0.0] * n2)
        mask2 = 1.0 - mask1

        def g(t, x):
            diag = (f1(t) ** 2)[:, None] * mask1 + (f2(t) ** 2)[:, None] * mask2
            return diag[:, :, None] * np.eye(d)

        def dg(t, x):
            diag = (2 * f1(t) * f1.deriv(t))[:, None] * mask1 + (2 * f2(t) * f2.deriv(t))[:, None] * mask2
            return diag[:, :, None] * np.eye(d)

        fam = MetricFamily(
            name=name, fiber_dim=d, t_interval=t_int, f_domain=f_domain,
            beta=_ones, g=g, dbeta_dt=_zeros, dg_dt=dg,
            dbeta_dx=_zeros_dx, dg_dx=lambda t, x: np.zeros((t.shape[0], d, d, d)),
            spec=spec, default_region=_region(t_int, f_domain, (-2.0, 2.0)),
        )
    else:
        raise UnknownModel(f"unknown model {name!r}")

    if mode != "analytic" or fd_step is not None:
        fam = replace(fam, derivative_mode=mode, fd_step=fd_step)
    if "collar" in params and fam.collar != (0.0, 0.0):
        fam = replace(fam, collar=tuple(collar_w if c else 0.0 for c in fam.collar))
    return fam


def metric_from_spec(spec: dict) -> MetricFamily:
    """Build a family from a config mapping such as ``{"model": "sphere_polar", "k": 1.0}``."""
    if not isinstance(spec, dict) or "model" not in spec:
        raise InvalidParams("metric spec must be a table with a 'model' key")
    spec = dict(spec)
    name = spec.pop("model")
    if name == "product_extension":
        base = spec.pop("base", None)
        if base is None:
            raise InvalidParams("product_extension needs a 'base' metric table")
        return product_extension(metric_from_spec(base), float(spec.get("period", TWO_PI)))
    if name == "reparametrized":
        base = metric_from_spec(spec.pop("base"))
        return reparametrize_t(base, spec["phi"], tuple(spec["s_interval"]))
    return model_metric(name, spec)


def sample_points(family: MetricFamily, region: Sequence, count: int, rng: np.random.Generator) -> np.ndarray:
    lo = np.array([r[0] for r in region], dtype=float)
    hi = np.array([r[1] for r in region], dtype=float)
    return lo + (hi - lo) * rng.random((count, len(region)))
