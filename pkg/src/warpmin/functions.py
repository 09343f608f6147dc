"""Scalar function specs used to build warping, lapse and Killing factors.

Every spec evaluates the function together with its first and second
derivatives in closed form, so metric models built from them can run in
analytic derivative mode.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import InvalidParams


@dataclass(frozen=True)
class Func1D:
    kind: str
    params: dict = field(default_factory=dict)
    f: Callable = None
    d1: Callable = None
    d2: Callable = None

    def __call__(self, t):
        return self.f(np.asarray(t, dtype=float))

    def deriv(self, t, order=1):
        t = np.asarray(t, dtype=float)
        if order == 0:
            return self.f(t)
        if order == 1:
            return self.d1(t)
        if order == 2:
            return self.d2(t)
        raise ValueError("only derivatives up to order 2 are available")

    def to_spec(self) -> dict:
        return {"type": self.kind, **self.params}


def _const(value=1.0):
    c = float(value)
    return (lambda t: np.full_like(t, c, dtype=float),
            lambda t: np.zeros_like(t, dtype=float),
            lambda t: np.zeros_like(t, dtype=float))


def _affine(a=1.0, b=0.0):
    a, b = float(a), float(b)
    return (lambda t: a * t + b,
            lambda t: np.full_like(t, a, dtype=float),
            lambda t: np.zeros_like(t, dtype=float))


def _power(a=1.0, p=2.0, c=0.0):
    # a * (t - c)^p, defined for t > c
    a, p, c = float(a), float(p), float(c)
    return (lambda t: a * (t - c) ** p,
            lambda t: a * p * (t - c) ** (p - 1),
            lambda t: a * p * (p - 1) * (t - c) ** (p - 2))


def _exp(a=1.0, b=1.0, c=0.0):
    # a * exp(b t) + c
    a, b, c = float(a), float(b), float(c)
    return (lambda t: a * np.exp(b * t) + c,
            lambda t: a * b * np.exp(b * t),
            lambda t: a * b * b * np.exp(b * t))


def _cosh(a=1.0, b=1.0, c=0.0):
    a, b, c = float(a), float(b), float(c)
    return (lambda t: a * np.cosh(b * t + c),
            lambda t: a * b * np.sinh(b * t + c),
            lambda t: a * b * b * np.cosh(b * t + c))


def _sinh(a=1.0, b=1.0, c=0.0):
    a, b, c = float(a), float(b), float(c)
    return (lambda t: a * np.sinh(b * t + c),
            lambda t: a * b * np.cosh(b * t + c),
            lambda t: a * b * b * np.sinh(b * t + c))


def _sin(a=1.0, b=1.0, c=0.0):
    a, b, c = float(a), float(b), float(c)
    return (lambda t: a * np.sin(b * t + c),
            lambda t: a * b * np.cos(b * t + c),
            lambda t: -a * b * b * np.sin(b * t + c))


def _fourier(c0=1.0, a=(), b=()):
    # c0 + sum_k a_k cos(k t) + b_k sin(k t), k = 1, 2, ...
    c0 = float(c0)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    ka = np.arange(1, a.size + 1, dtype=float)
    kb = np.arange(1, b.size + 1, dtype=float)

    def f(t):
        t = t[..., None]
        return c0 + (a * np.cos(ka * t)).sum(-1) + (b * np.sin(kb * t)).sum(-1)

    def d1(t):
        t = t[..., None]
        return (-a * ka * np.sin(ka * t)).sum(-1) + (b * kb * np.cos(kb * t)).sum(-1)

    def d2(t):
        t = t[..., None]
        return (-a * ka**2 * np.cos(ka * t)).sum(-1) + (-b * kb**2 * np.sin(kb * t)).sum(-1)

    return f, d1, d2


def _spline(knots, values, bc_type="not-a-knot"):
    knots = np.asarray(knots, dtype=float)
    values = np.asarray(values, dtype=float)
    if knots.ndim != 1 or knots.size < 4 or knots.shape != values.shape:
        raise InvalidParams("spline needs matching 1-D knots/values with at least 4 entries")
    if np.any(np.diff(knots) <= 0):
        raise InvalidParams("spline knots must be strictly increasing")
    cs = CubicSpline(knots, values, bc_type=bc_type)
    c1, c2 = cs.derivative(1), cs.derivative(2)
    return cs, c1, c2


_BUILDERS = {
    "const": _const,
    "affine": _affine,
    "power": _power,
    "exp": _exp,
    "cosh": _cosh,
    "sinh": _sinh,
    "sin": _sin,
    "fourier": _fourier,
    "spline": _spline,
}


def make_function(spec) -> Func1D:
    """Build a :class:`Func1D` from a number, a Func1D, or a ``{"type": ...}`` mapping."""
    if isinstance(spec, Func1D):
        return spec
    if isinstance(spec, (int, float)):
        spec = {"type": "const", "value": float(spec)}
    if isinstance(spec, str):
        spec = {"type": spec}
    if not isinstance(spec, Mapping) or "type" not in spec:
        raise InvalidParams(f"function spec must be a mapping with a 'type' key, got {spec!r}")
    params = {k: v for k, v in spec.items() if k != "type"}
    kind = spec["type"]
    try:
        builder = _BUILDERS[kind]
    except KeyError:
        raise InvalidParams(f"unknown function type {kind!r}; known: {sorted(_BUILDERS)}") from None
    try:
        f, d1, d2 = builder(**params)
    except TypeError as exc:
        raise InvalidParams(f"bad parameters for {kind!r} function: {exc}") from None
    clean = {k: (list(v) if isinstance(v, (list, tuple, np.ndarray)) else v) for k, v in params.items()}
    return Func1D(kind, clean, f, d1, d2)
