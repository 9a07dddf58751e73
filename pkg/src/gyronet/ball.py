"""Gyrovector operations on the Poincare ball of curvature ``-c``.

All functions take vectors on the last axis and broadcast over leading axes.
Inputs may be numpy arrays or autodiff ``Var``s; the same code path serves
both.  ``c == 0`` always takes an explicit Euclidean branch.

Chains of Mobius additions are evaluated left to right, ``x + y + z`` meaning
``(x + y) + z``, since the operation is not associative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad


@dataclass(frozen=True)
class SafetyConfig:
    """Numerical guard rails applied around the ball operations."""

    ball_eps: float = 1e-5
    origin_eps: float = 1e-15
    tanh_clamp: float = 15.0
    atanh_clamp: float = 1.0 - 1e-5

    def __post_init__(self):
        for name in ("ball_eps", "origin_eps", "tanh_clamp", "atanh_clamp"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if not self.atanh_clamp < 1:
            raise ValueError("atanh_clamp must be < 1")


DEFAULT_SAFETY = SafetyConfig()


@dataclass(frozen=True)
class Hyperplane:
    """Poincare hyperplane through ``p`` with normal given at the origin.

    ``a_prime`` is the Euclidean parameter; the normal at ``p`` is its
    parallel transport ``(1 - c|p|^2) * a_prime``.
    """

    p: np.ndarray
    a_prime: np.ndarray

    def normal(self, c: float) -> np.ndarray:
        a_prime = np.asarray(self.a_prime, dtype=np.float64)
        if not np.any(a_prime):
            raise ValueError("hyperplane normal is the zero vector")
        return parallel_transport_from_origin(self.p, a_prime, c)


def _check_c(c: float) -> None:
    if c < 0:
        raise ValueError(f"curvature magnitude must be >= 0, got {c}")


def _check_pair(x, y) -> None:
    xs, ys = ad.value(x).shape, ad.value(y).shape
    if xs[-1:] != ys[-1:]:
        raise ValueError(f"dimension mismatch: {xs} vs {ys}")


def _zero_rows(x) -> np.ndarray:
    # squared norm, not coordinates: subnormal vectors also have a zero norm
    xv = ad.value(x)
    return np.sum(xv * xv, axis=-1, keepdims=True) == 0.0


# --- safety layer ----------------------------------------------------------


def safe_tanh(z, cfg: SafetyConfig = DEFAULT_SAFETY):
    return np.tanh(np.clip(z, -cfg.tanh_clamp, cfg.tanh_clamp))


def safe_atanh(z, cfg: SafetyConfig = DEFAULT_SAFETY):
    return np.arctanh(np.clip(z, -cfg.atanh_clamp, cfg.atanh_clamp))


def perturb_origin(x, cfg: SafetyConfig = DEFAULT_SAFETY):
    """Shift exact-zero vectors to ``origin_eps`` along the first axis."""
    mask = _zero_rows(x)
    if not mask.any():
        return x
    bump = np.zeros(mask.shape[:-1] + (ad.value(x).shape[-1],))
    bump[..., 0] = cfg.origin_eps
    return ad.add(x, np.where(mask, bump, 0.0))


def project(x, c: float, cfg: SafetyConfig = DEFAULT_SAFETY):
    """Pull vectors with ``sqrt(c)|x| > 1 - ball_eps`` back onto that radius."""
    xv = ad.value(x)
    if not np.all(np.isfinite(xv)):
        raise ValueError("non-finite coordinates")
    if c == 0:
        return x
    max_norm = (1.0 - cfg.ball_eps) / math.sqrt(c)
    n = ad.norm(x)
    if not np.any(ad.value(n) > max_norm):
        return x
    return ad.mul(x, ad.div(max_norm, ad.clamp(n, lo=max_norm)))


def project_to_ball(x, c: float, cfg: SafetyConfig = DEFAULT_SAFETY) -> np.ndarray:
    """Validated entry point: finite check plus radius projection."""
    _check_c(c)
    return project(np.asarray(x, dtype=np.float64), c, cfg)


def in_ball(x, c: float, cfg: SafetyConfig | None = None) -> np.ndarray:
    """Whether each vector satisfies ``c|x|^2 < 1`` (or the projected radius)."""
    sq = np.sum(np.asarray(x, dtype=np.float64) ** 2, axis=-1)
    if c == 0:
        return np.isfinite(sq)
    if cfg is None:
        return c * sq < 1.0
    return np.sqrt(c * sq) <= 1.0 - cfg.ball_eps * (1 - 1e-9)


# --- metric ----------------------------------------------------------------


def conformal_factor(x, c: float):
    """``2 / (1 - c|x|^2)``, shape ``(..., 1)``."""
    if c == 0:
        return np.full(ad.value(x).shape[:-1] + (1,), 2.0)
    return ad.div(2.0, ad.sub(1.0, ad.scale(ad.dot(x, x), c)))


def inner(x, u, v, c: float):
    """Riemannian metric ``g_x(u, v)``, shape ``(..., 1)``."""
    lam = conformal_factor(x, c)
    return ad.mul(ad.mul(lam, lam), ad.dot(u, v))


# --- gyrovector algebra ----------------------------------------------------


def mobius_add(x, y, c: float, cfg: SafetyConfig = DEFAULT_SAFETY):
    _check_pair(x, y)
    if c == 0:
        return ad.add(x, y)
    xy = ad.dot(x, y)
    x2 = ad.dot(x, x)
    y2 = ad.dot(y, y)
    two_cxy = ad.scale(xy, 2.0 * c)
    coef_x = ad.add(ad.add(1.0, two_cxy), ad.scale(y2, c))
    coef_y = ad.sub(1.0, ad.scale(x2, c))
    num = ad.add(ad.mul(coef_x, x), ad.mul(coef_y, y))
    den = ad.add(ad.add(1.0, two_cxy), ad.scale(ad.mul(x2, y2), c * c))
    return project(ad.div(num, den), c, cfg)


def mobius_neg(x):
    return ad.neg(x)


def mobius_sub(x, y, c: float, cfg: SafetyConfig = DEFAULT_SAFETY):
    return mobius_add(x, ad.neg(y), c, cfg)


def mobius_add_chain(terms, c: float, cfg: SafetyConfig = DEFAULT_SAFETY):
    """Left-associated sum ``((t0 + t1) + t2) + ...``."""
    it = iter(terms)
    acc = next(it)
    for t in it:
        acc = mobius_add(acc, t, c, cfg)
    return acc


def mobius_scalar(r, x, c: float, cfg: SafetyConfig = DEFAULT_SAFETY):
    """``r (x) x``; ``r`` may be a float or a ``(..., 1)`` array / Var."""
    if c == 0:
        return ad.mul(r, x) if not isinstance(r, (int, float)) else ad.scale(x, r)
    zero = _zero_rows(x)
    xs = perturb_origin(x, cfg)
    sc = math.sqrt(c)
    n = ad.norm(xs)
    t = ad.atanh(ad.scale(n, sc), cfg.atanh_clamp)
    t = ad.scale(t, r) if isinstance(r, (int, float)) else ad.mul(r, t)
    out = ad.mul(ad.div(ad.tanh(t, cfg.tanh_clamp), ad.scale(n, sc)), xs)
    if zero.any():
        out = ad.select(zero, 0.0, out)
    return project(out, c, cfg)


def distance(x, y, c: float, cfg: SafetyConfig = DEFAULT_SAFETY):
    """Geodesic distance, shape ``(..., 1)``."""
    _check_pair(x, y)
    if c == 0:
        return ad.scale(ad.norm(ad.sub(x, y)), 2.0)
    sc = math.sqrt(c)
    u = mobius_add(ad.neg(x), y, c, cfg)
    d = ad.scale(ad.atanh(ad.scale(ad.norm(u), sc), cfg.atanh_clamp), 2.0 / sc)
    # -x + x rounds to ~1e-19 rather than 0
    same = np.all(ad.value(x) == ad.value(y), axis=-1, keepdims=True)
    return ad.select(same, 0.0, d) if same.any() else d


def distance_cosh(x, y) -> np.ndarray:
    """Closed form ``acosh(1 + 2|x-y|^2 / ((1-|x|^2)(1-|y|^2)))`` for c = 1."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    d2 = np.sum((x - y) ** 2, axis=-1, keepdims=True)
    den = (1 - np.sum(x * x, axis=-1, keepdims=True)) * (1 - np.sum(y * y, axis=-1, keepdims=True))
    return np.arccosh(1 + 2 * d2 / den)


# --- exponential and logarithmic maps --------------------------------------


def exp_map(x, v, c: float, cfg: SafetyConfig = DEFAULT_SAFETY):
    """Exponential map at ``x`` applied to the tangent vector ``v``."""
    _check_pair(x, v)
    if c == 0:
        return ad.add(x, v)
    zero = _zero_rows(v)
    vs = perturb_origin(v, cfg)
    sc = math.sqrt(c)
    vn = ad.norm(vs)
    lam = conformal_factor(x, c)
    step = ad.tanh(ad.scale(ad.mul(lam, vn), sc / 2.0), cfg.tanh_clamp)
    second = ad.mul(ad.div(step, ad.scale(vn, sc)), vs)
    out = mobius_add(x, second, c, cfg)
    if zero.any():
        out = ad.select(zero, x, out)
    return out


def log_map(x, y, c: float, cfg: SafetyConfig = DEFAULT_SAFETY):
    """Logarithmic map: tangent vector at ``x`` pointing to ``y``.

    Coincident points map to the zero vector.
    """
    _check_pair(x, y)
    if c == 0:
        return ad.sub(y, x)
    u = mobius_add(ad.neg(x), y, c, cfg)
    zero = _zero_rows(u)
    us = perturb_origin(u, cfg)
    sc = math.sqrt(c)
    un = ad.norm(us)
    lam = conformal_factor(x, c)
    mag = ad.div(ad.scale(ad.atanh(ad.scale(un, sc), cfg.atanh_clamp), 2.0 / sc), ad.mul(lam, un))
    out = ad.mul(mag, us)
    if zero.any():
        out = ad.select(zero, 0.0, out)
    return out


def exp0(v, c: float, cfg: SafetyConfig = DEFAULT_SAFETY):
    if c == 0:
        return v
    zero = _zero_rows(v)
    vs = perturb_origin(v, cfg)
    sc = math.sqrt(c)
    n = ad.scale(ad.norm(vs), sc)
    out = ad.mul(ad.div(ad.tanh(n, cfg.tanh_clamp), n), vs)
    if zero.any():
        out = ad.select(zero, 0.0, out)
    return project(out, c, cfg)


def log0(y, c: float, cfg: SafetyConfig = DEFAULT_SAFETY):
    if c == 0:
        return y
    zero = _zero_rows(y)
    ys = perturb_origin(y, cfg)
    sc = math.sqrt(c)
    n = ad.scale(ad.norm(ys), sc)
    out = ad.mul(ad.div(ad.atanh(n, cfg.atanh_clamp), n), ys)
    if zero.any():
        out = ad.select(zero, 0.0, out)
    return out


def parallel_transport_from_origin(x, v, c: float):
    """Transport ``v`` from the origin's tangent space to ``x``'s: ``(1 - c|x|^2) v``."""
    if c == 0:
        return v
    return ad.mul(ad.sub(1.0, ad.scale(ad.dot(x, x), c)), v)


# --- geodesics and angles --------------------------------------------------


def geodesic(x, y, t, c: float, cfg: SafetyConfig = DEFAULT_SAFETY):
    """Point at parameter ``t`` on the geodesic with ``g(0) = x`` and ``g(1) = y``."""
    _check_pair(x, y)
    u = mobius_add(ad.neg(x), y, c, cfg)
    return mobius_add(x, mobius_scalar(t, u, c, cfg), c, cfg)


def unit_speed_geodesic(x, v, t: float, c: float, cfg: SafetyConfig = DEFAULT_SAFETY):
    """Geodesic from ``x`` with initial velocity ``v`` of unit metric norm."""
    x = np.asarray(x, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    speed = np.sqrt(inner(x, v, v, c))
    if not np.allclose(speed, 1.0, rtol=0, atol=1e-9):
        raise ValueError(f"initial velocity must have unit metric norm, got {speed.ravel()}")
    if c == 0:
        return x + t * v
    sc = math.sqrt(c)
    vn = np.linalg.norm(v, axis=-1, keepdims=True)
    return mobius_add(x, safe_tanh(sc * t / 2.0, cfg) * v / (sc * vn), c, cfg)


def gyroangle(a, b, c_pt, c: float, cfg: SafetyConfig = DEFAULT_SAFETY) -> np.ndarray:
    """Angle at ``a`` between the geodesics towards ``b`` and ``c_pt``, in [0, pi]."""
    a, b, c_pt = (np.asarray(v, dtype=np.float64) for v in (a, b, c_pt))
    if np.any(np.all(a == b, axis=-1)) or np.any(np.all(a == c_pt, axis=-1)):
        raise ValueError("gyroangle undefined for coincident points")
    u = mobius_add(-a, b, c, cfg)
    w = mobius_add(-a, c_pt, c, cfg)
    cos = np.sum(u * w, axis=-1) / (np.linalg.norm(u, axis=-1) * np.linalg.norm(w, axis=-1))
    return np.arccos(np.clip(cos, -1.0, 1.0))


# --- hyperplanes -----------------------------------------------------------


def hyperplane_distance(x, h: Hyperplane, c: float, cfg: SafetyConfig = DEFAULT_SAFETY):
    """Distance from ``x`` to the hyperplane ``h``, shape ``(..., 1)``."""
    a = h.normal(c)
    an = np.linalg.norm(a, axis=-1, keepdims=True)
    if c == 0:
        return 2.0 * np.abs(np.sum((np.asarray(x) - h.p) * a, axis=-1, keepdims=True)) / an
    u = ad.value(mobius_add(-np.asarray(h.p, dtype=np.float64), x, c, cfg))
    sc = math.sqrt(c)
    ua = np.abs(np.sum(u * a, axis=-1, keepdims=True))
    den = (1.0 - c * np.sum(u * u, axis=-1, keepdims=True)) * an
    return np.arcsinh(2.0 * sc * ua / den) / sc


def hyperplane_contains(x, h: Hyperplane, c: float, tol: float = 1e-9,
                        cfg: SafetyConfig = DEFAULT_SAFETY) -> np.ndarray:
    a = h.normal(c)
    u = ad.value(mobius_add(-np.asarray(h.p, dtype=np.float64), x, c, cfg))
    return np.abs(np.sum(u * a, axis=-1)) <= tol


# --- Mobius linear maps ----------------------------------------------------


def mobius_linear(mx, x, c: float, cfg: SafetyConfig):
    """Mobius version of a linear map, given ``mx`` (the map applied to ``x``)."""
    zero = _zero_rows(mx)
    mxs = perturb_origin(mx, cfg)
    xs = perturb_origin(x, cfg)
    sc = math.sqrt(c)
    xn = ad.norm(xs)
    mxn = ad.norm(mxs)
    t = ad.mul(ad.div(mxn, xn), ad.atanh(ad.scale(xn, sc), cfg.atanh_clamp))
    out = ad.mul(ad.div(ad.tanh(t, cfg.tanh_clamp), ad.scale(mxn, sc)), mxs)
    if zero.any():
        out = ad.select(zero, 0.0, out)
    return project(out, c, cfg)


def mobius_matvec(m, x, c: float, cfg: SafetyConfig = DEFAULT_SAFETY):
    """``M (x) x``; rotations act as plain matrix products."""
    mx = ad.matvec(m, x)
    if c == 0:
        return mx
    return mobius_linear(mx, x, c, cfg)


def mobius_diag(d, x, c: float, cfg: SafetyConfig = DEFAULT_SAFETY):
    """``diag(d) (x) x``: the Mobius product with a diagonal matrix."""
    dx = ad.mul(d, x)
    if c == 0:
        return dx
    return mobius_linear(dx, x, c, cfg)


def mobius_fn_apply(f: Callable, x, c: float, cfg: SafetyConfig = DEFAULT_SAFETY):
    """Mobius version ``exp0(f(log0(x)))`` of a Euclidean map ``f``."""
    if c == 0:
        return f(x)
    return exp0(f(log0(x, c, cfg)), c, cfg)


# --- gyroderivative --------------------------------------------------------


def gyroderivative_numeric(h: Callable[[float], np.ndarray], t: float, c: float,
                           delta: float = 1e-6, cfg: SafetyConfig = DEFAULT_SAFETY):
    """Forward-difference gyroderivative ``(1/delta) (x) (-h(t) + h(t+delta))``."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    step = mobius_add(-np.asarray(h(t)), h(t + delta), c, cfg)
    return mobius_scalar(1.0 / delta, step, c, cfg)
