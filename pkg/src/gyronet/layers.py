"""Hyperbolic and Euclidean network layers built on the ball operations.

Parameters are passed as plain mappings (name -> array or Var), which keeps
every layer usable both on raw arrays and on a recording tape.  Hyperbolic
layers reduce exactly to their Euclidean counterparts when ``c == 0``.
"""

from __future__ import annotations

import math
from typing import Callable, Mapping

import numpy as np

from . import autodiff as ad
from . import ball
from .ball import DEFAULT_SAFETY, SafetyConfig

NONLINEARITIES = ("identity", "tanh", "relu")


def _relu(x):
    return ad.select(ad.value(x) > 0, x, 0.0)


def euclidean_nonlinearity(phi: str) -> Callable:
    if phi == "identity":
        return lambda x: x
    if phi == "tanh":
        return lambda x: ad.tanh(x)
    if phi == "relu":
        return _relu
    raise ValueError(f"unknown nonlinearity {phi!r}; expected one of {NONLINEARITIES}")


# --- initialisation --------------------------------------------------------


def init_matrix(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    s = 1.0 / math.sqrt(cols)
    return rng.uniform(-s, s, size=(rows, cols))


def init_ball(rng: np.random.Generator, shape: tuple, radius: float = 1e-3) -> np.ndarray:
    """Uniform samples from the Euclidean ball of ``radius`` (vectors on the last axis)."""
    *lead, n = shape
    direction = rng.normal(size=shape)
    direction /= np.linalg.norm(direction, axis=-1, keepdims=True)
    r = radius * rng.uniform(size=tuple(lead) + (1,)) ** (1.0 / n)
    return direction * r


def init_normal_param(rng: np.random.Generator, shape: tuple, scale: float = 0.01) -> np.ndarray:
    a = rng.uniform(-scale, scale, size=shape)
    while True:
        dead = ~np.any(a, axis=-1)
        if not dead.any():
            return a
        a[dead] = rng.uniform(-scale, scale, size=(int(dead.sum()), shape[-1]))


# --- feed-forward pieces ---------------------------------------------------


def hyp_linear(m, b, x, c: float, cfg: SafetyConfig = DEFAULT_SAFETY):
    """``(M (x) x) + b`` in the ball."""
    return ball.mobius_add(ball.mobius_matvec(m, x, c, cfg), b, c, cfg)


def apply_nonlinearity(phi: str, x, c: float, cfg: SafetyConfig = DEFAULT_SAFETY):
    if phi == "identity":
        return x
    return ball.mobius_fn_apply(euclidean_nonlinearity(phi), x, c, cfg)


def concat_matvec(m1, m2, x1, x2, c: float, cfg: SafetyConfig = DEFAULT_SAFETY):
    """Block matrix applied to the pair ``(x1, x2)``: ``M1 (x) x1 + M2 (x) x2``."""
    return ball.mobius_add(ball.mobius_matvec(m1, x1, c, cfg), ball.mobius_matvec(m2, x2, c, cfg), c, cfg)


def attach_scalar(m, x, y, b, c: float, cfg: SafetyConfig = DEFAULT_SAFETY):
    """Fold a real feature ``y`` (shape ``(..., 1)``) in as ``M (x) x + y (x) b``."""
    return ball.mobius_add(ball.mobius_matvec(m, x, c, cfg), ball.mobius_scalar(y, b, c, cfg), c, cfg)


# --- multiclass logistic regression ----------------------------------------


def hyp_mlr_logits(p, a_prime, x, c: float, cfg: SafetyConfig = DEFAULT_SAFETY):
    """Signed, scaled distances of ``x`` (..., n) to K Poincare hyperplanes -> (..., K).

    ``p`` (K, n) are points in the ball, ``a_prime`` (K, n) the normals at the
    origin.  Uses ``lambda_p |a| = 2 |a'|`` with ``a`` parallel to ``a'``.
    """
    if not np.all(np.any(ad.value(a_prime), axis=-1)):
        raise ValueError("MLR normal a' is the zero vector")
    k = ad.value(p).shape[0]
    return ad.concat([_mlr_logit(ad.take(p, i), ad.take(a_prime, i), x, c, cfg) for i in range(k)])


def _mlr_logit(p, a_prime, x, c: float, cfg: SafetyConfig):
    an = ad.norm(a_prime)
    if c == 0:
        return ad.scale(ad.dot(ad.sub(x, p), a_prime), 4.0)
    sc = math.sqrt(c)
    u = ball.mobius_add(ad.neg(p), x, c, cfg)
    ua = ad.dot(u, a_prime)
    den = ad.mul(ad.sub(1.0, ad.scale(ad.dot(u, u), c)), an)
    arg = ad.div(ad.scale(ua, 2.0 * sc), den)
    return ad.mul(ad.scale(an, 2.0 / sc), ad.asinh(arg))


def eucl_mlr_logits(a, b, x):
    """``<a_k, x> - b_k`` for weights ``a`` (K, n) and offsets ``b`` (K,)."""
    return ad.sub(ad.matvec(a, x), b)


# --- recurrent cells -------------------------------------------------------


def hyp_rnn_cell(params: Mapping, h, x, c: float, phi: str = "identity",
                 cfg: SafetyConfig = DEFAULT_SAFETY):
    """``phi((W (x) h + U (x) x) + b)`` in the ball."""
    pre = ball.mobius_add_chain(
        [ball.mobius_matvec(params["W"], h, c, cfg), ball.mobius_matvec(params["U"], x, c, cfg), params["b"]],
        c,
        cfg,
    )
    return apply_nonlinearity(phi, pre, c, cfg)


def _gate(params: Mapping, tag: str, h, x, c: float, cfg: SafetyConfig):
    pre = ball.mobius_add_chain(
        [
            ball.mobius_matvec(params["W" + tag], h, c, cfg),
            ball.mobius_matvec(params["U" + tag], x, c, cfg),
            params["b" + tag],
        ],
        c,
        cfg,
    )
    return ad.sigmoid(ball.log0(pre, c, cfg))


def gru_update(h, h_tilde, z, c: float, cfg: SafetyConfig = DEFAULT_SAFETY):
    """``h + diag(z) (x) (-h + h_tilde)``.

    Rows whose gate is exactly all-zero or all-one return ``h`` or
    ``h_tilde`` bit for bit (the formula only reaches them up to rounding).
    """
    step = ball.mobius_diag(z, ball.mobius_add(ad.neg(h), h_tilde, c, cfg), c, cfg)
    out = ball.mobius_add(h, step, c, cfg)
    zv = ad.value(z)
    ones = np.all(zv == 1.0, axis=-1, keepdims=True)
    if ones.any():
        out = ad.select(ones, h_tilde, out)
    zeros = np.all(zv == 0.0, axis=-1, keepdims=True)
    if zeros.any():
        out = ad.select(zeros, h, out)
    return out


def hyp_gru_cell(params: Mapping, h, x, c: float, phi: str = "identity",
                 cfg: SafetyConfig = DEFAULT_SAFETY, force_z=None):
    """Hyperbolic GRU step.  ``force_z`` overrides the update gate (diagnostics)."""
    r = _gate(params, "r", h, x, c, cfg)
    z = _gate(params, "z", h, x, c, cfg) if force_z is None else force_z
    # (W diag(r)) (x) h: the matrix acts on r * h while the norm ratio uses h
    wrh = ad.matvec(params["W"], ad.mul(r, h))
    reset = wrh if c == 0 else ball.mobius_linear(wrh, h, c, cfg)
    pre = ball.mobius_add_chain([reset, ball.mobius_matvec(params["U"], x, c, cfg), params["b"]], c, cfg)
    h_tilde = apply_nonlinearity(phi, pre, c, cfg)
    return gru_update(h, h_tilde, z, c, cfg)


def eucl_rnn_cell(params: Mapping, h, x, phi: str = "tanh"):
    pre = ad.add(ad.add(ad.matvec(params["W"], h), ad.matvec(params["U"], x)), params["b"])
    return euclidean_nonlinearity(phi)(pre)


def eucl_gru_cell(params: Mapping, h, x, phi: str = "tanh", force_z=None):
    def gate(tag):
        return ad.sigmoid(
            ad.add(ad.add(ad.matvec(params["W" + tag], h), ad.matvec(params["U" + tag], x)), params["b" + tag])
        )

    r = gate("r")
    z = gate("z") if force_z is None else force_z
    pre = ad.add(ad.add(ad.matvec(params["W"], ad.mul(r, h)), ad.matvec(params["U"], x)), params["b"])
    h_tilde = euclidean_nonlinearity(phi)(pre)
    return ad.add(h, ad.mul(z, ad.sub(h_tilde, h)))


def rnn_param_names(cell: str) -> tuple[str, ...]:
    if cell == "rnn":
        return ("W", "U", "b")
    if cell == "gru":
        return ("W", "U", "b", "Wr", "Ur", "br", "Wz", "Uz", "bz")
    raise ValueError(f"unknown cell {cell!r}")


def init_cell_params(rng: np.random.Generator, cell: str, hidden: int, inp: int,
                     hyperbolic: bool) -> dict[str, np.ndarray]:
    """Matrices ~ U(+-1/sqrt(fan_in)); biases near the origin (ball) or zero (Euclidean)."""
    out = {}
    for name in rnn_param_names(cell):
        if name.startswith("W"):
            out[name] = init_matrix(rng, hidden, hidden)
        elif name.startswith("U"):
            out[name] = init_matrix(rng, hidden, inp)
        elif hyperbolic:
            out[name] = init_ball(rng, (hidden,))
        else:
            out[name] = np.zeros(hidden)
    return out


# --- sequence encoder ------------------------------------------------------


def encode_sequence(cell: Callable, embeddings, tokens, lengths=None, h0=None):
    """Fold ``cell(h, x)`` over embedded ``tokens`` (batch, time) -> final state.

    Positions at or past a row's length leave its state untouched, so padded
    batches give the same result as encoding each row alone.
    """
    tokens = np.asarray(tokens)
    if tokens.ndim == 1:
        tokens = tokens[None, :]
    batch, steps = tokens.shape
    if steps == 0:
        raise ValueError("empty sequence")
    lengths = np.full(batch, steps) if lengths is None else np.asarray(lengths)
    if np.any(lengths < 1) or np.any(lengths > steps):
        raise ValueError("sequence lengths must lie in [1, time steps]")
    vocab = ad.value(embeddings).shape[0]
    valid = np.arange(steps)[None, :] < lengths[:, None]
    if np.any(((tokens < 0) | (tokens >= vocab)) & valid):
        raise ValueError(f"token id outside vocabulary [0, {vocab})")
    tokens = np.where(valid, tokens, 0)
    dim = ad.value(embeddings).shape[1]
    h = np.zeros((batch, dim)) if h0 is None else h0
    for t in range(steps):
        x = ad.take(embeddings, tokens[:, t])
        new = cell(h, x)
        live = valid[:, t : t + 1]
        h = new if live.all() else ad.select(live, new, h)
    return h
