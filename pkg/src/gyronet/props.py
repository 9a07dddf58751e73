"""Registered property checks for the ball, layers, optimizers and autodiff.

Each property is a function of a seed returning ``(max_error, cases)`` or
``(max_error, cases, detail)``; it passes when ``max_error`` is below the
registered tolerance.  Properties look up operations through the ``ball``
module at call time, so patching ``ball.mobius_add`` is visible here.
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import ball, layers, optim

C = 1.0
CASES = 1000
LIMIT_C = 1e-8


@dataclass
class Property:
    name: str
    module: str
    tol: float
    fn: Callable[[int], tuple]
    description: str = ""


@dataclass
class ResultRow:
    name: str
    module: str
    passed: bool
    max_error: float
    tol: float
    cases: int
    seconds: float
    detail: str = ""


@dataclass
class Report:
    rows: list[ResultRow] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def row(self, name: str) -> ResultRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["name", "module", "passed", "max_error", "tolerance", "cases", "seconds", "detail"])
        for r in self.rows:
            w.writerow([r.name, r.module, int(r.passed), repr(r.max_error), repr(r.tol), r.cases,
                        f"{r.seconds:.3f}", r.detail])
        return buf.getvalue()


REGISTRY: list[Property] = []


def register(name: str, module: str, tol: float, description: str = ""):
    def deco(fn):
        REGISTRY.append(Property(name, module, tol, fn, description))
        return fn

    return deco


def run_property_suite(seed: int = 0, names=None) -> Report:
    report = Report()
    for prop in REGISTRY:
        if names is not None and prop.name not in names:
            continue
        t0 = time.perf_counter()
        try:
            out = prop.fn(seed)
            err, cases = float(out[0]), int(out[1])
            detail = out[2] if len(out) > 2 else ""
            passed = bool(err < prop.tol)
        except Exception as exc:  # a crash is a failed property, not a crashed suite
            err, cases, detail, passed = float("nan"), 0, f"{type(exc).__name__}: {exc}", False
        report.rows.append(ResultRow(prop.name, prop.module, passed, err, prop.tol, cases,
                                     time.perf_counter() - t0, detail))
    return report


# --- sampling helpers ------------------------------------------------------


def rand_ball(rng: np.random.Generator, n: int, dim: int, radius: float, c: float = C) -> np.ndarray:
    """``n`` points uniform in the ball of Euclidean radius ``radius / sqrt(c)``."""
    x = rng.normal(size=(n, dim))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    return x * (radius / math.sqrt(c)) * rng.uniform(size=(n, 1)) ** (1.0 / dim)


def _rng(seed: int, salt: int) -> np.random.Generator:
    return np.random.default_rng([seed, salt])


def _max_norm_err(a, b) -> float:
    return float(np.max(np.linalg.norm(np.asarray(a) - np.asarray(b), axis=-1)))


def _rel_err(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.linalg.norm(a - b, axis=-1) / np.maximum(np.linalg.norm(b, axis=-1), 1e-300)))


# --- ball-core -------------------------------------------------------------


@register("left_cancellation", "ball", 1e-9, "|(-x)+(x+y) - y|, radius 0.9")
def p_left_cancellation(seed):
    rng = _rng(seed, 1)
    err = 0.0
    for dim in (2, 3, 5, 10):
        x, y = rand_ball(rng, CASES, dim, 0.9), rand_ball(rng, CASES, dim, 0.9)
        err = max(err, _max_norm_err(ball.mobius_add(-x, ball.mobius_add(x, y, C), C), y))
    return err, 4 * CASES


@register("scalar_distributivity", "ball", 1e-9, "(r+s)x = rx + sx")
def p_scalar_distributivity(seed):
    rng = _rng(seed, 2)
    x = rand_ball(rng, CASES, 5, 0.9)
    r = rng.uniform(-2, 2, size=(CASES, 1))
    s = rng.uniform(-2, 2, size=(CASES, 1))
    lhs = ball.mobius_scalar(r + s, x, C)
    rhs = ball.mobius_add(ball.mobius_scalar(r, x, C), ball.mobius_scalar(s, x, C), C)
    return _max_norm_err(lhs, rhs), CASES


@register("scalar_associativity", "ball", 1e-9, "(rs)x = r(sx)")
def p_scalar_associativity(seed):
    rng = _rng(seed, 3)
    x = rand_ball(rng, CASES, 5, 0.9)
    r = rng.uniform(-2, 2, size=(CASES, 1))
    s = rng.uniform(-2, 2, size=(CASES, 1))
    lhs = ball.mobius_scalar(r * s, x, C)
    rhs = ball.mobius_scalar(r, ball.mobius_scalar(s, x, C), C)
    return _max_norm_err(lhs, rhs), CASES


@register("n_fold_addition", "ball", 1e-9, "n x = x + ... + x (left to right), n <= 5")
def p_n_fold(seed):
    rng = _rng(seed, 4)
    x = rand_ball(rng, CASES, 5, 0.9)
    err = 0.0
    for n in range(1, 6):
        err = max(err, _max_norm_err(ball.mobius_scalar(float(n), x, C), ball.mobius_add_chain([x] * n, C)))
    return err, 5 * CASES


@register("scaling_property", "ball", 1e-9, "|r| x / |r x| = x / |x|")
def p_scaling(seed):
    rng = _rng(seed, 5)
    x = rand_ball(rng, CASES, 5, 0.9)
    r = rng.uniform(0.05, 3, size=(CASES, 1)) * rng.choice([-1.0, 1.0], size=(CASES, 1))
    rx = ball.mobius_scalar(r, x, C)
    lhs = ball.mobius_scalar(np.abs(r), x, C) / np.linalg.norm(rx, axis=1, keepdims=True)
    return _max_norm_err(lhs, x / np.linalg.norm(x, axis=1, keepdims=True)), CASES


@register("scalar_via_maps", "ball", 1e-9, "r x = exp0(r log0(x))")
def p_scalar_via_maps(seed):
    rng = _rng(seed, 6)
    x = rand_ball(rng, CASES, 5, 0.9)
    r = rng.uniform(-2, 2, size=(CASES, 1))
    return _max_norm_err(ball.mobius_scalar(r, x, C), ball.exp0(r * ball.log0(x, C), C)), CASES


@register("distance_oracle", "ball", 1e-9, "Mobius distance vs arccosh form at c = 1")
def p_distance_oracle(seed):
    rng = _rng(seed, 7)
    x, y = rand_ball(rng, CASES, 5, 0.9), rand_ball(rng, CASES, 5, 0.9)
    return float(np.max(np.abs(ball.distance(x, y, C)[:, 0] - ball.distance_cosh(x, y)[:, 0]))), CASES


@register("gyroline_element", "ball", 1e-4, "|(x+dx) - x| vs |dx| / (1 - c|x|^2), |dx| = 1e-6")
def p_gyroline(seed):
    rng = _rng(seed, 8)
    x = rand_ball(rng, CASES, 5, 0.9)
    d = rng.normal(size=x.shape)
    d *= 1e-6 / np.linalg.norm(d, axis=1, keepdims=True)
    lhs = np.linalg.norm(ball.mobius_sub(x + d, x, C), axis=1)
    rhs = 1e-6 / (1 - C * np.sum(x * x, axis=1))
    return float(np.max(np.abs(lhs - rhs) / 1e-6)), CASES


@register("exp_log_roundtrip", "ball", 1e-8, "log_x(exp_x(v)) = v and exp_x(log_x(y)) = y")
def p_exp_log(seed):
    rng = _rng(seed, 9)
    x, y = rand_ball(rng, CASES, 5, 0.9), rand_ball(rng, CASES, 5, 0.9)
    # tangent vectors whose image stays inside radius 0.9 around the base point
    v = ball.log_map(x, rand_ball(rng, CASES, 5, 0.9), C)
    e1 = _max_norm_err(ball.log_map(x, ball.exp_map(x, v, C), C), v)
    e2 = _max_norm_err(ball.exp_map(x, ball.log_map(x, y, C), C), y)
    e3 = _max_norm_err(ball.exp0(ball.log0(y, C), C), y)
    w = ball.log0(y, C)
    e4 = _max_norm_err(ball.log0(ball.exp0(w, C), C), w)
    return max(e1 / max(1.0, float(np.max(np.linalg.norm(v, axis=1)))), e2, e3, e4), 4 * CASES


@register("parallel_transport_isometry", "ball", 1e-9, "g_x(Pu, Pv) = g_0(u, v)")
def p_transport(seed):
    rng = _rng(seed, 10)
    x = rand_ball(rng, CASES, 5, 0.9)
    u, v = rng.normal(size=x.shape), rng.normal(size=x.shape)
    pu = ball.parallel_transport_from_origin(x, u, C)
    pv = ball.parallel_transport_from_origin(x, v, C)
    lhs = ball.inner(x, pu, pv, C)[:, 0]
    rhs = ball.inner(np.zeros_like(x), u, v, C)[:, 0]
    # linearity: P(2u + v) = 2 Pu + Pv
    lin = _max_norm_err(ball.parallel_transport_from_origin(x, 2 * u + v, C), 2 * pu + pv)
    return max(float(np.max(np.abs(lhs - rhs) / np.maximum(1.0, np.abs(rhs)))), lin), CASES


@register("geodesic_endpoints_midpoint", "ball", 1e-9, "g(0) = x, g(1) = y, d(x, g(1/2)) = d(g(1/2), y)")
def p_geodesic(seed):
    rng = _rng(seed, 11)
    x, y = rand_ball(rng, CASES, 5, 0.9), rand_ball(rng, CASES, 5, 0.9)
    e0 = _max_norm_err(ball.geodesic(x, y, 0.0, C), x)
    e1 = _max_norm_err(ball.geodesic(x, y, 1.0, C), y)
    m = ball.geodesic(x, y, 0.5, C)
    d = ball.distance(x, y, C)[:, 0]
    dm = np.abs(ball.distance(x, m, C)[:, 0] - d / 2) + np.abs(ball.distance(m, y, C)[:, 0] - d / 2)
    return max(e0, e1, float(np.max(dm / np.maximum(1.0, d)))), CASES


@register("unit_speed_geodesic", "ball", 1e-8, "d(x, g(t)) = |t| for unit metric speed")
def p_unit_speed(seed):
    rng = _rng(seed, 12)
    x = rand_ball(rng, 200, 4, 0.7)
    v = rng.normal(size=x.shape)
    v /= np.sqrt(ball.inner(x, v, v, C))
    err = 0.0
    for t in (0.1, 0.5, 1.0, 2.0):
        err = max(err, float(np.max(np.abs(ball.distance(x, ball.unit_speed_geodesic(x, v, t, C), C) - t))))
    return err, 800


@register("law_of_sines", "ball", 1e-6, "sin(A)/sinh(sqrt(c) a) equal at all three vertices")
def p_law_of_sines(seed):
    rng = _rng(seed, 13)
    n, err = 100, 0.0
    for c in (1.0, 0.5):
        pts = [rand_ball(rng, n, 3, 0.35, c) for _ in range(3)]
        a, b, cc = pts
        sides = [ball.distance(b, cc, c)[:, 0], ball.distance(a, cc, c)[:, 0], ball.distance(a, b, c)[:, 0]]
        angles = [ball.gyroangle(a, b, cc, c), ball.gyroangle(b, a, cc, c), ball.gyroangle(cc, a, b, c)]
        assert max(float(np.max(s)) for s in sides) * math.sqrt(c) < 1.5
        ratios = [np.sin(ang) / np.sinh(math.sqrt(c) * s) for ang, s in zip(angles, sides)]
        for i in range(3):
            for j in range(i + 1, 3):
                err = max(err, float(np.max(np.abs(ratios[i] - ratios[j]) / np.abs(ratios[j]))))
    return err, 2 * n


@register("gyro_chain_rule", "ball", 1e-3, "(h o a)'(t) = a'(t) (x) h'(a(t)) for a geodesic h, a(t) = t^2")
def p_chain_rule(seed):
    rng = _rng(seed, 14)
    err, n = 0.0, 100
    for i in range(n):
        x, y = rand_ball(rng, 1, 4, 0.8)[0], rand_ball(rng, 1, 4, 0.8)[0]
        t = float(rng.uniform(0.2, 0.9))

        def h(s, x=x, y=y):
            return ball.geodesic(x, y, s, C)

        lhs = ball.gyroderivative_numeric(lambda s: h(s * s), t, C)
        rhs = ball.mobius_scalar(2 * t, ball.gyroderivative_numeric(h, t * t, C), C)
        err = max(err, float(np.linalg.norm(lhs - rhs) / np.linalg.norm(rhs)))
    # at t = 0 the gyroderivative of the geodesic is exactly -x + y
    x, y = rand_ball(rng, 1, 4, 0.8)[0], rand_ball(rng, 1, 4, 0.8)[0]
    g0 = ball.gyroderivative_numeric(lambda s: ball.geodesic(x, y, s, C), 0.0, C)
    u = ball.mobius_add(-x, y, C)
    err = max(err, float(np.linalg.norm(g0 - u) / np.linalg.norm(u)))
    return err, n + 1


def _limit_errors(rng) -> dict[str, float]:
    c = LIMIT_C
    x, y = rng.uniform(-0.5, 0.5, size=(200, 4)), rng.uniform(-0.5, 0.5, size=(200, 4))
    r = rng.uniform(-2, 2, size=(200, 1))
    m = rng.uniform(-1, 1, size=(3, 4))
    return {
        "add": _rel_err(ball.mobius_add(x, y, c), x + y),
        "scalar": _rel_err(ball.mobius_scalar(r, x, c), r * x),
        "distance": _rel_err(ball.distance(x, y, c), 2 * np.linalg.norm(x - y, axis=1, keepdims=True)),
        "exp": _rel_err(ball.exp_map(x, y, c), x + y),
        "log": _rel_err(ball.log_map(x, y, c), y - x),
        "matvec": _rel_err(ball.mobius_matvec(m, x, c), x @ m.T),
    }


@register("euclidean_limits_ball", "ball", 1e-5, "ops at c = 1e-8 vs their c -> 0 formulas")
def p_limits_ball(seed):
    errs = _limit_errors(_rng(seed, 15))
    worst = max(errs, key=errs.get)
    return errs[worst], 6 * 200, f"worst={worst}"


def _hyperplane_samples(h: ball.Hyperplane, c: float, n: int) -> np.ndarray:
    """Dense samples of a 2-d hyperplane (a geodesic): ``p + t e`` with ``e`` orthogonal to ``a``."""
    a = h.normal(c)
    e = np.array([-a[1], a[0]]) / np.linalg.norm(a)
    s = np.linspace(-14.0, 14.0, n)
    u = np.tanh(s / 2.0)[:, None] * e / math.sqrt(c)
    return ball.mobius_add(h.p, u, c)


def hyperplane_brute_force(seed: int, n_cases: int = 100, samples: int = 10_000):
    """Closed-form distance minus the minimum over sampled hyperplane points, per case."""
    rng = _rng(seed, 16)
    gaps = []
    for _ in range(n_cases):
        x, p = rand_ball(rng, 1, 2, 0.8)[0], rand_ball(rng, 1, 2, 0.8)[0]
        h = ball.Hyperplane(p, rng.normal(size=2))
        pts = _hyperplane_samples(h, C, samples)
        assert np.all(ball.hyperplane_contains(pts, h, C, tol=1e-9))
        closed = float(ball.hyperplane_distance(x, h, C)[0])
        sampled = float(np.min(ball.distance(pts, x[None, :], C)))
        gaps.append(sampled - closed)
    return np.array(gaps)


@register("hyperplane_lower_bound", "ball", 1e-9, "closed form never exceeds sampled hyperplane distances")
def p_hyperplane_lb(seed):
    gaps = hyperplane_brute_force(seed)
    # error is how far the closed form exceeds the sampled minimum
    return max(0.0, float(-np.min(gaps))), len(gaps), f"max_gap={float(np.max(gaps)):.3g}"


# --- layers ----------------------------------------------------------------


@register("layer_composition_identity", "layers", 1e-8, "bias-free Mobius stacks = exp0 o f_k..f_1 o log0")
def p_composition(seed):
    rng = _rng(seed, 20)
    x = rand_ball(rng, 500, 4, 0.9)
    m1, m2, m3 = rng.uniform(-1, 1, (5, 4)), rng.uniform(-1, 1, (3, 5)), rng.uniform(-1, 1, (4, 3))
    stacked = ball.mobius_matvec(m3, layers.apply_nonlinearity(
        "tanh", ball.mobius_matvec(m2, ball.mobius_matvec(m1, x, C), C), C), C)
    direct = ball.exp0(np.tanh(ball.log0(x, C) @ m1.T @ m2.T) @ m3.T, C)
    return _max_norm_err(stacked, direct), 500


@register("layer_outputs_in_ball", "layers", 0.5, "outputs of every layer satisfy the ball invariant")
def p_in_ball(seed):
    rng = _rng(seed, 21)
    n, d = 300, 4
    x = rand_ball(rng, n, d, 0.999999)
    h = rand_ball(rng, n, d, 0.999999)
    big = lambda *s: rng.uniform(-20, 20, size=s)  # noqa: E731
    gru = {k: big(d, d) if k[0] in "WU" else rand_ball(rng, 1, d, 0.99999)[0] for k in layers.rnn_param_names("gru")}
    outs = [
        layers.hyp_linear(big(d, d), rand_ball(rng, 1, d, 0.99999)[0], x, C),
        layers.apply_nonlinearity("relu", x, C),
        layers.concat_matvec(big(d, d), big(d, d), x, h, C),
        layers.attach_scalar(big(d, d), x, rng.uniform(-50, 50, (n, 1)), rand_ball(rng, 1, d, 0.9)[0], C),
        layers.hyp_rnn_cell(gru, h, x, C),
        layers.hyp_gru_cell(gru, h, x, C),
    ]
    bad = sum(int(np.sum(~ball.in_ball(o, C, ball.DEFAULT_SAFETY))) for o in outs)
    return float(bad), n * len(outs), f"violations={bad}"


@register("mlr_argmax_rescale", "layers", 0.5, "argmax unchanged when all a'_k are scaled by one positive factor")
def p_mlr_rescale(seed):
    rng = _rng(seed, 22)
    x = rand_ball(rng, 500, 3, 0.9)
    p = rand_ball(rng, 4, 3, 0.5)
    a = rng.normal(size=(4, 3))
    base = np.argmax(layers.hyp_mlr_logits(p, a, x, C), axis=1)
    changed = 0
    for s in (0.01, 0.5, 3.0, 100.0):
        changed += int(np.sum(np.argmax(layers.hyp_mlr_logits(p, s * a, x, C), axis=1) != base))
    return float(changed), 2000, f"changed={changed}"


def _cell_params(rng, d, cell):
    return {k: rng.uniform(-1, 1, (d, d)) if k[0] in "WU" else rng.uniform(-0.3, 0.3, d)
            for k in layers.rnn_param_names(cell)}


@register("euclidean_limits_layers", "layers", 1e-4, "MLR logits and RNN/GRU cells at c = 1e-8")
def p_limits_layers(seed):
    rng = _rng(seed, 23)
    c = LIMIT_C
    x, h = rng.uniform(-0.5, 0.5, (200, 4)), rng.uniform(-0.5, 0.5, (200, 4))
    p, a = rng.uniform(-0.5, 0.5, (3, 4)), rng.normal(size=(3, 4))
    rnn, gru = _cell_params(rng, 4, "rnn"), _cell_params(rng, 4, "gru")
    errs = {
        "mlr": _rel_err(layers.hyp_mlr_logits(p, a, x, c).T, 4 * np.einsum("kn,bkn->kb", a, x[:, None, :] - p)),
        "rnn": _rel_err(layers.hyp_rnn_cell(rnn, h, x, c), layers.eucl_rnn_cell(rnn, h, x, "identity")),
        "gru": _rel_err(layers.hyp_gru_cell(gru, h, x, c), layers.eucl_gru_cell(gru, h, x, "identity")),
        "rnn_tanh": _rel_err(layers.hyp_rnn_cell(rnn, h, x, c, "tanh"), layers.eucl_rnn_cell(rnn, h, x, "tanh")),
    }
    worst = max(errs, key=errs.get)
    return errs[worst], 800, f"worst={worst}"


@register("gru_gate_limits", "layers", 0.5, "z = 0 gives h exactly; z = 1 gives h~ exactly")
def p_gru_limits(seed):
    rng = _rng(seed, 24)
    d = 4
    gru = _cell_params(rng, d, "gru")
    for k in ("b", "br", "bz"):
        gru[k] = rand_ball(rng, 1, d, 0.5)[0]
    h, x = rand_ball(rng, 200, d, 0.9), rand_ball(rng, 200, d, 0.9)
    zero = layers.hyp_gru_cell(gru, h, x, C, force_z=np.zeros((200, d)))
    one = layers.hyp_gru_cell(gru, h, x, C, force_z=np.ones((200, d)))
    r = layers._gate(gru, "r", h, x, C, ball.DEFAULT_SAFETY)
    wrh = ad.matvec(gru["W"], r * h)
    pre = ball.mobius_add_chain([ball.mobius_linear(wrh, h, C, ball.DEFAULT_SAFETY),
                                 ball.mobius_matvec(gru["U"], x, C), gru["b"]], C)
    mismatches = int(np.sum(zero != ball.project(h, C))) + int(np.sum(one != pre))
    return float(mismatches), 400, f"mismatched_coords={mismatches}"


# --- optim -----------------------------------------------------------------


@register("rsgd_stays_in_ball", "optim", 0.5, "hyperbolic parameters remain in the ball after every step")
def p_rsgd_ball(seed):
    rng = _rng(seed, 30)
    theta = rand_ball(rng, 200, 5, 0.999)
    bad = 0
    for step in (optim.rsgd_step_full, optim.rsgd_step_projected):
        t = theta.copy()
        for _ in range(20):
            t = step(t, rng.normal(scale=1e3, size=t.shape), 1.0, C)
            bad += int(np.sum(~ball.in_ball(t, C, ball.DEFAULT_SAFETY)))
    return float(bad), 2 * 20 * 200, f"violations={bad}"


@register("rsgd_descent", "optim", 0.01, "one RSGD step (lr 1e-3) does not increase a smooth loss")
def p_rsgd_descent(seed):
    rng = _rng(seed, 31)
    n = 1000
    theta = rand_ball(rng, n, 5, 0.7)
    target = rand_ball(rng, n, 5, 0.7)
    w = rng.normal(size=(n, 5))

    def loss(t):
        return ball.distance(t, target, C)[:, 0] ** 2 + np.sum(w * t, axis=1)

    tape = ad.Tape()
    tv = tape.leaf(theta)
    d = ball.distance(tv, target, C)
    total = ad.sum(ad.add(ad.mul(d, d), ad.dot(tv, w)))
    g = tape.backward(total)[tv]
    frac = 0.0
    for step in (optim.rsgd_step_full, optim.rsgd_step_projected):
        increased = loss(step(theta, g, 1e-3, C)) > loss(theta)
        frac = max(frac, float(np.mean(increased)))
    return frac, 2 * n, f"increase_fraction={frac}"


@register("riemannian_grad_scaling", "optim", 1e-14, "rescaling factor is (lambda_theta)^-2")
def p_rgrad(seed):
    rng = _rng(seed, 32)
    theta = rand_ball(rng, CASES, 5, 0.99)
    g = rng.normal(size=theta.shape)
    expected = g / ball.conformal_factor(theta, C) ** 2
    return _rel_err(optim.riemannian_grad(theta, g, C), expected), CASES


# --- autodiff ----------------------------------------------------------------


def _dist_loss(x, y):
    d = ball.distance(x, y, C)
    return ad.sum(ad.mul(d, d))


@register("backward_linearity", "autodiff", 1e-12, "gradient of a sum of losses = sum of gradients")
def p_linearity(seed):
    rng = _rng(seed, 40)
    x0, y, z = rand_ball(rng, 50, 4, 0.7), rand_ball(rng, 50, 4, 0.7), rand_ball(rng, 50, 4, 0.7)

    def grad(fn):
        tape = ad.Tape()
        x = tape.leaf(x0)
        return tape.backward(fn(x))[x]

    both = grad(lambda x: ad.add(_dist_loss(x, y), _dist_loss(ball.mobius_scalar(0.5, x, C), z)))
    parts = grad(lambda x: _dist_loss(x, y)) + grad(lambda x: _dist_loss(ball.mobius_scalar(0.5, x, C), z))
    return float(np.max(np.abs(both - parts)) / max(1.0, float(np.max(np.abs(parts))))), 50


@register("gradient_determinism", "autodiff", 0.5, "identical inputs give bit-identical gradients")
def p_determinism(seed):
    rng = _rng(seed, 41)
    gru = _cell_params(rng, 4, "gru")
    h, x = rand_ball(rng, 20, 4, 0.7), rand_ball(rng, 20, 4, 0.7)

    def grads():
        tape = ad.Tape()
        leaves = {k: tape.leaf(v) for k, v in gru.items()}
        out = layers.hyp_gru_cell(leaves, h, x, C)
        g = tape.backward(ad.sum(out))
        return {k: g[v] for k, v in leaves.items()}

    a, b = grads(), grads()
    diff = sum(int(np.sum(a[k] != b[k])) for k in a)
    return float(diff), 1, f"differing_entries={diff}"


# --- gradcheck suite ---------------------------------------------------------


@dataclass
class GradTarget:
    name: str
    tol: float
    make: Callable[[np.random.Generator], tuple[Callable, dict]]


def _weighted(out, w):
    return ad.sum(ad.mul(out, w))


def _pt(rng, *shape):
    return rand_ball(rng, int(np.prod(shape[:-1])) if len(shape) > 1 else 1, shape[-1], 0.7).reshape(shape)


def _t_ball(name, fn, n_in):
    def make(rng):
        pts = {f"x{i}": _pt(rng, 2, 3) for i in range(n_in)}
        w = rng.normal(size=(2, 3))
        return (lambda q: _weighted(fn(*[q[f"x{i}"] for i in range(n_in)]), w)), pts

    return GradTarget(name, 1e-5, make)


def _t_matvec(rng):
    w = rng.normal(size=(2, 3))
    return (lambda q: _weighted(ball.mobius_matvec(q["m"], q["x"], C), w)), {
        "m": rng.uniform(-1, 1, (3, 4)), "x": _pt(rng, 2, 4)}


def _t_scalar(rng):
    w = rng.normal(size=(2, 3))
    return (lambda q: _weighted(ball.mobius_scalar(q["r"], q["x"], C), w)), {
        "r": rng.uniform(-2, 2, (2, 1)), "x": _pt(rng, 2, 3)}


def _t_distance_sq(rng):
    return (lambda q: _dist_loss(q["x"], q["y"])), {"x": _pt(rng, 2, 3), "y": _pt(rng, 2, 3)}


def _t_hyp_linear(rng):
    w = rng.normal(size=(2, 3))
    return (lambda q: _weighted(layers.hyp_linear(q["m"], q["b"], q["x"], C), w)), {
        "m": rng.uniform(-1, 1, (3, 4)), "b": _pt(rng, 3), "x": _pt(rng, 2, 4)}


def _t_nonlin(phi):
    def make(rng):
        w = rng.normal(size=(2, 3))
        return (lambda q: _weighted(layers.apply_nonlinearity(phi, q["x"], C), w)), {"x": _pt(rng, 2, 3)}

    return make


def _t_concat(rng):
    w = rng.normal(size=(2, 3))
    return (lambda q: _weighted(layers.concat_matvec(q["m1"], q["m2"], q["x1"], q["x2"], C), w)), {
        "m1": rng.uniform(-1, 1, (3, 3)), "m2": rng.uniform(-1, 1, (3, 3)),
        "x1": _pt(rng, 2, 3), "x2": _pt(rng, 2, 3)}


def _t_attach(rng):
    w = rng.normal(size=(2, 3))
    return (lambda q: _weighted(layers.attach_scalar(q["m"], q["x"], q["y"], q["b"], C), w)), {
        "m": rng.uniform(-1, 1, (3, 3)), "x": _pt(rng, 2, 3), "y": rng.uniform(0, 2, (2, 1)), "b": _pt(rng, 3)}


def _t_mlr(rng):
    w = rng.normal(size=(2, 3))
    return (lambda q: _weighted(layers.hyp_mlr_logits(q["p"], q["a"], q["x"], C), w)), {
        "p": _pt(rng, 3, 4), "a": rng.normal(size=(3, 4)), "x": _pt(rng, 2, 4)}


def _t_eucl_mlr(rng):
    w = rng.normal(size=(2, 3))
    return (lambda q: _weighted(layers.eucl_mlr_logits(q["A"], q["b"], q["x"]), w)), {
        "A": rng.normal(size=(3, 4)), "b": rng.normal(size=3), "x": rng.normal(size=(2, 4))}


def _t_cell(cell, hyperbolic):
    def make(rng):
        d = 3
        params = _cell_params(rng, d, cell)
        if hyperbolic:
            for k in params:
                if k.startswith("b"):
                    params[k] = _pt(rng, d)
            params["h"], params["x"] = _pt(rng, 2, d), _pt(rng, 2, d)
        else:
            params["h"], params["x"] = rng.uniform(-1, 1, (2, d)), rng.uniform(-1, 1, (2, d))
        w = rng.normal(size=(2, d))
        if hyperbolic:
            fn = layers.hyp_gru_cell if cell == "gru" else layers.hyp_rnn_cell
            return (lambda q: _weighted(fn(q, q["h"], q["x"], C), w)), params
        fn = layers.eucl_gru_cell if cell == "gru" else layers.eucl_rnn_cell
        return (lambda q: _weighted(fn(q, q["h"], q["x"]), w)), params

    return make


def _t_entailment(enc, mlr, cell):
    def make(rng):
        from .config import ExperimentConfig
        from .data import PrefixSplit, gen_prefix_pairs
        from .model import EntailmentModel, cross_entropy

        cfg = ExperimentConfig(geometry_encoder=enc, geometry_ffnn=enc, geometry_mlr=mlr, cell=cell, dim=2)
        model = EntailmentModel(cfg, 4)
        while True:
            split = PrefixSplit.from_pairs(gen_prefix_pairs(2, 10, rng, vocab=4, max_len=3))
            params = model.init_params(rng)
            # move every ball parameter off the near-origin init so all terms matter
            for k, kind in model.kinds.items():
                if kind != optim.EUCLIDEAN:
                    params[k] = _pt(rng, *params[k].shape)
            if "mlr.a" in params:
                # the init scale (0.01) puts h = 1e-6 at 1e-4 relative steps of a 1/|a'| function
                params["mlr.a"] = rng.normal(size=params["mlr.a"].shape)
            if enc == "euclidean" or _interior(model, params, split):
                return (lambda q: cross_entropy(model.logits(q, split), split.labels)), params

    return make


def _interior(model, params, split, radius: float = 0.9) -> bool:
    """Whether every ball-valued activation stays inside ``radius``.

    Points where an activation sits on the projection radius are kinks of the
    loss, not interior points, and central differences are meaningless there.
    """
    h1, h2 = model.encode(params, split)
    acts = [h1, h2, model.features(params, h1, h2)]
    return all(float(np.max(np.linalg.norm(a, axis=-1))) <= radius for a in acts)


GRAD_TARGETS: list[GradTarget] = [
    _t_ball("mobius_add", lambda x, y: ball.mobius_add(x, y, C), 2),
    GradTarget("mobius_scalar", 1e-5, _t_scalar),
    GradTarget("distance_squared", 1e-5, _t_distance_sq),
    _t_ball("exp_map", lambda x, v: ball.exp_map(x, v, C), 2),
    _t_ball("log_map", lambda x, y: ball.log_map(x, y, C), 2),
    _t_ball("exp0", lambda v: ball.exp0(v, C), 1),
    _t_ball("log0", lambda y: ball.log0(y, C), 1),
    _t_ball("parallel_transport", lambda x, v: ball.parallel_transport_from_origin(x, v, C), 2),
    _t_ball("geodesic", lambda x, y: ball.geodesic(x, y, 0.3, C), 2),
    _t_ball("conformal_factor", lambda x: ball.conformal_factor(x, C), 1),
    GradTarget("mobius_matvec", 1e-5, _t_matvec),
    _t_ball("mobius_diag", lambda d, x: ball.mobius_diag(d, x, C), 2),
    _t_ball("mobius_fn_tanh", lambda x: ball.mobius_fn_apply(ad.tanh, x, C), 1),
    GradTarget("hyp_linear", 1e-5, _t_hyp_linear),
    GradTarget("nonlinearity_tanh", 1e-5, _t_nonlin("tanh")),
    GradTarget("nonlinearity_relu", 1e-5, _t_nonlin("relu")),
    GradTarget("concat_matvec", 1e-5, _t_concat),
    GradTarget("attach_scalar", 1e-5, _t_attach),
    GradTarget("hyp_mlr", 1e-5, _t_mlr),
    GradTarget("eucl_mlr", 1e-5, _t_eucl_mlr),
    GradTarget("hyp_rnn_cell", 1e-5, _t_cell("rnn", True)),
    GradTarget("hyp_gru_cell", 1e-4, _t_cell("gru", True)),
    GradTarget("eucl_rnn_cell", 1e-5, _t_cell("rnn", False)),
    GradTarget("eucl_gru_cell", 1e-4, _t_cell("gru", False)),
    GradTarget("entailment_hyp_gru", 1e-5, _t_entailment("hyperbolic", "hyperbolic", "gru")),
    GradTarget("entailment_hyp_gru_eucl_mlr", 1e-5, _t_entailment("hyperbolic", "euclidean", "gru")),
    GradTarget("entailment_hyp_rnn", 1e-5, _t_entailment("hyperbolic", "hyperbolic", "rnn")),
    GradTarget("entailment_eucl_gru", 1e-5, _t_entailment("euclidean", "euclidean", "gru")),
    GradTarget("entailment_eucl_rnn", 1e-5, _t_entailment("euclidean", "euclidean", "rnn")),
]


def run_gradcheck_suite(seed: int = 0, points: int = 100, names=None, h: float = 1e-6) -> Report:
    """Central-difference check of every target at ``points`` random interior points (radius <= 0.7)."""
    report = Report()
    for ti, target in enumerate(GRAD_TARGETS):
        if names is not None and target.name not in names:
            continue
        rng = _rng(seed, 100 + ti)
        t0 = time.perf_counter()
        worst, where = 0.0, ""
        try:
            for i in range(points):
                f, point = target.make(rng)
                rep = ad.gradcheck(f, point, h=h, tol=target.tol)
                if rep.max_rel_err >= worst:
                    worst = rep.max_rel_err
                    row = max(rep.rows, key=lambda r: r[3])
                    where = f"point {i} {row[0]}"
            passed = worst < target.tol
        except Exception as exc:
            worst, passed, where = float("nan"), False, f"{type(exc).__name__}: {exc}"
        report.rows.append(ResultRow(target.name, "gradcheck", passed, worst, target.tol, points,
                                     time.perf_counter() - t0, where))
    return report
