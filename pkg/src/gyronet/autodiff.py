"""Reverse-mode differentiation over a fixed set of array primitives.

Every primitive accepts plain numpy arrays or :class:`Var` handles.  When no
argument is a ``Var`` the primitive simply returns the numpy result, so code
written against this module (the ball operations, the layers) runs unchanged
on raw arrays and on recorded values.

Vectors live on the last axis; reductions such as :func:`dot` and :func:`norm`
keep that axis with size one so results broadcast against their inputs.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

PRIMITIVES = frozenset(
    {
        "leaf",
        "add",
        "sub",
        "mul",
        "div",
        "neg",
        "scale",
        "dot",
        "norm",
        "sqrt",
        "tanh",
        "atanh",
        "sinh",
        "asinh",
        "exp",
        "log",
        "sigmoid",
        "clamp",
        "concat",
        "matvec",
        "sum",
        "select",
        "take",
    }
)

DEFAULT_TANH_CLAMP = 15.0
DEFAULT_ATANH_CLAMP = 1.0 - 1e-5


class TapeError(RuntimeError):
    """Misuse of a tape: mixed tapes, reused tape, non-scalar seed."""


class Var:
    """A value recorded on a :class:`Tape`."""

    __slots__ = ("tape", "index", "value", "kind", "parents", "vjp", "name")
    # numpy must defer to our reflected operators instead of broadcasting
    # over the object
    __array_ufunc__ = None

    def __init__(self, tape, value, kind, parents=(), vjp=None, name=None):
        self.tape = tape
        self.value = value
        self.kind = kind
        self.parents = parents
        self.vjp = vjp
        self.name = name
        self.index = len(tape.nodes)
        tape.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    @property
    def is_leaf(self) -> bool:
        return self.kind == "leaf"

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Var<{self.kind}{label} #{self.index} shape={self.value.shape}>"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(other, self)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / other)
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)


class Tape:
    """Append-only record of primitive applications, consumed by one backward pass."""

    def __init__(self):
        self.nodes: list[Var] = []
        self.consumed = False

    def __len__(self):
        return len(self.nodes)

    def leaf(self, value, name: str | None = None) -> Var:
        if self.consumed:
            raise TapeError("tape already consumed by backward(); record a new one")
        return Var(self, np.array(value, dtype=np.float64), "leaf", name=name)

    def leaves(self) -> list[Var]:
        return [n for n in self.nodes if n.kind == "leaf"]

    def backward(self, seed: Var) -> dict[Var, np.ndarray]:
        """Propagate adjoints from the scalar ``seed``; returns leaf -> gradient.

        Leaves that do not influence ``seed`` get a zero gradient.
        """
        if seed.tape is not self:
            raise TapeError("seed belongs to a different tape")
        if self.consumed:
            raise TapeError("backward() already ran on this tape")
        if seed.value.size != 1:
            raise TapeError(f"seed must be scalar, got shape {seed.value.shape}")
        self.consumed = True

        nodes = self.nodes
        grads: list[np.ndarray | None] = [None] * len(nodes)
        grads[seed.index] = np.ones_like(seed.value)
        for i in range(seed.index, -1, -1):
            g = grads[i]
            if g is None:
                continue
            node = nodes[i]
            if node.vjp is None:
                continue
            for parent, pg in zip(node.parents, node.vjp(g)):
                if parent is None or pg is None:
                    continue
                if pg.shape != parent.value.shape:
                    pg = _unbroadcast(pg, parent.value.shape)
                j = parent.index
                grads[j] = pg if grads[j] is None else grads[j] + pg
        return {
            n: (grads[n.index] if grads[n.index] is not None else np.zeros_like(n.value))
            for n in nodes
            if n.kind == "leaf"
        }


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.ndim > len(shape):
        g = g.sum(axis=tuple(range(g.ndim - len(shape))))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def value(a) -> np.ndarray:
    """The numeric value of ``a`` whether or not it is recorded.

    Floating inputs keep their precision (``gradcheck`` evaluates its
    differences in extended precision); anything else becomes float64.
    """
    if isinstance(a, Var):
        return a.value
    a = np.asarray(a)
    return a if a.dtype.kind == "f" else a.astype(np.float64)


def is_var(a) -> bool:
    return isinstance(a, Var)


def _tape_of(*args) -> Tape | None:
    tape = None
    for a in args:
        if isinstance(a, Var):
            if tape is None:
                tape = a.tape
            elif a.tape is not tape:
                raise TapeError("operands belong to different tapes")
    if tape is not None and tape.consumed:
        raise TapeError("cannot record on a consumed tape")
    return tape


def _parent(a):
    return a if isinstance(a, Var) else None


# --- binary arithmetic -----------------------------------------------------


def add(a, b):
    tape = _tape_of(a, b)
    av, bv = value(a), value(b)
    if tape is None:
        return av + bv
    return Var(tape, av + bv, "add", (_parent(a), _parent(b)), lambda g: (g, g))


def sub(a, b):
    tape = _tape_of(a, b)
    av, bv = value(a), value(b)
    if tape is None:
        return av - bv
    return Var(tape, av - bv, "sub", (_parent(a), _parent(b)), lambda g: (g, -g))


def mul(a, b):
    tape = _tape_of(a, b)
    av, bv = value(a), value(b)
    if tape is None:
        return av * bv
    return Var(tape, av * bv, "mul", (_parent(a), _parent(b)), lambda g: (g * bv, g * av))


def div(a, b):
    tape = _tape_of(a, b)
    av, bv = value(a), value(b)
    if not np.all(bv):
        raise ZeroDivisionError("division by an exact zero; perturb the origin first")
    out = av / bv
    if tape is None:
        return out
    return Var(tape, out, "div", (_parent(a), _parent(b)), lambda g: (g / bv, -g * out / bv))


def neg(a):
    tape = _tape_of(a)
    av = value(a)
    if tape is None:
        return -av
    return Var(tape, -av, "neg", (a,), lambda g: (-g,))


def scale(a, s: float):
    """Multiply by a python scalar constant."""
    tape = _tape_of(a)
    av = value(a)
    if tape is None:
        return av * s
    return Var(tape, av * s, "scale", (a,), lambda g: (g * s,))


# --- reductions ------------------------------------------------------------


def dot(a, b):
    """Inner product over the last axis, keeping it with size one."""
    tape = _tape_of(a, b)
    av, bv = value(a), value(b)
    out = np.sum(av * bv, axis=-1, keepdims=True)
    if tape is None:
        return out
    return Var(tape, out, "dot", (_parent(a), _parent(b)), lambda g: (g * bv, g * av))


def norm(a):
    """Euclidean norm over the last axis (kept with size one).

    The adjoint is ``a / |a|``; at an exact zero it is taken to be zero.
    """
    tape = _tape_of(a)
    av = value(a)
    out = np.sqrt(np.sum(av * av, axis=-1, keepdims=True))
    if tape is None:
        return out

    def vjp(g):
        safe = np.where(out == 0.0, 1.0, out)
        return (np.where(out == 0.0, 0.0, g / safe) * av,)

    return Var(tape, out, "norm", (a,), vjp)


def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy naming
    tape = _tape_of(a)
    av = value(a)
    out = np.sum(av, axis=axis, keepdims=keepdims)
    if tape is None:
        return out
    shape = av.shape

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return Var(tape, np.asarray(out), "sum", (a,), vjp)


def mean(a, axis=None):
    n = value(a).size if axis is None else value(a).shape[axis]
    return scale(sum(a, axis=axis), 1.0 / n)


# --- elementwise transcendental ------------------------------------------


def sqrt(a):
    tape = _tape_of(a)
    out = np.sqrt(value(a))
    if tape is None:
        return out
    return Var(tape, out, "sqrt", (a,), lambda g: (g / (2.0 * out),))


def tanh(a, clamp: float = DEFAULT_TANH_CLAMP):
    """tanh of the argument clipped to [-clamp, clamp]; zero adjoint outside."""
    tape = _tape_of(a)
    av = value(a)
    z = np.clip(av, -clamp, clamp)
    out = np.tanh(z)
    if tape is None:
        return out
    inside = np.abs(av) <= clamp
    return Var(tape, out, "tanh", (a,), lambda g: (g * (1.0 - out * out) * inside,))


def atanh(a, clamp: float = DEFAULT_ATANH_CLAMP):
    """atanh of the argument clipped to [-clamp, clamp]; zero adjoint outside."""
    tape = _tape_of(a)
    av = value(a)
    z = np.clip(av, -clamp, clamp)
    out = np.arctanh(z)
    if tape is None:
        return out
    inside = np.abs(av) <= clamp
    return Var(tape, out, "atanh", (a,), lambda g: (g * inside / (1.0 - z * z),))


def sinh(a):
    tape = _tape_of(a)
    av = value(a)
    out = np.sinh(av)
    if tape is None:
        return out
    return Var(tape, out, "sinh", (a,), lambda g: (g * np.cosh(av),))


def asinh(a):
    tape = _tape_of(a)
    av = value(a)
    out = np.arcsinh(av)
    if tape is None:
        return out
    return Var(tape, out, "asinh", (a,), lambda g: (g / np.sqrt(1.0 + av * av),))


def exp(a):
    tape = _tape_of(a)
    out = np.exp(value(a))
    if tape is None:
        return out
    return Var(tape, out, "exp", (a,), lambda g: (g * out,))


def log(a):
    tape = _tape_of(a)
    av = value(a)
    out = np.log(av)
    if tape is None:
        return out
    return Var(tape, out, "log", (a,), lambda g: (g / av,))


def sigmoid(a):
    tape = _tape_of(a)
    av = value(a)
    # split by sign so exp never overflows
    e = np.exp(-np.abs(av))
    out = np.where(av >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    if tape is None:
        return out
    return Var(tape, out, "sigmoid", (a,), lambda g: (g * out * (1.0 - out),))


def clamp(a, lo: float = -np.inf, hi: float = np.inf):
    """Clip to [lo, hi]; adjoint is 1 inside the closed interval, 0 outside."""
    tape = _tape_of(a)
    av = value(a)
    out = np.clip(av, lo, hi)
    if tape is None:
        return out
    inside = (av >= lo) & (av <= hi)
    return Var(tape, out, "clamp", (a,), lambda g: (g * inside,))


# --- structural ------------------------------------------------------------


def concat(items: Sequence, axis: int = -1):
    tape = _tape_of(*items)
    vals = [value(x) for x in items]
    out = np.concatenate(vals, axis=axis)
    if tape is None:
        return out
    bounds = np.cumsum([v.shape[axis] for v in vals])[:-1]

    def vjp(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Var(tape, out, "concat", tuple(_parent(x) for x in items), vjp)


def matvec(m, x):
    """Apply matrix ``m`` (rows x cols) to every vector on the last axis of ``x``."""
    tape = _tape_of(m, x)
    mv, xv = value(m), value(x)
    if mv.ndim != 2 or xv.shape[-1] != mv.shape[1]:
        raise ValueError(f"matvec shape mismatch: {mv.shape} @ {xv.shape}")
    out = xv @ mv.T
    if tape is None:
        return out

    def vjp(g):
        gx = g @ mv
        gm = g.reshape(-1, mv.shape[0]).T @ xv.reshape(-1, mv.shape[1])
        return gm, gx

    return Var(tape, out, "matvec", (_parent(m), _parent(x)), vjp)


def select(cond, a, b):
    """Elementwise ``a`` where the constant mask ``cond`` holds, else ``b``."""
    cond = np.asarray(cond, dtype=bool)
    tape = _tape_of(a, b)
    av, bv = value(a), value(b)
    out = np.where(cond, av, bv)
    if tape is None:
        return out
    return Var(
        tape,
        out,
        "select",
        (_parent(a), _parent(b)),
        lambda g: (np.where(cond, g, 0.0), np.where(cond, 0.0, g)),
    )


def take(table, ids):
    """Gather rows of a 2-D ``table`` by integer ``ids`` of any shape."""
    ids = np.asarray(ids)
    tape = _tape_of(table)
    tv = value(table)
    out = tv[ids]
    if tape is None:
        return out

    def vjp(g):
        acc = np.zeros_like(tv)
        np.add.at(acc, ids, g)
        return (acc,)

    return Var(tape, out, "take", (table,), vjp)


# --- gradient checking -----------------------------------------------------


@dataclass
class GradcheckReport:
    """Per-coordinate comparison of reverse-mode and central-difference gradients."""

    rows: list[tuple[str, float, float, float]] = field(default_factory=list)
    tol: float = 1e-5

    @property
    def max_rel_err(self) -> float:
        return max((r[3] for r in self.rows), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["coordinate", "analytic", "numeric", "rel_err"])
        for name, a, n, e in self.rows:
            w.writerow([name, repr(a), repr(n), repr(e)])
        return buf.getvalue()


def gradcheck(
    f: Callable,
    point: np.ndarray | Mapping[str, np.ndarray],
    h: float = 1e-6,
    tol: float = 1e-5,
    floor: float = 1e-6,
    numeric_dtype=np.longdouble,
) -> GradcheckReport:
    """Compare reverse-mode gradients of scalar ``f`` with central differences.

    ``point`` is an array or a name -> array mapping; ``f`` receives the same
    structure (as Vars for the reverse pass, as arrays for the differences).
    The relative error of a coordinate is ``|a - n| / max(|a|, |n|, floor)``.
    Differences are evaluated in ``numeric_dtype``; the default extended
    precision keeps roundoff in ``f`` from swamping small gradients.
    """
    single = not isinstance(point, Mapping)
    params = {"x": np.asarray(point, dtype=np.float64)} if single else {
        k: np.asarray(v, dtype=np.float64) for k, v in point.items()
    }

    def call(args):
        return f(args["x"]) if single else f(args)

    tape = Tape()
    leaves = {k: tape.leaf(v, name=k) for k, v in params.items()}
    out = call(leaves)
    if not isinstance(out, Var):
        raise TapeError("function output does not depend on its inputs")
    grads = tape.backward(out)

    report = GradcheckReport(tol=tol)
    for k, v in params.items():
        analytic = grads[leaves[k]]
        for idx in np.ndindex(*v.shape):
            plus = {n: a.astype(numeric_dtype) for n, a in params.items()}
            minus = {n: a.astype(numeric_dtype) for n, a in params.items()}
            plus[k][idx] += h
            minus[k][idx] -= h
            numeric = float((np.sum(call(plus)) - np.sum(call(minus))) / (2 * h))
            a = float(analytic[idx])
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            label = k if single and not idx else f"{k}{list(idx)}"
            report.rows.append((label, a, numeric, err))
    return report
