"""Riemannian SGD for ball-valued parameters and Adam for Euclidean ones."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, MutableMapping

import numpy as np

from . import ball
from .ball import DEFAULT_SAFETY, SafetyConfig

EUCLIDEAN = "euclidean"
HYP_EMBEDDING = "hyperbolic-embedding"
HYP_OTHER = "hyperbolic-other"
KINDS = (EUCLIDEAN, HYP_EMBEDDING, HYP_OTHER)
HYPERBOLIC_METHODS = ("rsgd_full", "rsgd_projected")


class NonFiniteGradient(FloatingPointError):
    pass


def _check_finite(g: np.ndarray) -> None:
    if not np.all(np.isfinite(g)):
        raise NonFiniteGradient("gradient has non-finite entries")


def riemannian_grad(theta: np.ndarray, g_eucl: np.ndarray, c: float) -> np.ndarray:
    """Rescale a Euclidean gradient by the inverse metric, ``(1 - c|theta|^2)^2 / 4``."""
    if c == 0:
        return g_eucl / 4.0
    sq = np.sum(theta * theta, axis=-1, keepdims=True)
    return ((1.0 - c * sq) ** 2 / 4.0) * g_eucl


def rsgd_step_full(theta, g_eucl, lr: float, c: float, cfg: SafetyConfig = DEFAULT_SAFETY):
    """``exp_theta(-lr * grad_R)``, projected back inside the ball."""
    _check_finite(g_eucl)
    step = -lr * riemannian_grad(theta, g_eucl, c)
    return ball.project(ball.exp_map(theta, step, c, cfg), c, cfg)


def rsgd_step_projected(theta, g_eucl, lr: float, c: float, cfg: SafetyConfig = DEFAULT_SAFETY):
    """Retraction ``theta - lr * grad_R`` followed by projection onto the ball."""
    _check_finite(g_eucl)
    return ball.project(theta - lr * riemannian_grad(theta, g_eucl, c), c, cfg)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(state: AdamState, theta: np.ndarray, g: np.ndarray, lr: float) -> np.ndarray:
    """Bias-corrected Adam update; mutates ``state``."""
    _check_finite(g)
    if state.m.shape != theta.shape:
        raise ValueError("Adam state shape does not match parameter")
    state.step += 1
    state.m = state.beta1 * state.m + (1 - state.beta1) * g
    state.v = state.beta2 * state.v + (1 - state.beta2) * g * g
    m_hat = state.m / (1 - state.beta1**state.step)
    v_hat = state.v / (1 - state.beta2**state.step)
    return theta - lr * m_hat / (np.sqrt(v_hat) + state.eps)


@dataclass
class ParamGroup:
    kind: str
    lr: float
    names: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown parameter kind {self.kind!r}")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")


class Optimizer:
    """Applies one update per step to every group; Adam for Euclidean groups.

    A step whose gradients contain any non-finite entry is skipped entirely
    and counted in ``skipped``.
    """

    def __init__(self, groups: list[ParamGroup], c: float, hyperbolic: str = "rsgd_full",
                 cfg: SafetyConfig = DEFAULT_SAFETY):
        if hyperbolic not in HYPERBOLIC_METHODS:
            raise ValueError(f"unknown hyperbolic optimizer {hyperbolic!r}")
        seen: set[str] = set()
        for grp in groups:
            dup = seen.intersection(grp.names)
            if dup:
                raise ValueError(f"parameters in more than one group: {sorted(dup)}")
            seen.update(grp.names)
        self.groups = groups
        self.c = c
        self.hyperbolic = hyperbolic
        self.cfg = cfg
        self.adam: dict[str, AdamState] = {}
        self.skipped = 0
        self.steps = 0

    def step(self, params: MutableMapping[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> bool:
        """Update ``params`` in place; returns False when the step was skipped."""
        if not all(np.all(np.isfinite(grads[n])) for grp in self.groups for n in grp.names if n in grads):
            self.skipped += 1
            return False
        rsgd = rsgd_step_full if self.hyperbolic == "rsgd_full" else rsgd_step_projected
        for grp in self.groups:
            for name in grp.names:
                if name not in grads:
                    continue
                g = grads[name]
                if grp.kind == EUCLIDEAN:
                    state = self.adam.get(name)
                    if state is None:
                        state = self.adam[name] = AdamState(np.zeros_like(g), np.zeros_like(g))
                    params[name] = adam_step(state, params[name], g, grp.lr)
                else:
                    params[name] = rsgd(params[name], g, grp.lr, self.c, self.cfg)
        self.steps += 1
        return True
