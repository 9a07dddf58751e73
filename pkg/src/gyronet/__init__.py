"""Gyrovector algebra, layers and optimisers on the Poincare ball."""

from . import autodiff, ball, data, layers, optim
from .ball import DEFAULT_SAFETY, Hyperplane, SafetyConfig

__all__ = ["autodiff", "ball", "data", "layers", "optim", "DEFAULT_SAFETY", "Hyperplane", "SafetyConfig"]
__version__ = "0.1.0"
