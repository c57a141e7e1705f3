"""Gradient-descent updates with optional Adam scaling and global-norm clipping."""

from __future__ import annotations

import math

import numpy as np

from .params import ParameterSet


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> tuple[dict[str, np.ndarray], float]:
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm is None or max_norm <= 0 or total <= max_norm:
        return grads, total
    scale = max_norm / total
    return {k: g * scale for k, g in grads.items()}, total


def _check_finite(grads: dict[str, np.ndarray]) -> None:
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")


def optimizer_step(params: ParameterSet, grads: dict[str, np.ndarray], lr: float) -> ParameterSet:
    """Plain update ``p <- p - lr * g`` applied in place."""
    _check_finite(grads)
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name!r} has shape {g.shape}, parameter has {p.shape}")
        p.data = p.data - lr * g
    return params


class Optimizer:
    """Stateful optimizer over a :class:`ParameterSet`.

    ``adam=False`` gives the baseline rule of :func:`optimizer_step`; with
    ``adam=True`` every step is rescaled by bias-corrected first and second
    moment estimates.
    """

    def __init__(self, params: ParameterSet, lr: float = 1e-3, *, adam: bool = False,
                 clip_norm: float | None = 5.0, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.adam = adam
        self.clip_norm = clip_norm
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self._m = {n: np.zeros_like(p.data) for n, p in params.items()}
        self._v = {n: np.zeros_like(p.data) for n, p in params.items()}

    def step(self) -> float:
        """Apply one update from the parameters' current ``.grad``; returns the pre-clip norm."""
        grads = self.params.grads()
        _check_finite(grads)
        grads, norm = clip_global_norm(grads, self.clip_norm)
        if not self.adam:
            optimizer_step(self.params, grads, self.lr)
            return norm
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            m = self._m[name] = self.beta1 * self._m[name] + (1.0 - self.beta1) * g
            v = self._v[name] = self.beta2 * self._v[name] + (1.0 - self.beta2) * g * g
            p = self.params[name]
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
        return norm
