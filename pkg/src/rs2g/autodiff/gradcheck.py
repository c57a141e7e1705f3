"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from .tensor import Tape, Tensor


def numerical_grad(f: Callable[[], Tensor], t: Tensor, eps: float = 1e-5) -> np.ndarray:
    """d f() / d t by central differences, perturbing ``t.data`` in place."""
    grad = np.zeros_like(t.data)
    data = t.data
    for idx in np.ndindex(data.shape):
        orig = data[idx]
        data[idx] = orig + eps
        fp = f().item()
        data[idx] = orig - eps
        fm = f().item()
        data[idx] = orig
        grad[idx] = (fp - fm) / (2.0 * eps)
    return grad


def analytic_grads(f: Callable[[], Tensor], tensors: Iterable[Tensor]) -> list[np.ndarray]:
    tensors = list(tensors)
    for t in tensors:
        t.grad = None
    with Tape() as tape:
        out = f()
    tape.backward(out)
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, atol: float = 1e-6) -> float:
    """Largest |a-n|/max(|a|,|n|) over entries whose absolute error exceeds ``atol``."""
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    rel = np.where(diff <= atol, 0.0, diff / np.where(scale > 0, scale, 1.0))
    return float(rel.max(initial=0.0))


def check_gradients(f: Callable[[], Tensor], tensors: dict[str, Tensor] | Iterable[Tensor],
                    eps: float = 1e-5, atol: float = 1e-6) -> dict[str, float]:
    """Max relative error per tensor between tape gradients and finite differences."""
    if isinstance(tensors, dict):
        named = list(tensors.items())
    else:
        named = [(t.name or f"t{i}", t) for i, t in enumerate(tensors)]
    for _, t in named:
        t.requires_grad = True
    ana = analytic_grads(f, [t for _, t in named])
    return {
        name: max_relative_error(a, numerical_grad(f, t, eps), atol)
        for (name, t), a in zip(named, ana)
    }
