"""Named parameter registry, seeded initialization and JSON checkpoints."""

from __future__ import annotations

import json
import math
from collections import OrderedDict
from pathlib import Path
from typing import Iterator

import numpy as np

from .tensor import Tensor


class ParameterSet:
    """Insertion-ordered ``name -> Tensor`` map of trainable leaves."""

    def __init__(self):
        self._params: OrderedDict[str, Tensor] = OrderedDict()

    def register(self, name: str, value) -> Tensor:
        if name in self._params:
            raise KeyError(f"parameter {name!r} already registered")
        t = value if isinstance(value, Tensor) else Tensor(value)
        t.requires_grad = True
        t.is_leaf = True
        t.name = name
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        """Current gradients; parameters the loss never reached get zeros."""
        return {
            name: (p.grad if p.grad is not None else np.zeros_like(p.data))
            for name, p in self._params.items()
        }

    def assign(self, name: str, data) -> None:
        p = self._params[name]
        arr = np.array(data, dtype=np.float64)
        if arr.shape != p.data.shape:
            raise ValueError(f"parameter {name!r} has shape {p.data.shape}, got {arr.shape}")
        p.data = arr

    def num_scalars(self) -> int:
        return int(sum(p.size for p in self._params.values()))

    def copy_data(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self._params.items()}

    # checkpointing
    def state_dict(self) -> dict:
        return {
            name: {"shape": list(p.shape), "data": p.data.reshape(-1).tolist()}
            for name, p in self._params.items()
        }

    def load_state_dict(self, state: dict) -> None:
        missing = set(self._params) - set(state)
        extra = set(state) - set(self._params)
        if missing or extra:
            raise KeyError(f"checkpoint mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for name, entry in state.items():
            shape = tuple(entry["shape"])
            arr = np.array(entry["data"], dtype=np.float64).reshape(shape)
            self.assign(name, arr)


def uniform_init(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    """Uniform in [-sqrt(1/fan_in), +sqrt(1/fan_in)]."""
    bound = math.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def save_checkpoint(path, params: ParameterSet, architecture: dict | None = None) -> None:
    payload = {"architecture": architecture or {}, "parameters": params.state_dict()}
    Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n")


def read_checkpoint(path) -> dict:
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: malformed checkpoint ({exc})") from None
    if "parameters" not in payload:
        raise ValueError(f"{path}: checkpoint has no 'parameters' section")
    return payload
