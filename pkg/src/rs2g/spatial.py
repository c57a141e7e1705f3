"""Graph embedding: multi-relational convolution, self-attention pooling, readout."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterSet, Tensor, uniform_init
from .extraction import SceneGraph

DEGREE_FLOOR = 1e-8
READOUTS = ("sum", "mean", "max")


def normalized_messages(adjacency: Tensor) -> Tensor:
    """``M[r, v, u] = A[r, u, v] / sum_u A[r, u, v]``; zero-degree targets get zero rows."""
    deg = ad.clamp_min(adjacency.sum(axis=-2, keepdims=True), DEGREE_FLOOR)
    return ad.swapaxes(adjacency / deg, -1, -2)


class MrgcnLayer:
    """Self weight plus one weight per relation, all ``(d_in, d_out)``; no bias."""

    def __init__(self, params: ParameterSet, prefix: str, d_in: int, d_out: int,
                 n_relations: int, rng: np.random.Generator):
        self.d_in, self.d_out, self.n_relations = d_in, d_out, n_relations
        self.self_weight = params.register(f"{prefix}.self_weight", uniform_init(rng, d_in, (d_in, d_out)))
        self.rel_weight = params.register(f"{prefix}.rel_weight",
                                          uniform_init(rng, d_in, (n_relations, d_in, d_out)))

    def __call__(self, h: Tensor, messages: Tensor) -> Tensor:
        if h.shape[-1] != self.d_in:
            raise ValueError(f"MRGCN layer expects width {self.d_in}, got {h.shape[-1]}")
        if messages.shape[-3] != self.n_relations:
            raise ValueError(f"MRGCN layer has {self.n_relations} relations, graph has {messages.shape[-3]}")
        lead, n = h.shape[:-2], h.shape[-2]
        per_rel = h.reshape(lead + (1, n, self.d_in)) @ self.rel_weight   # (..., R, n, d_out)
        agg = (messages @ per_rel).sum(axis=-3)
        return h @ self.self_weight + agg


def mrgcn_forward(graph: SceneGraph, layer: MrgcnLayer) -> Tensor:
    return layer(graph.node_features, normalized_messages(graph.adjacency))


def layer_concat(features: Sequence[Tensor]) -> Tensor:
    """Per-node concatenation of layer 0 (input) through layer L."""
    features = list(features)
    counts = {f.shape[-2] for f in features}
    if len(counts) != 1:
        raise ValueError(f"layer outputs disagree on node count: {sorted(counts)}")
    return features[0] if len(features) == 1 else ad.concat(features, axis=-1)


def pooled_count(n: int, ratio: float) -> int:
    # tolerance guards float products like 0.7 * 10 = 7.000000000000001
    return max(1, min(n, math.ceil(ratio * n - 1e-9)))


def top_k_indices(scores: np.ndarray, kk: int) -> np.ndarray:
    """Ascending indices of the ``kk`` highest scores per row; ties favour lower index."""
    order = np.argsort(-scores, axis=-1, kind="stable")[..., :kk]
    return np.sort(order, axis=-1)


def _lead_grid(lead: tuple[int, ...]) -> tuple[np.ndarray, ...]:
    grids = np.meshgrid(*[np.arange(s) for s in lead], indexing="ij") if lead else []
    return tuple(g[..., None] for g in grids)


class SagPool:
    """GCN scorer over the relation-collapsed graph, top-k selection, tanh gating."""

    def __init__(self, params: ParameterSet, prefix: str, d_in: int, ratio: float,
                 rng: np.random.Generator):
        if not 0.0 < ratio <= 1.0:
            raise ValueError(f"pool ratio must lie in (0, 1], got {ratio}")
        self.ratio = ratio
        self.weight = params.register(f"{prefix}.weight", uniform_init(rng, d_in, (d_in, 1)))
        self.bias = params.register(f"{prefix}.bias", uniform_init(rng, d_in, (1,)))

    def score(self, x: Tensor, adjacency: Tensor) -> Tensor:
        n = x.shape[-2]
        collapsed = adjacency.max(axis=-3)                       # (..., n, n)
        prop = ad.swapaxes(collapsed, -1, -2) + np.eye(n)         # row v gathers from u
        prop = prop / prop.sum(axis=-1, keepdims=True)
        alpha = prop @ (x @ self.weight) + self.bias              # (..., n, 1)
        return alpha.reshape(x.shape[:-1])

    def __call__(self, x: Tensor, adjacency: Tensor):
        return sag_pool(x, adjacency, self)


def sag_pool(x: Tensor, adjacency: Tensor, pool: SagPool):
    """Returns ``(X_pool, A_pool, kept_indices, alpha)``; A_pool carries no gradient."""
    alpha = pool.score(x, adjacency)
    lead, n = x.shape[:-2], x.shape[-2]
    kk = pooled_count(n, pool.ratio)
    keep = top_k_indices(alpha.data, kk)
    gated = x * ad.tanh(alpha).reshape(lead + (n, 1))
    x_pool = gated[_lead_grid(lead) + (keep,)]
    a = adjacency.data
    rows = np.take_along_axis(a, np.broadcast_to(keep[..., None, :, None], a.shape[:-2] + (kk, n)), axis=-2)
    a_pool = np.take_along_axis(rows, np.broadcast_to(keep[..., None, None, :], a.shape[:-2] + (kk, kk)), axis=-1)
    return x_pool, Tensor._result(a_pool, False), keep, alpha


def readout(x: Tensor, op: str = "mean") -> Tensor:
    if op == "sum":
        return x.sum(axis=-2)
    if op == "mean":
        return x.mean(axis=-2)
    if op == "max":
        return x.max(axis=-2)
    raise ValueError(f"readout must be one of {READOUTS}, got {op!r}")


class SpatialModel:
    """MRGCN stack + layer concat + SAGPool + readout.

    ``kind="mlp"`` is the ablation baseline: the same widths applied per node
    with no message passing and no pooling.
    """

    def __init__(self, params: ParameterSet, rng: np.random.Generator, d_in: int, n_relations: int,
                 hidden: Sequence[int] = (64, 64), pool_ratio: float = 0.5, readout_op: str = "mean",
                 kind: str = "mrgcn", prefix: str = "spatial"):
        if kind not in ("mrgcn", "mlp"):
            raise ValueError(f"spatial kind must be 'mrgcn' or 'mlp', got {kind!r}")
        if readout_op not in READOUTS:
            raise ValueError(f"readout must be one of {READOUTS}, got {readout_op!r}")
        self.kind = kind
        self.readout_op = readout_op
        self.d_in = d_in
        widths = [d_in] + list(hidden)
        self.out_width = sum(widths)
        self.layers = []
        for i, (a, b) in enumerate(zip(widths, widths[1:])):
            if kind == "mrgcn":
                self.layers.append(MrgcnLayer(params, f"{prefix}.mrgcn.{i}", a, b, n_relations, rng))
            else:
                w = params.register(f"{prefix}.mlp.{i}.weight", uniform_init(rng, a, (a, b)))
                bias = params.register(f"{prefix}.mlp.{i}.bias", uniform_init(rng, a, (b,)))
                self.layers.append((w, bias))
        self.pool = SagPool(params, f"{prefix}.pool", self.out_width, pool_ratio, rng) if kind == "mrgcn" else None

    def propagate(self, graph: SceneGraph) -> Tensor:
        """X_prop: concatenated per-layer node features."""
        h = graph.node_features
        if h.shape[-1] != self.d_in:
            raise ValueError(f"spatial model expects node width {self.d_in}, got {h.shape[-1]}")
        feats = [h]
        messages = normalized_messages(graph.adjacency) if self.kind == "mrgcn" else None
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            if self.kind == "mrgcn":
                h = layer(h, messages)
            else:
                w, b = layer
                h = h @ w + b
            if i < last:
                h = ad.relu(h)
            feats.append(h)
        return layer_concat(feats)

    def __call__(self, graph: SceneGraph) -> Tensor:
        x = self.propagate(graph)
        if self.pool is not None:
            x, _, _, _ = sag_pool(x, graph.adjacency, self.pool)
        return readout(x, self.readout_op)
