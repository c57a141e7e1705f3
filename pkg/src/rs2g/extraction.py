"""Scene-graph extraction: learned node/edge encoders and the rule-based baseline.

Adjacency layout is ``(..., R, n, n)`` with ``A[r, j, k]`` the edge of
relation ``r`` from source ``j`` to target ``k``. Leading axes, when
present, index frames of a sequence so a whole clip is extracted at once.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterSet, Tensor, uniform_init
from .scene.objects import ATTRIBUTE_WIDTH, DetectedObject, encode_attributes

SOFT, HARD = "soft", "hard"


@dataclass
class SceneGraph:
    node_features: Tensor
    adjacency: Tensor
    mode: str = HARD

    def __post_init__(self):
        if self.mode not in (SOFT, HARD):
            raise ValueError(f"mode must be 'soft' or 'hard', got {self.mode!r}")
        nf, adj = self.node_features.shape, self.adjacency.shape
        if adj[-1] != adj[-2] or adj[-1] != nf[-2]:
            raise ValueError(f"adjacency {adj} does not match node features {nf}")

    @property
    def n_nodes(self) -> int:
        return self.node_features.shape[-2]

    @property
    def n_relations(self) -> int:
        return self.adjacency.shape[-3]

    def edge_count(self) -> int:
        if self.mode != HARD:
            raise ValueError("edge_count needs a hard graph")
        return int(self.adjacency.data.sum())

    def frame(self, t: int) -> "SceneGraph":
        """Single-frame view of a batched graph (no gradient tracking)."""
        return SceneGraph(self.node_features.detach()[t], self.adjacency.detach()[t], self.mode)

    def to_json(self) -> str:
        """Node features plus sparse ``(r, j, k, score)`` edge list."""
        a = self.adjacency.data
        if a.ndim != 3:
            raise ValueError("to_json dumps one frame; index a batched graph with frame(t)")
        r, j, k = np.nonzero(a)
        edges = [[int(ri), int(ji), int(ki), float(a[ri, ji, ki])] for ri, ji, ki in zip(r, j, k)]
        return json.dumps({"mode": self.mode, "node_features": self.node_features.data.tolist(),
                           "n_relations": int(a.shape[0]), "edges": edges}, sort_keys=True)


def _offdiag(n: int) -> np.ndarray:
    return 1.0 - np.eye(n)


class MLP:
    """Stack of dense layers with relu after every layer."""

    def __init__(self, params: ParameterSet, prefix: str, widths: Sequence[int],
                 rng: np.random.Generator, final_activation: bool = True):
        self.layers = []
        self.final_activation = final_activation
        for i, (d_in, d_out) in enumerate(zip(widths, widths[1:])):
            w = params.register(f"{prefix}.{i}.weight", uniform_init(rng, d_in, (d_in, d_out)))
            b = params.register(f"{prefix}.{i}.bias", uniform_init(rng, d_in, (d_out,)))
            self.layers.append((w, b))

    def __call__(self, x: Tensor) -> Tensor:
        last = len(self.layers) - 1
        for i, (w, b) in enumerate(self.layers):
            x = x @ w + b
            if i < last or self.final_activation:
                x = ad.relu(x)
        return x


class NodeEncoder(MLP):
    def __init__(self, params: ParameterSet, rng: np.random.Generator, depth: int = 2,
                 width: int = ATTRIBUTE_WIDTH, prefix: str = "node_encoder"):
        if depth not in (1, 2):
            raise ValueError("node encoder depth must be 1 or 2")
        super().__init__(params, prefix, [ATTRIBUTE_WIDTH] + [width] * depth, rng)
        self.width = width


class EdgeEncoder:
    """Shared pair trunk with one sigmoid head per relation.

    depth 1: 2d -> d trunk; depth 2: 2d -> 2d -> d trunk. Heads map d -> 1
    each and are stored together as a ``(d, R)`` matrix.
    """

    def __init__(self, params: ParameterSet, rng: np.random.Generator, n_relations: int = 12,
                 depth: int = 2, node_width: int = ATTRIBUTE_WIDTH, gamma: float = 0.5,
                 prefix: str = "edge_encoder"):
        if n_relations < 1:
            raise ValueError("need at least one relation")
        if depth not in (1, 2):
            raise ValueError("edge encoder depth must be 1 or 2")
        _check_gamma(gamma)
        d2 = 2 * node_width
        widths = [d2, node_width] if depth == 1 else [d2, d2, node_width]
        self.node_width = node_width
        self.n_relations = n_relations
        self.gamma = gamma
        self.trunk = []
        for i, (d_in, d_out) in enumerate(zip(widths, widths[1:])):
            w = params.register(f"{prefix}.trunk.{i}.weight", uniform_init(rng, d_in, (d_in, d_out)))
            b = params.register(f"{prefix}.trunk.{i}.bias", uniform_init(rng, d_in, (d_out,)))
            self.trunk.append((w, b))
        self.head_w = params.register(f"{prefix}.heads.weight",
                                      uniform_init(rng, node_width, (node_width, n_relations)))
        self.head_b = params.register(f"{prefix}.heads.bias", uniform_init(rng, node_width, (n_relations,)))

    def pair_scores(self, h: Tensor) -> Tensor:
        """Soft scores ``(..., R, n, n)`` for all ordered pairs; diagonal forced to 0."""
        n, d = h.shape[-2], h.shape[-1]
        lead = h.shape[:-2]
        w0, b0 = self.trunk[0]
        # concat(h_j, h_k) @ W = h_j @ W[:d] + h_k @ W[d:]
        src = (h @ w0[:d]).reshape(lead + (n, 1, w0.shape[1]))
        dst = (h @ w0[d:]).reshape(lead + (1, n, w0.shape[1]))
        z = ad.relu(src + dst + b0)
        for w, b in self.trunk[1:]:
            z = ad.relu(z @ w + b)
        s = ad.sigmoid(z @ self.head_w + self.head_b)          # (..., n, n, R)
        k = len(lead)
        s = ad.transpose(s, tuple(range(k)) + (k + 2, k, k + 1))  # (..., R, n, n)
        return s * _offdiag(n)


def _check_gamma(gamma: float) -> None:
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")


def _as_node_tensor(objects) -> Tensor:
    if isinstance(objects, Tensor):
        return objects
    if isinstance(objects, np.ndarray):
        return Tensor(objects)
    if objects and isinstance(objects[0], DetectedObject):
        return Tensor(encode_frame_objects(objects))
    return Tensor(np.stack([np.asarray(o, dtype=np.float64) for o in objects]))


def encode_frame_objects(objects: Sequence[DetectedObject]) -> np.ndarray:
    return np.stack([encode_attributes(o) for o in objects])


def extract_learned(objects, node_encoder: NodeEncoder, edge_encoder: EdgeEncoder,
                    mode: str = SOFT, gamma: float | None = None) -> SceneGraph:
    """Encode nodes, score every ordered pair per relation, optionally threshold.

    ``objects`` is an ``(n, 15)`` attribute matrix (or ``(T, n, 15)`` for a
    clip), a list of attribute vectors, or a list of DetectedObject.
    """
    x = _as_node_tensor(objects)
    if x.shape[-1] != ATTRIBUTE_WIDTH:
        raise ValueError(f"expected attribute width {ATTRIBUTE_WIDTH}, got {x.shape[-1]}")
    h = node_encoder(x)
    soft = SceneGraph(h, edge_encoder.pair_scores(h), SOFT)
    if mode == SOFT:
        return soft
    if mode == HARD:
        return binarize(soft, edge_encoder.gamma if gamma is None else gamma)
    raise ValueError(f"mode must be 'soft' or 'hard', got {mode!r}")


def binarize(graph: SceneGraph, gamma: float, straight_through: bool = False) -> SceneGraph:
    """Hard graph keeping entries with score >= gamma. Hard inputs pass through unchanged.

    With ``straight_through`` the 0/1 adjacency stays on the tape and hands
    its gradient to the soft scores unchanged.
    """
    _check_gamma(gamma)
    hard = (graph.adjacency.data >= gamma).astype(np.float64)
    if straight_through:
        return SceneGraph(graph.node_features, ad.straight_through(graph.adjacency, hard), HARD)
    return SceneGraph(graph.node_features, Tensor._result(hard, False), HARD)


# ------------------------------------------------------------ rule-based


@dataclass(frozen=True)
class RuleConfig:
    """Distance tiers (m) and bearing sector boundaries (deg).

    Tier ``i`` covers ``(d[i-1], d[i]]`` with the first tier starting at 0.
    Boundaries ``b`` split the circle into ``[b[i], b[i+1])`` intervals plus
    one wrap-around sector ``[b[-1], 180] U [-180, b[0])``.
    """

    distance_tiers_m: tuple[float, ...] = (4.0, 7.0, 10.0, 16.0, 25.0)
    sector_boundaries_deg: tuple[float, ...] = (-135.0, -45.0, 45.0, 135.0)
    sector_names: tuple[str, ...] = ("right", "front", "left", "rear")
    tier_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        d, b = self.distance_tiers_m, self.sector_boundaries_deg
        if not d or any(x <= 0 for x in d) or any(q <= p for p, q in zip(d, d[1:])):
            raise ValueError("distance tiers must be positive and strictly increasing")
        if len(b) < 2 or any(q <= p for p, q in zip(b, b[1:])) or b[0] < -180 or b[-1] >= 180:
            raise ValueError("sector boundaries must be strictly increasing within [-180, 180)")
        if len(self.sector_names) != len(b):
            raise ValueError("need one sector name per boundary")
        if not self.tier_names:
            object.__setattr__(self, "tier_names", tuple(f"near_{t:g}m" for t in d))

    @property
    def relation_names(self) -> tuple[str, ...]:
        return tuple(self.tier_names) + tuple(self.sector_names)

    @property
    def n_relations(self) -> int:
        return len(self.distance_tiers_m) + len(self.sector_boundaries_deg)

    def tier_of(self, range_m: float) -> int | None:
        lower = 0.0
        for i, upper in enumerate(self.distance_tiers_m):
            if (range_m >= lower if i == 0 else range_m > lower) and range_m <= upper:
                return i
            lower = upper
        return None

    def sector_of(self, bearing_deg: float) -> int:
        b = self.sector_boundaries_deg
        for i in range(len(b) - 1):
            if b[i] <= bearing_deg < b[i + 1]:
                return i
        return len(b) - 1


def rule_adjacency(objects: Sequence[DetectedObject], config: RuleConfig) -> np.ndarray:
    n = len(objects)
    a = np.zeros((config.n_relations, n, n))
    egos = [i for i, o in enumerate(objects) if o.is_ego]
    if len(egos) != 1:
        raise ValueError(f"rule-based extraction needs exactly one ego, found {len(egos)}")
    e = egos[0]
    n_tiers = len(config.distance_tiers_m)
    for j, o in enumerate(objects):
        if j == e:
            continue
        tier = config.tier_of(o.range_m)
        if tier is not None:
            a[tier, e, j] = a[tier, j, e] = 1.0
        a[n_tiers + config.sector_of(o.bearing_deg), e, j] = 1.0
    return a


def extract_rule_based(objects: Sequence[DetectedObject], config: RuleConfig | None = None) -> SceneGraph:
    config = config or RuleConfig()
    if len(objects) < 1:
        raise ValueError("need at least one object")
    adjacency = Tensor._result(rule_adjacency(objects, config), False)
    return SceneGraph(Tensor(encode_frame_objects(objects)), adjacency, HARD)


def rule_graphs_for_sequence(frames, config: RuleConfig | None = None):
    """Per-frame rule adjacency stacked to ``(T, R, n, n)`` when object counts agree."""
    config = config or RuleConfig()
    adjs = [rule_adjacency(f.objects, config) for f in frames]
    if len({a.shape for a in adjs}) == 1:
        return np.stack(adjs)
    return adjs
