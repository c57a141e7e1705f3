"""End-to-end risk model: extraction, spatial and temporal embedding, classifier."""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Optimizer, ParameterSet, Tape, Tensor, read_checkpoint, save_checkpoint
from .extraction import HARD, MLP, SOFT, EdgeEncoder, NodeEncoder, RuleConfig, SceneGraph, binarize, rule_adjacency
from .scene.objects import ATTRIBUTE_WIDTH, SceneSequence, encode_frame
from .spatial import SpatialModel
from .temporal import TemporalModel

log = logging.getLogger(__name__)

EXTRACTORS = ("rule", "rs2g-1d", "rs2g-2d")
SPATIAL_KINDS = ("mrgcn", "mlp")
TEMPORAL_KINDS = ("lstm-attn", "lstm-last", "mean")
EDGE_TRAINING = ("straight-through", "soft")


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    extractor: str = "rs2g-2d"
    relations: int = 12
    gamma: float = 0.5
    pool_ratio: float = 0.5
    spatial: str = "mrgcn"
    spatial_hidden: tuple[int, ...] = (64, 64)
    readout: str = "mean"
    temporal: str = "lstm-attn"
    lstm_hidden: int = 64
    lstm_layers: int = 2
    classifier_hidden: int = 64
    node_width: int = ATTRIBUTE_WIDTH
    distance_tiers_m: tuple[float, ...] = RuleConfig.distance_tiers_m
    sector_boundaries_deg: tuple[float, ...] = RuleConfig.sector_boundaries_deg
    edge_training: str = "straight-through"
    init_seed: int = 0

    def validate(self) -> None:
        if self.extractor not in EXTRACTORS:
            raise ConfigurationError(f"extractor must be one of {EXTRACTORS}, got {self.extractor!r}")
        if self.spatial not in SPATIAL_KINDS:
            raise ConfigurationError(f"spatial must be one of {SPATIAL_KINDS}, got {self.spatial!r}")
        if self.temporal not in TEMPORAL_KINDS:
            raise ConfigurationError(f"temporal must be one of {TEMPORAL_KINDS}, got {self.temporal!r}")
        if self.edge_training not in EDGE_TRAINING:
            raise ConfigurationError(f"edge_training must be one of {EDGE_TRAINING}, got {self.edge_training!r}")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigurationError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not 0.0 < self.pool_ratio <= 1.0:
            raise ConfigurationError(f"pool_ratio must lie in (0, 1], got {self.pool_ratio}")
        if self.relations < 1:
            raise ConfigurationError("relations must be >= 1")
        if self.extractor == "rule" and self.node_width != ATTRIBUTE_WIDTH:
            raise ConfigurationError("rule-based graphs carry raw 15-wide attributes; node_width must be 15")

    @property
    def rule_config(self) -> RuleConfig:
        names = RuleConfig.sector_names
        if len(self.sector_boundaries_deg) != len(names):
            names = tuple(f"sector_{i}" for i in range(len(self.sector_boundaries_deg)))
        return RuleConfig(tuple(self.distance_tiers_m), tuple(self.sector_boundaries_deg), names)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for k, v in d.items():
            if k not in known:
                raise ConfigurationError(f"unknown model setting {k!r}")
            kwargs[k] = tuple(v) if isinstance(v, list) else v
        return cls(**kwargs)


@dataclass
class PreparedSequence:
    """Numeric form of a SceneSequence: attributes and (for the rule path) adjacency."""

    id: str
    label: int
    attributes: np.ndarray | list[np.ndarray]
    rule_adjacency: np.ndarray | list[np.ndarray] | None = None
    domain_tag: str = ""

    @property
    def batched(self) -> bool:
        return isinstance(self.attributes, np.ndarray)


@dataclass(frozen=True)
class RiskPrediction:
    probabilities: tuple[float, float]
    label: int

    @property
    def risk_score(self) -> float:
        return self.probabilities[1]


class ModelBundle:
    """Every trainable component of the risk model, registered in one ParameterSet."""

    def __init__(self, config: ModelConfig | None = None):
        self.config = config = config or ModelConfig()
        config.validate()
        rng = np.random.default_rng(config.init_seed)
        self.params = ParameterSet()
        self.node_encoder = self.edge_encoder = None
        learned = config.extractor != "rule"
        if learned:
            depth = 1 if config.extractor == "rs2g-1d" else 2
            self.node_encoder = NodeEncoder(self.params, rng, depth, config.node_width)
            self.edge_encoder = EdgeEncoder(self.params, rng, config.relations, depth,
                                            config.node_width, config.gamma)
            n_rel = config.relations
        else:
            n_rel = config.rule_config.n_relations
        self.n_relations = n_rel
        self.rule_config = config.rule_config
        self.spatial = SpatialModel(self.params, rng, config.node_width, n_rel, config.spatial_hidden,
                                    config.pool_ratio, config.readout, config.spatial)
        self.temporal = TemporalModel(self.params, rng, self.spatial.out_width, config.lstm_hidden,
                                      config.lstm_layers, config.temporal)
        self.classifier = MLP(self.params, "classifier",
                              [self.temporal.out_width, config.classifier_hidden, 2], rng,
                              final_activation=False)
        self.gamma = config.gamma

    @property
    def learned(self) -> bool:
        return self.edge_encoder is not None

    # ---------------------------------------------------------- stages
    def prepare(self, seq: SceneSequence) -> PreparedSequence:
        frames = [encode_frame(f) for f in seq.frames]
        attrs = np.stack(frames) if seq.constant_object_count else frames
        for a in frames:
            if a.shape[-1] != ATTRIBUTE_WIDTH:
                raise ConfigurationError(f"sequence {seq.id}: attribute width {a.shape[-1]} != {ATTRIBUTE_WIDTH}")
        adj = None
        if not self.learned:
            adjs = [rule_adjacency(f.objects, self.rule_config) for f in seq.frames]
            adj = np.stack(adjs) if seq.constant_object_count else adjs
        return PreparedSequence(seq.id, seq.label, attrs, adj, seq.domain_tag)

    def extract(self, attributes: np.ndarray, rule_adj=None, training: bool = False,
                gamma: float | None = None) -> SceneGraph:
        """Graph(s) for one frame or a stacked clip.

        Evaluation always sees the hard graph. Training sees either the hard
        graph with straight-through gradients or the soft graph, per
        ``config.edge_training``.
        """
        x = Tensor._result(np.asarray(attributes, dtype=np.float64), False)
        if not self.learned:
            return SceneGraph(x, Tensor._result(np.asarray(rule_adj, dtype=np.float64), False), HARD)
        h = self.node_encoder(x)
        soft = SceneGraph(h, self.edge_encoder.pair_scores(h), SOFT)
        gamma = self.gamma if gamma is None else gamma
        if training:
            if self.config.edge_training == "soft":
                return soft
            return binarize(soft, gamma, straight_through=True)
        return binarize(soft, gamma)

    def soft_adjacency(self, prep: PreparedSequence) -> list[np.ndarray]:
        """Per-frame (R, n, n) edge scores before thresholding."""
        if not self.learned:
            raise ValueError("model uses the rule-based extractor")
        clips = [prep.attributes] if prep.batched else prep.attributes
        out = []
        for a in clips:
            h = self.node_encoder(Tensor._result(np.asarray(a, dtype=np.float64), False))
            s = self.edge_encoder.pair_scores(h).data
            out.extend(s if s.ndim == 4 else [s])
        return out

    def graphs(self, prep: PreparedSequence, training: bool = False, gamma: float | None = None):
        if prep.batched:
            return [self.extract(prep.attributes, prep.rule_adjacency, training, gamma)]
        adjs = prep.rule_adjacency if prep.rule_adjacency is not None else [None] * len(prep.attributes)
        return [self.extract(a, r, training, gamma) for a, r in zip(prep.attributes, adjs)]

    def embed_graphs(self, graphs: Sequence[SceneGraph]) -> Tensor:
        """(T, d) graph-embedding sequence from batched or per-frame graphs."""
        if len(graphs) == 1 and graphs[0].node_features.ndim == 3:
            return self.spatial(graphs[0])
        return ad.stack([self.spatial(g) for g in graphs], axis=0)

    def logits(self, prep: PreparedSequence, training: bool = False, gamma: float | None = None) -> Tensor:
        emb = self.embed_graphs(self.graphs(prep, training, gamma))
        z = self.temporal(emb)
        return self.classifier(z)

    def predict(self, prep: PreparedSequence, gamma: float | None = None) -> RiskPrediction:
        probs = ad.softmax(self.logits(prep, False, gamma), axis=-1).data
        p0, p1 = float(probs[0]), float(probs[1])
        return RiskPrediction((p0, p1), int(p1 >= p0))

    def loss(self, prep: PreparedSequence, training: bool = True, weight: float = 1.0) -> Tensor:
        logp = ad.log_softmax(self.logits(prep, training), axis=-1)
        nll = -logp[prep.label]
        return nll * weight if weight != 1.0 else nll

    # ------------------------------------------------------ persistence
    def architecture(self) -> dict:
        return self.config.to_dict()

    def save(self, path) -> None:
        save_checkpoint(path, self.params, self.architecture())

    @classmethod
    def load(cls, path) -> "ModelBundle":
        payload = read_checkpoint(path)
        model = cls(ModelConfig.from_dict(payload["architecture"]))
        model.params.load_state_dict(payload["parameters"])
        return model


def _prepare_all(model: ModelBundle, seqs) -> list[PreparedSequence]:
    return [s if isinstance(s, PreparedSequence) else model.prepare(s) for s in seqs]


def assess_risk(sequence: SceneSequence, model: ModelBundle, gamma: float | None = None) -> RiskPrediction:
    """Extract graphs for every frame, embed, classify; label 1 iff p1 >= p0."""
    if len(sequence.frames) < 2:
        raise ConfigurationError("a sequence needs at least 2 frames")
    return model.predict(model.prepare(sequence), gamma)


@dataclass
class TrainResult:
    model: ModelBundle
    loss_curve: list[float] = field(default_factory=list)


def class_weights(labels: Iterable[int]) -> dict[int, float]:
    labels = list(labels)
    counts = {c: labels.count(c) for c in (0, 1)}
    n = len(labels)
    return {c: n / (2.0 * counts[c]) for c in (0, 1)}


def train(model: ModelBundle, train_set, epochs: int = 50, lr: float = 1e-3, seed: int = 0, *,
          adam: bool = True, clip_norm: float | None = 5.0, reweight: bool = False,
          progress=None) -> TrainResult:
    """One sequence per step; the loss curve holds each epoch's mean cross-entropy.

    ``progress``, when given, is called with ``(epoch, mean_loss)`` after
    every epoch.
    """
    prepared = _prepare_all(model, train_set)
    labels = [p.label for p in prepared]
    if not prepared or len(set(labels)) < 2:
        raise ValueError("training set must be non-empty and contain both classes")
    weights = class_weights(labels) if reweight else {0: 1.0, 1: 1.0}
    opt = Optimizer(model.params, lr, adam=adam, clip_norm=clip_norm)
    rng = np.random.default_rng(seed)
    curve = []
    for epoch in range(epochs):
        order = rng.permutation(len(prepared))
        total = 0.0
        for i in order:
            prep = prepared[i]
            model.params.zero_grad()
            with Tape() as tape:
                loss = model.loss(prep, training=True, weight=weights[prep.label])
            value = loss.item()
            if not math.isfinite(value):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}, sequence {prep.id}")
            tape.backward(loss)
            opt.step()
            total += value
        curve.append(total / len(prepared))
        log.debug("epoch %d loss %.6f", epoch, curve[-1])
        if progress is not None:
            progress(epoch, curve[-1])
    return TrainResult(model, curve)


def predict_all(model: ModelBundle, seqs, gamma: float | None = None) -> list[RiskPrediction]:
    return [model.predict(p, gamma) for p in _prepare_all(model, seqs)]
