"""Learned-vs-rule relation similarity, graph structure statistics and gamma sweeps."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

import numpy as np

from .evaluation import EvalReport, evaluate
from .extraction import RuleConfig, rule_adjacency
from .pipeline import ModelBundle

DEGREE_CONVENTION = "avg_degree = directed edge count / node count, averaged over graphs"


@dataclass(frozen=True)
class GraphStructureStats:
    avg_degree: float
    avg_edges: float
    std_edges: float
    n_graphs: int

    def to_dict(self) -> dict:
        return asdict(self)


def _slices(adj) -> np.ndarray:
    a = adj.adjacency.data if hasattr(adj, "adjacency") else np.asarray(adj, dtype=np.float64)
    if a.ndim != 3:
        raise ValueError(f"expected one (R, n, n) adjacency per frame, got shape {a.shape}")
    return a


def slice_cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of two flattened adjacency slices; 0 if either is all-zero."""
    a, b = np.ravel(a), np.ravel(b)
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b)) / (na * nb)


def cosine_relation_similarity(learned: Sequence, rule: Sequence) -> np.ndarray:
    """``(R_learned, R_rule)`` cosine similarity averaged over paired frames."""
    if len(learned) != len(rule):
        raise ValueError(f"{len(learned)} learned graphs but {len(rule)} rule graphs")
    if not learned:
        raise ValueError("need at least one pair of graphs")
    total = None
    for gl, gr in zip(learned, rule):
        al, ar = _slices(gl), _slices(gr)
        if al.shape[-1] != ar.shape[-1]:
            raise ValueError(f"node count mismatch: {al.shape[-1]} vs {ar.shape[-1]}")
        fl = al.reshape(al.shape[0], -1)
        fr = ar.reshape(ar.shape[0], -1)
        nl = np.linalg.norm(fl, axis=1)
        nr = np.linalg.norm(fr, axis=1)
        denom = np.outer(nl, nr)
        sim = np.divide(fl @ fr.T, denom, out=np.zeros_like(denom), where=denom > 0)
        total = sim if total is None else total + sim
    return total / len(learned)


def graph_structure_stats(graphs: Iterable) -> GraphStructureStats:
    edges, degrees = [], []
    for g in graphs:
        a = _slices(g)
        if not np.all((a == 0) | (a == 1)):
            raise ValueError("graph_structure_stats needs hard (0/1) graphs")
        e = float(a.sum())
        edges.append(e)
        degrees.append(e / a.shape[-1])
    if not edges:
        raise ValueError("graph_structure_stats needs at least one graph")
    return GraphStructureStats(float(np.mean(degrees)), float(np.mean(edges)),
                               float(np.std(edges)), len(edges))


# ------------------------------------------------------ dataset helpers


def learned_frames(model: ModelBundle, seqs, gamma: float | None = None) -> list[np.ndarray]:
    """Hard learned adjacency per frame, in dataset then frame order."""
    if not model.learned:
        raise ValueError("model uses the rule-based extractor")
    out = []
    for s in seqs:
        prep = model.prepare(s)
        for g in model.graphs(prep, training=False, gamma=gamma):
            a = g.adjacency.data
            out.extend(a if a.ndim == 4 else [a])
    return out


def soft_frames(model: ModelBundle, seqs) -> list[np.ndarray]:
    """Soft learned edge scores per frame, in the same order as :func:`learned_frames`."""
    return [a for s in seqs for a in model.soft_adjacency(model.prepare(s))]


def rule_frames(seqs, config: RuleConfig | None = None) -> list[np.ndarray]:
    config = config or RuleConfig()
    return [rule_adjacency(f.objects, config) for s in seqs for f in s.frames]


def dataset_relation_similarity(model: ModelBundle, seqs, config: RuleConfig | None = None) -> np.ndarray:
    seqs = list(seqs)
    return cosine_relation_similarity(learned_frames(model, seqs), rule_frames(seqs, config))


@dataclass
class SweepPoint:
    gamma: float
    stats: GraphStructureStats
    report: EvalReport


def gamma_sweep(model: ModelBundle, dataset, gammas: Sequence[float]) -> list[SweepPoint]:
    """Evaluate and measure graph structure at each edge threshold."""
    seqs = list(dataset)
    if not model.learned:
        raise ValueError("gamma sweep needs a learned extractor")
    soft = soft_frames(model, seqs)
    points = []
    for g in gammas:
        if not 0.0 < g < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {g}")
        stats = graph_structure_stats((a >= g).astype(np.float64) for a in soft)
        points.append(SweepPoint(float(g), stats, evaluate(model, seqs, gamma=g)))
    return points


# -------------------------------------------------------------- output


def similarity_csv(matrix: np.ndarray, rule_names: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["learned_relation"] + list(rule_names))
    for i, row in enumerate(matrix):
        w.writerow([f"learned_{i}"] + [repr(float(v)) for v in row])
    return buf.getvalue()


def similarity_json(matrix: np.ndarray, rule_names: Sequence[str]) -> str:
    return json.dumps({"rule_relations": list(rule_names),
                       "learned_relations": [f"learned_{i}" for i in range(len(matrix))],
                       "similarity": np.asarray(matrix).tolist()}, sort_keys=True, indent=1)


SWEEP_COLUMNS = ("extractor", "gamma", "avg_degree", "avg_edges", "std_edges", "acc", "mcc", "auc")


def sweep_csv(points: Sequence[SweepPoint], rule_stats: GraphStructureStats | None = None,
              extractor: str = "rs2g") -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    if rule_stats is not None:
        w.writerow(["rule", "", repr(rule_stats.avg_degree), repr(rule_stats.avg_edges),
                    repr(rule_stats.std_edges), "", "", ""])
    for p in points:
        s, r = p.stats, p.report
        w.writerow([extractor, repr(p.gamma), repr(s.avg_degree), repr(s.avg_edges), repr(s.std_edges),
                    repr(r.accuracy), repr(r.mcc), repr(r.auc)])
    return buf.getvalue()


def sweep_json(points: Sequence[SweepPoint], rule_stats: GraphStructureStats | None = None) -> str:
    payload = {"degree_convention": DEGREE_CONVENTION,
               "rule": rule_stats.to_dict() if rule_stats else None,
               "points": [{"gamma": p.gamma, "stats": p.stats.to_dict(), "report": p.report.to_dict()}
                          for p in points]}
    return json.dumps(payload, sort_keys=True, indent=1)
