"""Accuracy / MCC / AUC and the cross-domain transfer harness."""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Sequence

from .pipeline import ModelBundle, predict_all

CSV_COLUMNS = ("extractor", "spatial", "temporal", "train_domain", "test_domain", "acc", "mcc", "auc")


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


@dataclass
class EvalReport:
    accuracy: float
    mcc: float
    auc: float
    counts: ConfusionCounts
    train_domain: str = ""
    test_domain: str = ""
    extractor: str = ""
    spatial: str = ""
    temporal: str = ""
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def csv_row(self) -> list[str]:
        return [self.extractor, self.spatial, self.temporal, self.train_domain, self.test_domain,
                repr(self.accuracy), repr(self.mcc), repr(self.auc)]

    def to_csv(self, header: bool = True) -> str:
        return reports_to_csv([self], header)


def reports_to_csv(reports: Sequence[EvalReport], header: bool = True) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header:
        w.writerow(CSV_COLUMNS)
    for r in reports:
        w.writerow(r.csv_row())
    return buf.getvalue()


def confusion(labels: Sequence[int], preds: Sequence[int]) -> ConfusionCounts:
    tp = sum(1 for y, p in zip(labels, preds) if y == 1 and p == 1)
    tn = sum(1 for y, p in zip(labels, preds) if y == 0 and p == 0)
    fp = sum(1 for y, p in zip(labels, preds) if y == 0 and p == 1)
    fn = sum(1 for y, p in zip(labels, preds) if y == 1 and p == 0)
    return ConfusionCounts(tp, tn, fp, fn)


def mcc_from_counts(c: ConfusionCounts) -> float:
    """Matthews correlation; 0.0 when any marginal is empty."""
    denom = (c.tp + c.fp) * (c.tp + c.fn) * (c.tn + c.fp) * (c.tn + c.fn)
    if denom == 0:
        return 0.0
    return (c.tp * c.tn - c.fp * c.fn) / math.sqrt(denom)


def pairwise_auc(labels: Sequence[int], scores: Sequence[float]) -> float:
    """Fraction of (positive, negative) pairs ranked correctly, ties worth 0.5.

    Returns 0.5 when either class is absent.
    """
    pos = [s for y, s in zip(labels, scores) if y == 1]
    neg = [s for y, s in zip(labels, scores) if y == 0]
    if not pos or not neg:
        return 0.5
    wins = 0.0
    for sp in pos:
        for sn in neg:
            if sp > sn:
                wins += 1.0
            elif sp == sn:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def compute_metrics(labels: Sequence[int], scores: Sequence[float],
                    preds: Sequence[int] | None = None, **tags) -> EvalReport:
    """Metrics from risky-class scores; predictions default to ``score >= 0.5``."""
    labels, scores = list(labels), [float(s) for s in scores]
    if not labels:
        raise ValueError("compute_metrics needs at least one sample")
    if len(labels) != len(scores):
        raise ValueError(f"{len(labels)} labels but {len(scores)} scores")
    if any(not 0.0 <= s <= 1.0 for s in scores):
        raise ValueError("scores must lie in [0, 1]")
    if preds is None:
        preds = [int(s >= 1.0 - s) for s in scores]
    counts = confusion(labels, preds)
    acc = (counts.tp + counts.tn) / counts.total
    return EvalReport(acc, mcc_from_counts(counts), pairwise_auc(labels, scores), counts, **tags)


def _tags(model: ModelBundle) -> dict:
    c = model.config
    return {"extractor": c.extractor, "spatial": c.spatial, "temporal": c.temporal}


def evaluate(model: ModelBundle, dataset, train_domain: str = "", test_domain: str | None = None,
             gamma: float | None = None) -> EvalReport:
    seqs = list(dataset)
    preds = predict_all(model, seqs, gamma)
    if test_domain is None:
        tags = sorted({getattr(s, "domain_tag", "") for s in seqs})
        test_domain = "+".join(tags)
    return compute_metrics([s.label for s in seqs], [p.risk_score for p in preds],
                           [p.label for p in preds], train_domain=train_domain,
                           test_domain=test_domain, **_tags(model))


def run_transfer(model: ModelBundle, test_set, train_domain: str) -> EvalReport:
    """Evaluate a model trained on ``train_domain`` unchanged on another domain."""
    tags = sorted({s.domain_tag for s in test_set})
    test_domain = "+".join(tags)
    if test_domain == train_domain:
        warnings.warn(f"transfer test domain equals train domain {train_domain!r}", stacklevel=2)
    return evaluate(model, test_set, train_domain, test_domain)
