"""Stratified splitting and JSON-lines persistence of datasets."""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .objects import Dataset, SceneSequence


def split(dataset: Dataset, train_fraction: float = 0.7, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Label-stratified partition with ``round(train_fraction * N)`` training sequences."""
    n = len(dataset)
    if n < 2:
        raise ValueError("need at least 2 sequences to split")
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    by_label = {c: [i for i, s in enumerate(dataset) if s.label == c] for c in (0, 1)}
    for c, idx in by_label.items():
        if not idx:
            raise ValueError(f"class {c} has no sequences; cannot stratify")
    n_train = int(math.floor(train_fraction * n + 0.5))
    # largest-remainder allocation of the training quota across classes
    exact = {c: train_fraction * len(idx) for c, idx in by_label.items()}
    quota = {c: int(math.floor(v)) for c, v in exact.items()}
    for c in sorted(exact, key=lambda c: (-(exact[c] - quota[c]), c)):
        if sum(quota.values()) >= n_train:
            break
        quota[c] += 1
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for c in (0, 1):
        idx = list(by_label[c])
        rng.shuffle(idx)
        train_idx += idx[:quota[c]]
        test_idx += idx[quota[c]:]
    train_idx.sort()
    test_idx.sort()
    meta = dict(dataset.metadata)
    return (Dataset(tuple(dataset[i] for i in train_idx), {**meta, "split": "train", "split_seed": seed}),
            Dataset(tuple(dataset[i] for i in test_idx), {**meta, "split": "test", "split_seed": seed}))


def _meta_path(path: Path) -> Path:
    return path.with_name(path.name + ".meta.json")


def save_dataset(dataset: Dataset, path) -> None:
    """One SceneSequence per JSON line; metadata goes to a ``.meta.json`` sidecar."""
    path = Path(path)
    lines = [json.dumps(s.to_dict(), separators=(",", ":")) for s in dataset]
    path.write_text("".join(line + "\n" for line in lines))
    _meta_path(path).write_text(json.dumps(dataset.metadata, sort_keys=True, indent=1) + "\n")


def load_dataset(path) -> Dataset:
    path = Path(path)
    seqs: list[SceneSequence] = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                seqs.append(SceneSequence.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed sequence record ({exc})") from None
    meta = {}
    mp = _meta_path(path)
    if mp.exists():
        meta = json.loads(mp.read_text())
    return Dataset(tuple(seqs), meta)
