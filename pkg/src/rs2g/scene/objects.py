"""Detected-object records: the detector-output format consumed by graph extraction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CATEGORIES = ("ego", "car", "truck", "motorcycle", "pedestrian", "cyclist", "lane-marking", "traffic-light")
VEHICLE_CATEGORIES = ("car", "truck", "motorcycle")
ATTRIBUTE_WIDTH = 15
RANGE_SCALE_M = 100.0
BEARING_SCALE_DEG = 180.0


@dataclass(frozen=True)
class DetectedObject:
    category: str
    bbox: tuple[float, float, float, float]
    range_m: float
    bearing_deg: float

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}")
        if len(self.bbox) != 4 or any(not 0.0 <= float(v) <= 1.0 for v in self.bbox):
            raise ValueError(f"bbox components must lie in [0, 1], got {self.bbox}")
        if not self.range_m >= 0.0:
            raise ValueError(f"range_m must be >= 0, got {self.range_m}")
        if not -180.0 <= self.bearing_deg <= 180.0:
            raise ValueError(f"bearing_deg must lie in [-180, 180], got {self.bearing_deg}")
        object.__setattr__(self, "bbox", tuple(float(v) for v in self.bbox))

    @property
    def is_ego(self) -> bool:
        return self.category == "ego"

    def to_dict(self) -> dict:
        return {"category": self.category, "bbox": list(self.bbox),
                "range_m": self.range_m, "bearing_deg": self.bearing_deg}

    @classmethod
    def from_dict(cls, d: dict) -> "DetectedObject":
        return cls(d["category"], tuple(d["bbox"]), float(d["range_m"]), float(d["bearing_deg"]))


@dataclass(frozen=True)
class Frame:
    timestamp_s: float
    objects: tuple[DetectedObject, ...]

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        n_ego = sum(o.is_ego for o in self.objects)
        if n_ego != 1:
            raise ValueError(f"frame at t={self.timestamp_s} has {n_ego} ego objects, expected 1")

    def to_dict(self) -> dict:
        return {"timestamp_s": self.timestamp_s, "objects": [o.to_dict() for o in self.objects]}

    @classmethod
    def from_dict(cls, d: dict) -> "Frame":
        return cls(float(d["timestamp_s"]), tuple(DetectedObject.from_dict(o) for o in d["objects"]))


@dataclass(frozen=True)
class SceneSequence:
    id: str
    frames: tuple[Frame, ...]
    label: int
    domain_tag: str = "A"

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        if len(self.frames) < 2:
            raise ValueError(f"sequence {self.id!r} needs at least 2 frames")
        if self.label not in (0, 1):
            raise ValueError(f"sequence {self.id!r} has label {self.label!r}, expected 0 or 1")
        ts = [f.timestamp_s for f in self.frames]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError(f"sequence {self.id!r} timestamps are not strictly increasing")

    @property
    def constant_object_count(self) -> bool:
        n = len(self.frames[0].objects)
        return all(len(f.objects) == n for f in self.frames)

    def to_dict(self) -> dict:
        return {"id": self.id, "domain_tag": self.domain_tag, "label": self.label,
                "frames": [f.to_dict() for f in self.frames]}

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSequence":
        return cls(str(d["id"]), tuple(Frame.from_dict(f) for f in d["frames"]),
                   int(d["label"]), str(d["domain_tag"]))


@dataclass(frozen=True)
class Dataset:
    sequences: tuple[SceneSequence, ...]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "sequences", tuple(self.sequences))
        ids = [s.id for s in self.sequences]
        if len(set(ids)) != len(ids):
            raise ValueError("sequence ids are not unique")

    def __len__(self) -> int:
        return len(self.sequences)

    def __iter__(self):
        return iter(self.sequences)

    def __getitem__(self, i):
        return self.sequences[i]

    @property
    def labels(self) -> list[int]:
        return [s.label for s in self.sequences]


def encode_attributes(obj: DetectedObject) -> np.ndarray:
    """15 features: category one-hot, bbox, range/100 m, bearing/180 deg, bias 1."""
    v = np.zeros(ATTRIBUTE_WIDTH)
    v[CATEGORIES.index(obj.category)] = 1.0
    v[8:12] = obj.bbox
    v[12] = obj.range_m / RANGE_SCALE_M
    v[13] = obj.bearing_deg / BEARING_SCALE_DEG
    v[14] = 1.0
    return v


def encode_frame(frame: Frame) -> np.ndarray:
    return np.stack([encode_attributes(o) for o in frame.objects])


def encode_sequence(seq: SceneSequence) -> np.ndarray | list[np.ndarray]:
    """(T, n, 15) array when the object count is constant, else a per-frame list."""
    frames = [encode_frame(f) for f in seq.frames]
    if seq.constant_object_count:
        return np.stack(frames)
    return frames


def min_ego_gap(seq: SceneSequence) -> float:
    """Smallest ego-to-vehicle range over all frames (inf if no vehicles)."""
    gaps = [o.range_m for f in seq.frames for o in f.objects if o.category in VEHICLE_CATEGORIES]
    return min(gaps) if gaps else float("inf")


def risk_label(seq_or_frames, threshold_m: float) -> int:
    """1 iff some vehicle comes closer than ``threshold_m`` to the ego."""
    frames = seq_or_frames.frames if isinstance(seq_or_frames, SceneSequence) else seq_or_frames
    gaps = [o.range_m for f in frames for o in f.objects if o.category in VEHICLE_CATEGORIES]
    return int(bool(gaps) and min(gaps) < threshold_m)
