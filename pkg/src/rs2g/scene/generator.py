"""Synthetic lane-change scenarios with kinematic risk labels.

The ego drives in the middle lane of a straight road and changes lanes at a
random time. Other vehicles move at constant relative velocity; every frame
observes them through Gaussian position noise. A sequence is risky iff the
smallest observed ego-to-vehicle range drops below the domain's threshold.
Safe and risky draws are kept apart by ``separation_margin_m`` on either
side of the threshold so the classes are separable.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np

from .objects import Dataset, DetectedObject, Frame, SceneSequence, VEHICLE_CATEGORIES

VEHICLE_SIZE_M = {  # (width, length, height)
    "ego": (1.8, 4.5, 1.5),
    "car": (1.8, 4.5, 1.5),
    "truck": (2.5, 10.0, 3.5),
    "motorcycle": (0.8, 2.2, 1.4),
}
CATEGORY_WEIGHTS = (0.7, 0.15, 0.15)
# Surround camera rig rendered as one equirectangular panorama: columns span
# bearing -180..180 deg, rows span +/- half the vertical field of view.
CAMERA_HEIGHT_M = 1.4
VERTICAL_FOV_DEG = 60.0
MIN_PROJECTION_RANGE_M = 0.5
EGO_BBOX = (0.5, 0.5, 0.0, 0.0)


@dataclass(frozen=True)
class DomainConfig:
    tag: str = "A"
    lane_width_m: float = 3.5
    min_vehicles: int = 2
    max_vehicles: int = 8
    position_noise_m: float = 0.3
    risk_threshold_m: float = 4.0
    separation_margin_m: float = 1.0
    road_length_m: float = 200.0
    spawn_range_m: float = 40.0
    max_relative_speed_mps: float = 3.0
    n_frames: int = 20
    frame_dt_s: float = 0.5
    lane_change_duration_s: float = 3.0
    max_attempts: int = 1000

    def validate(self) -> None:
        if self.risk_threshold_m <= 0:
            raise ValueError("risk_threshold_m must be positive")
        if self.risk_threshold_m >= self.road_length_m:
            raise ValueError(
                f"risk threshold {self.risk_threshold_m} m exceeds road length {self.road_length_m} m")
        if not 0 <= self.separation_margin_m < self.risk_threshold_m:
            raise ValueError("separation_margin_m must lie in [0, risk_threshold_m)")
        if 2 * self.spawn_range_m > self.road_length_m:
            raise ValueError("spawn range does not fit on the road")
        if not 1 <= self.min_vehicles <= self.max_vehicles:
            raise ValueError("need 1 <= min_vehicles <= max_vehicles")
        if self.lane_width_m <= 0 or self.position_noise_m < 0:
            raise ValueError("lane width must be positive and noise non-negative")
        if self.n_frames < 2 or self.frame_dt_s <= 0:
            raise ValueError("need at least 2 frames with positive spacing")
        horizon = (self.n_frames - 1) * self.frame_dt_s
        if horizon <= self.lane_change_duration_s:
            raise ValueError("sequence too short to contain the lane change")
        if self.spawn_range_m + self.max_relative_speed_mps * horizon >= self.road_length_m / 2:
            raise ValueError("vehicles can leave the road segment within the horizon")


DOMAIN_A = DomainConfig()
# Sim2Real-style shift: noisier positions, narrower lanes, denser traffic.
DOMAIN_B = DomainConfig(tag="B", lane_width_m=3.0, min_vehicles=4, max_vehicles=10, position_noise_m=0.45)

DOMAINS = {"A": DOMAIN_A, "B": DOMAIN_B}


def domain_config(tag: str, **overrides) -> DomainConfig:
    base = DOMAINS.get(tag, dataclasses.replace(DOMAIN_A, tag=tag))
    return dataclasses.replace(base, **overrides) if overrides else base


def _bbox(dx: float, dy: float, category: str) -> tuple[float, float, float, float]:
    """Panoramic image box of a road-aligned vehicle at relative position (dx, dy).

    Apparent size grows as the vehicle approaches, as in a camera detector.
    """
    w, length, height = VEHICLE_SIZE_M[category]
    r = max(math.hypot(dx, dy), MIN_PROJECTION_RANGE_M)
    bearing = math.atan2(dy, dx)
    extent = w * abs(math.cos(bearing)) + length * abs(math.sin(bearing))
    ang_w = 2.0 * math.atan(extent / (2.0 * r))
    top = math.atan((height - CAMERA_HEIGHT_M) / r)
    bottom = math.atan(-CAMERA_HEIGHT_M / r)
    fov = math.radians(VERTICAL_FOV_DEG)
    clip = lambda v: min(1.0, max(0.0, v))
    return (clip(0.5 - bearing / (2.0 * math.pi)), clip(0.5 - (top + bottom) / (2.0 * fov)),
            clip(ang_w / (2.0 * math.pi)), clip((top - bottom) / fov))


def _ego_lateral(t: np.ndarray, side: int, t0: float, cfg: DomainConfig) -> np.ndarray:
    u = np.clip((t - t0) / cfg.lane_change_duration_s, 0.0, 1.0)
    return side * cfg.lane_width_m * 0.5 * (1.0 - np.cos(math.pi * u))


def _draw_scenario(rng: np.random.Generator, cfg: DomainConfig, risky: bool):
    """Relative vehicle tracks (V, T, 2) before noise, plus categories."""
    times = np.arange(cfg.n_frames) * cfg.frame_dt_s
    horizon = times[-1]
    side = int(rng.choice((-1, 1)))
    t0 = rng.uniform(0.5, horizon - cfg.lane_change_duration_s)
    ego_y = _ego_lateral(times, side, t0, cfg)
    n_veh = int(rng.integers(cfg.min_vehicles, cfg.max_vehicles + 1))
    vmax = cfg.max_relative_speed_mps

    lanes = rng.integers(-1, 2, size=n_veh)
    x0 = rng.uniform(-cfg.spawn_range_m, cfg.spawn_range_m, size=n_veh)
    dv = rng.uniform(-vmax, vmax, size=n_veh)
    if risky:
        # conflict vehicle in the target lane, level with the ego after the move
        t_c = rng.uniform(t0 + 0.7 * cfg.lane_change_duration_s, horizon)
        lanes[0] = side
        dv[0] = rng.uniform(-vmax, vmax)
        x0[0] = rng.uniform(-2.0, 2.0) - dv[0] * t_c
    elif rng.random() < 0.5:
        # near miss: same target lane, but kept well clear
        t_c = rng.uniform(t0 + 0.7 * cfg.lane_change_duration_s, horizon)
        lanes[0] = side
        dv[0] = rng.uniform(-vmax, vmax)
        gap = cfg.risk_threshold_m + cfg.separation_margin_m + rng.uniform(2.0, 10.0)
        x0[0] = rng.choice((-1.0, 1.0)) * gap - dv[0] * t_c
    cats = rng.choice(VEHICLE_CATEGORIES, size=n_veh, p=CATEGORY_WEIGHTS)
    lat_jitter = rng.normal(0.0, 0.15, size=n_veh)

    rel_x = x0[:, None] + dv[:, None] * times[None, :]
    rel_y = (lanes * cfg.lane_width_m + lat_jitter)[:, None] - ego_y[None, :]
    return times, rel_x, rel_y, [str(c) for c in cats]


def _frames(times, ox, oy, cats) -> tuple[Frame, ...]:
    frames = []
    ego = DetectedObject("ego", EGO_BBOX, 0.0, 0.0)
    for t_idx, t in enumerate(times):
        objs = [ego]
        for v, cat in enumerate(cats):
            dx, dy = float(ox[v, t_idx]), float(oy[v, t_idx])
            objs.append(DetectedObject(cat, _bbox(dx, dy, cat), math.hypot(dx, dy),
                                       math.degrees(math.atan2(dy, dx))))
        frames.append(Frame(float(t), tuple(objs)))
    return tuple(frames)


def generate_sequence(rng: np.random.Generator, cfg: DomainConfig, risky: bool, seq_id: str) -> SceneSequence:
    lo = cfg.risk_threshold_m - cfg.separation_margin_m
    hi = cfg.risk_threshold_m + cfg.separation_margin_m
    for _ in range(cfg.max_attempts):
        times, rx, ry, cats = _draw_scenario(rng, cfg, risky)
        ox = rx + rng.normal(0.0, cfg.position_noise_m, size=rx.shape)
        oy = ry + rng.normal(0.0, cfg.position_noise_m, size=ry.shape)
        gap = float(np.min(np.hypot(ox, oy)))
        if (risky and gap < lo) or (not risky and gap >= hi):
            return SceneSequence(seq_id, _frames(times, ox, oy, cats), int(risky), cfg.tag)
    kind = "risky" if risky else "safe"
    raise RuntimeError(f"could not draw a {kind} scenario in {cfg.max_attempts} attempts; config infeasible")


def generate_synthetic(config: DomainConfig = DOMAIN_A, n_sequences: int = 100,
                       risky_ratio: float = 0.25, seed: int = 0) -> Dataset:
    """Seeded dataset with ``round(risky_ratio * n)`` risky sequences.

    Each sequence draws from its own child seed, so generation order does
    not affect content.
    """
    if not 0.0 < risky_ratio < 1.0:
        raise ValueError(f"risky_ratio must lie in (0, 1), got {risky_ratio}")
    if n_sequences < 2:
        raise ValueError("n_sequences must be >= 2")
    config.validate()
    root = np.random.SeedSequence(seed)
    label_rng = np.random.default_rng(root.spawn(1)[0])
    n_risky = int(math.floor(risky_ratio * n_sequences + 0.5))
    labels = np.zeros(n_sequences, dtype=int)
    labels[:n_risky] = 1
    label_rng.shuffle(labels)
    children = root.spawn(n_sequences)
    seqs = [
        generate_sequence(np.random.default_rng(children[i]), config, bool(labels[i]),
                          f"{config.tag}-{seed}-{i:05d}")
        for i in range(n_sequences)
    ]
    meta = {"config": dataclasses.asdict(config), "seed": seed,
            "n_sequences": n_sequences, "risky_ratio": risky_ratio}
    return Dataset(tuple(seqs), meta)
