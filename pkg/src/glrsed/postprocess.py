"""Frame activations to binary decisions and decoded event lists."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .events import Event


@dataclass(frozen=True)
class ThresholdConfig:
    mode: str = "adaptive"
    fixed_value: float = 0.5
    adaptive_lambda: float = 0.5
    floor: float = 0.1
    ceiling: float = 0.9
    min_duration: float = 0.1

    def __post_init__(self):
        if self.mode not in ("fixed", "adaptive"):
            raise ValueError(f"threshold mode must be 'fixed' or 'adaptive', got {self.mode!r}")
        if not 0 < self.floor <= self.ceiling < 1:
            raise ValueError("thresholds need 0 < floor <= ceiling < 1")
        if not 0 < self.fixed_value < 1 or not 0 < self.adaptive_lambda < 1:
            raise ValueError("fixed_value and adaptive_lambda must lie in (0, 1)")


def adaptive_threshold(y: np.ndarray, cfg: ThresholdConfig = ThresholdConfig()) -> np.ndarray:
    """Per-event threshold: lambda * max_t y[m, t], clamped to [floor, ceiling]."""
    y = np.asarray(y, dtype=np.float64)
    return np.clip(cfg.adaptive_lambda * y.max(axis=1), cfg.floor, cfg.ceiling)


def thresholds(y: np.ndarray, cfg: ThresholdConfig = ThresholdConfig()) -> np.ndarray:
    if cfg.mode == "adaptive":
        return adaptive_threshold(y, cfg)
    return np.full(np.asarray(y).shape[0], cfg.fixed_value)


def binarize(y: np.ndarray, theta) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    theta = np.broadcast_to(np.asarray(theta, dtype=np.float64), (y.shape[0],))
    return (y > theta[:, None]).astype(np.int8)


def decode(roll: np.ndarray, labels: Sequence[str], frame_shift: float = 0.02,
           min_duration: float = 0.1) -> list[Event]:
    """Runs of active frames -> events, sorted by onset then label."""
    roll = np.asarray(roll)
    if roll.shape[0] != len(labels):
        raise ValueError(f"roll has {roll.shape[0]} rows for {len(labels)} labels")
    events = []
    for m, label in enumerate(labels):
        padded = np.concatenate(([0], roll[m] != 0, [0])).astype(np.int8)
        edges = np.flatnonzero(np.diff(padded))
        for start, stop in zip(edges[::2], edges[1::2]):
            if (stop - start) * frame_shift < min_duration - 1e-9:
                continue
            events.append(Event(label, start * frame_shift, stop * frame_shift))
    events.sort(key=lambda e: (e.onset, e.label, e.offset))
    return events


def detect(y: np.ndarray, labels: Sequence[str], cfg: ThresholdConfig = ThresholdConfig(),
           frame_shift: float = 0.02) -> list[Event]:
    roll = binarize(y, thresholds(y, cfg))
    return decode(roll, labels, frame_shift, cfg.min_duration)
