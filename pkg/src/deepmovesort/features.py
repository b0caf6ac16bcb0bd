"""Trajectory feature extraction for the learned motion filter.

Input rows are 13 wide, in this fixed order::

    [0:4]   absolute normalized box (x_left, y_top, width, height)
    [4:8]   standardized first-order differences divided by the frame gap
    [8:12]  standardized offsets to the last observation divided by the frame gap
    [12]    frame offset to the last observation (<= 0)

Target / observation rows are 5 wide: standardized offset to the last
observation (no gap scaling) followed by the positive frame offset.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .geometry import BoundingBox

FEATURE_LAYOUT = "abs4-diff4-rel4-dt1/rel4-dt1"
INPUT_DIM = 13
TARGET_DIM = 5
STD_FLOOR = 1e-8
COORD_WINDOW = (-2.0, 3.0)


@dataclass(frozen=True, slots=True)
class TimedBox:
    frame: int
    box: BoundingBox

    def __post_init__(self) -> None:
        if self.frame < 0:
            raise ValueError(f"frame must be non-negative, got {self.frame}")


def _ones() -> np.ndarray:
    return np.ones(4)


def _zeros() -> np.ndarray:
    return np.zeros(4)


@dataclass
class FeatureStats:
    diff_mean: np.ndarray = field(default_factory=_zeros)
    diff_std: np.ndarray = field(default_factory=_ones)
    rel_mean: np.ndarray = field(default_factory=_zeros)
    rel_std: np.ndarray = field(default_factory=_ones)
    target_mean: np.ndarray = field(default_factory=_zeros)
    target_std: np.ndarray = field(default_factory=_ones)

    def __post_init__(self) -> None:
        for name in ("diff_mean", "diff_std", "rel_mean", "rel_std", "target_mean", "target_std"):
            value = np.asarray(getattr(self, name), dtype=np.float64).reshape(4)
            object.__setattr__(self, name, value)
        for name in ("diff_std", "rel_std", "target_std"):
            if np.any(getattr(self, name) <= STD_FLOOR / 2):
                raise ValueError(f"{name} must be strictly positive")

    @classmethod
    def identity(cls) -> "FeatureStats":
        return cls()

    def to_dict(self) -> dict[str, list[float]]:
        return {k: [float(v) for v in getattr(self, k)] for k in (
            "diff_mean", "diff_std", "rel_mean", "rel_std", "target_mean", "target_std")}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureStats":
        return cls(**{k: np.asarray(v, dtype=np.float64) for k, v in d.items()})

    def destandardize_target(self, values: np.ndarray) -> np.ndarray:
        return np.asarray(values) * self.target_std + self.target_mean


def as_arrays(history: Sequence[TimedBox] | tuple[np.ndarray, np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Return (frames, boxes) arrays for a TimedBox list or an already-split pair."""
    if isinstance(history, tuple) and len(history) == 2 and isinstance(history[0], np.ndarray):
        return np.asarray(history[0], dtype=np.float64), np.asarray(history[1], dtype=np.float64)
    frames = np.array([tb.frame for tb in history], dtype=np.float64)
    boxes = np.array([tb.box.tlwh() for tb in history], dtype=np.float64).reshape(-1, 4)
    return frames, boxes


def _check_history(frames: np.ndarray, boxes: np.ndarray) -> None:
    if len(frames) == 0:
        raise ValueError("history must not be empty")
    if np.any(np.diff(frames) <= 0):
        raise ValueError("history frames must be strictly increasing")
    lo, hi = COORD_WINDOW
    if np.any(boxes < lo) or np.any(boxes > hi) or not np.all(np.isfinite(boxes)):
        raise ValueError("normalized coordinates outside the sanity window")


def raw_differences(frames: np.ndarray, boxes: np.ndarray) -> np.ndarray:
    """(n-1, 4) first-order differences per frame of gap."""
    return np.diff(boxes, axis=0) / np.diff(frames)[:, None]


def raw_relatives(frames: np.ndarray, boxes: np.ndarray) -> np.ndarray:
    """(n-1, 4) offsets of every non-final row to the last row, divided by their frame gap."""
    gaps = frames[-1] - frames[:-1]
    return (boxes[:-1] - boxes[-1]) / gaps[:, None]


def input_features(frames: np.ndarray, boxes: np.ndarray, stats: FeatureStats, check: bool = True) -> np.ndarray:
    frames = np.asarray(frames, dtype=np.float64)
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    if check:
        _check_history(frames, boxes)
    n = len(frames)
    out = np.zeros((n, INPUT_DIM))
    out[:, 0:4] = boxes
    if n > 1:
        out[1:, 4:8] = (raw_differences(frames, boxes) - stats.diff_mean) / stats.diff_std
        out[:-1, 8:12] = (raw_relatives(frames, boxes) - stats.rel_mean) / stats.rel_std
    out[:, 12] = frames - frames[-1]
    return out


def target_features(last_frame: float, last_box: np.ndarray, frames: np.ndarray, boxes: np.ndarray,
                    stats: FeatureStats, check: bool = True) -> np.ndarray:
    frames = np.asarray(frames, dtype=np.float64).reshape(-1)
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    if check and np.any(frames <= last_frame):
        raise ValueError("target frames must come after the last observation")
    out = np.empty((len(frames), TARGET_DIM))
    out[:, 0:4] = ((boxes - np.asarray(last_box)) - stats.target_mean) / stats.target_std
    out[:, 4] = frames - last_frame
    return out


def extract_input(history: Sequence[TimedBox], stats: FeatureStats) -> np.ndarray:
    frames, boxes = as_arrays(history)
    return input_features(frames, boxes, stats)


def extract_target(history_last: TimedBox, future: Sequence[TimedBox], stats: FeatureStats) -> np.ndarray:
    frames, boxes = as_arrays(future)
    return target_features(history_last.frame, history_last.box.tlwh(), frames, boxes, stats)


def destandardize_input(features: np.ndarray, stats: FeatureStats) -> np.ndarray:
    """Undo standardization of the difference and relative channels (placeholders stay zero-based)."""
    raw = np.array(features, dtype=np.float64, copy=True)
    raw[:, 4:8] = raw[:, 4:8] * stats.diff_std + stats.diff_mean
    raw[:, 8:12] = raw[:, 8:12] * stats.rel_std + stats.rel_mean
    return raw


def fit_stats(windows: Iterable) -> FeatureStats:
    """Population mean/std of the difference, relative and target channels.

    Each window is a ``TrainingWindow``-like object (``input_frames``,
    ``input_boxes`` and optionally ``target_frames``/``target_boxes``/``target_mask``)
    or a plain history (TimedBox list or ``(frames, boxes)`` pair). Zero-filled
    placeholder rows are excluded.
    """
    diffs, rels, targets = [], [], []
    n_windows = 0
    for w in windows:
        if hasattr(w, "input_frames"):
            frames, boxes = np.asarray(w.input_frames, float), np.asarray(w.input_boxes, float)
            tf = getattr(w, "target_frames", None)
            if tf is not None and len(tf):
                mask = np.asarray(getattr(w, "target_mask", np.ones(len(tf), bool)), bool)
                tb = np.asarray(w.target_boxes, float)[mask]
                targets.append(tb - boxes[-1])
        else:
            frames, boxes = as_arrays(w)
        if len(frames) < 2:
            continue
        n_windows += 1
        diffs.append(raw_differences(frames, boxes))
        rels.append(raw_relatives(frames, boxes))
    if n_windows < 2:
        raise ValueError("fit_stats needs at least two windows with two or more observations")

    def moments(chunks):
        if not chunks:
            return np.zeros(4), np.ones(4)
        values = np.concatenate(chunks, axis=0)
        if len(values) == 0:
            return np.zeros(4), np.ones(4)
        return values.mean(axis=0), np.maximum(values.std(axis=0), STD_FLOOR)

    dm, ds = moments(diffs)
    rm, rs = moments(rels)
    tm, ts = moments(targets)
    return FeatureStats(dm, ds, rm, rs, tm, ts)


def normalize_boxes(boxes: np.ndarray, image_size: tuple[float, float]) -> np.ndarray:
    w, h = image_size
    return np.asarray(boxes, dtype=np.float64) / np.array([w, h, w, h])


def denormalize_boxes(boxes: np.ndarray, image_size: tuple[float, float]) -> np.ndarray:
    w, h = image_size
    return np.asarray(boxes, dtype=np.float64) * np.array([w, h, w, h])
