"""Per-track measurement history for the learned motion filter.

Two update policies are supported:

* ``movesort`` - push the measurement when present, then pop the oldest entry
  at most once per frame if it is too old and the buffer holds more than
  ``min_length`` entries.
* ``deepmovesort`` - do nothing while the object is unobserved; on a new
  measurement push it and drop every entry at least ``max_age`` frames old.

Boxes are kept in pixel coordinates so camera-motion transforms can be applied
directly.
"""

from __future__ import annotations

from collections import deque
from typing import Sequence

import numpy as np

from .features import TimedBox
from .geometry import AffineTransform, BoundingBox, apply_affine, compose

POLICIES = ("movesort", "deepmovesort")


class MeasurementBuffer:
    def __init__(self, max_age: int, policy: str = "deepmovesort", min_length: int = 1,
                 lazy_alignment: bool = False):
        if policy not in POLICIES:
            raise ValueError(f"unknown buffering policy {policy!r}")
        if max_age < 1:
            raise ValueError("max_age must be at least one frame")
        self.max_age = max_age
        self.min_length = min_length
        self.policy = policy
        self.lazy_alignment = lazy_alignment
        self._items: deque[TimedBox] = deque()
        self._pending: AffineTransform | None = None
        self._last_time: int | None = None
        self.dirty = False

    def __len__(self) -> int:
        return len(self._items)

    @property
    def items(self) -> list[TimedBox]:
        self._materialize()
        return list(self._items)

    @property
    def frames(self) -> list[int]:
        return [tb.frame for tb in self._items]

    @property
    def first_frame(self) -> int:
        return self._items[0].frame

    @property
    def last(self) -> TimedBox:
        self._materialize()
        return self._items[-1]

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        items = self.items
        frames = np.array([tb.frame for tb in items], dtype=np.float64)
        boxes = np.array([tb.box.tlwh() for tb in items], dtype=np.float64).reshape(-1, 4)
        return frames, boxes

    def mark_clean(self) -> None:
        self.dirty = False

    def _check_time(self, x: TimedBox | None, t: int) -> None:
        if self._last_time is not None and t < self._last_time:
            raise ValueError(f"update at frame {t} precedes previous update at {self._last_time}")
        if self._items and t < self._items[-1].frame:
            raise ValueError(f"update at frame {t} precedes buffered frame {self._items[-1].frame}")
        if x is not None:
            if x.frame != t:
                raise ValueError(f"measurement frame {x.frame} does not match update time {t}")
            if self._items and x.frame <= self._items[-1].frame:
                raise ValueError("buffered frames must be strictly increasing")

    def update(self, x: TimedBox | None, t: int) -> "MeasurementBuffer":
        if self.policy == "movesort":
            return update_movesort(self, x, t)
        return update_deepmovesort(self, x, t)

    def _push(self, x: TimedBox) -> None:
        self._materialize()
        self._items.append(x)
        self.dirty = True

    def _pop(self) -> None:
        self._items.popleft()
        self.dirty = True

    def align(self, t: AffineTransform) -> None:
        if t.is_identity() or not self._items:
            return
        if self.lazy_alignment:
            self._pending = t if self._pending is None else compose(t, self._pending)
        else:
            self._items = deque(TimedBox(tb.frame, apply_affine(t, tb.box)) for tb in self._items)
        self.dirty = True

    def _materialize(self) -> None:
        if self._pending is not None:
            p = self._pending
            self._pending = None
            self._items = deque(TimedBox(tb.frame, apply_affine(p, tb.box)) for tb in self._items)


def update_movesort(b: MeasurementBuffer, x: TimedBox | None, t: int) -> MeasurementBuffer:
    b._check_time(x, t)
    b._last_time = t
    if x is not None:
        b._push(x)
    if b._items and t - b.first_frame >= b.max_age and len(b) > b.min_length:
        b._pop()
    return b


def update_deepmovesort(b: MeasurementBuffer, x: TimedBox | None, t: int) -> MeasurementBuffer:
    b._check_time(x, t)
    b._last_time = t
    if x is None:
        return b
    b._push(x)
    while t - b.first_frame >= b.max_age:
        b._pop()
    return b


def align_to_camera(b: MeasurementBuffer, a: AffineTransform) -> MeasurementBuffer:
    b.align(a)
    return b


def stale_count(b: MeasurementBuffer, t: int) -> int:
    return sum(1 for f in b.frames if t - f >= b.max_age)


def buffering_comparison(trace: Sequence[bool], max_age: int, min_length: int) -> dict[str, int]:
    """Count stale entries left right after each observation under both policies.

    ``trace[t]`` says whether the object was observed at frame ``t``. The count
    is what the filter sees when it runs on a freshly updated buffer.
    """
    box = BoundingBox(0.0, 0.0, 10.0, 10.0)
    counts = {}
    for policy in POLICIES:
        buf = MeasurementBuffer(max_age, policy, min_length)
        stale = 0
        for t, seen in enumerate(trace):
            buf.update(TimedBox(t, box) if seen else None, t)
            if seen:
                stale += stale_count(buf, t)
        counts[policy] = stale
    return counts


def occlusion_trace(length: int, rng: np.random.Generator, p_occlusion: float = 0.6,
                    max_gap: int = 40) -> list[bool]:
    """Random visibility pattern with frequent multi-frame occlusions."""
    seen: list[bool] = []
    while len(seen) < length:
        run = int(rng.integers(1, 8))
        seen.extend([True] * run)
        if rng.random() < p_occlusion:
            seen.extend([False] * int(rng.integers(2, max_gap)))
    seen = seen[:length]
    seen[0] = True
    return seen

