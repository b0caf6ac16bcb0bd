"""Association costs between track predictions and detections, and the assignment step.

Cost matrices are ``(n_tracks, n_detections)`` float arrays. Forbidden pairs
hold the ``GATED`` sentinel (``+inf``); every other cell is finite and
non-negative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import BoundingBox, expand, iou, iou_matrix

GATED = math.inf


def is_gated(c) -> np.ndarray | bool:
    return np.isposinf(c)


@dataclass(frozen=True)
class DTIoUParams:
    upper: float = 0.5
    lower: float = 0.25
    decay: float = 0.2
    e_rate: float = 0.0

    def __post_init__(self) -> None:
        if not (self.upper >= self.lower >= 0):
            raise ValueError("need upper >= lower >= 0")
        if self.decay < 0 or self.e_rate < 0:
            raise ValueError("decay and expansion rate must be non-negative")

    @classmethod
    def fixed(cls, threshold: float, e_rate: float = 0.0) -> "DTIoUParams":
        """Constant threshold, i.e. plain IoU gating."""
        return cls(threshold, threshold, 0.0, e_rate)


@dataclass(frozen=True)
class AssociationWeights:
    dtiou: float = 1.0
    hpc: float = 0.0
    hpc_height: float = 1.0
    hpc_y: float = 1.0
    atcm: float = 0.0
    appearance: float = 0.0
    fuse_detection_score: bool = False

    def __post_init__(self) -> None:
        values = (self.dtiou, self.hpc, self.hpc_height, self.hpc_y, self.atcm, self.appearance)
        if any(v < 0 for v in values):
            raise ValueError("association weights must be non-negative")
        if max(self.dtiou, self.hpc, self.atcm, self.appearance) <= 0:
            raise ValueError("at least one association weight must be positive")

    def scaled(self, k: float) -> "AssociationWeights":
        return AssociationWeights(self.dtiou * k, self.hpc * k, self.hpc_height, self.hpc_y,
                                  self.atcm * k, self.appearance * k, self.fuse_detection_score)


def dtiou_threshold(t_occluded: float, upper: float, lower: float, decay: float) -> float:
    return max(upper - decay * t_occluded, lower)


def dtiou_cost(pred: BoundingBox, det: BoundingBox, t_occluded: float, params: DTIoUParams,
               fuse: bool = False) -> float:
    threshold = dtiou_threshold(t_occluded, params.upper, params.lower, params.decay)
    score = iou(expand(pred, params.e_rate), expand(det, params.e_rate))
    if fuse:
        score *= det.confidence
    return GATED if score < threshold else 1.0 - score


def _expand_array(boxes: np.ndarray, e_rate: float) -> np.ndarray:
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    if e_rate == 0:
        return boxes
    out = boxes.copy()
    out[:, 0] -= boxes[:, 2] * e_rate / 2
    out[:, 1] -= boxes[:, 3] * e_rate / 2
    out[:, 2:] *= 1.0 + e_rate
    return out


def dtiou_cost_matrix(preds: np.ndarray, dets: np.ndarray, det_conf: np.ndarray,
                      t_occluded: np.ndarray, params: DTIoUParams, fuse: bool = False) -> np.ndarray:
    """Vectorized ``dtiou_cost`` over tlwh arrays."""
    scores = iou_matrix(_expand_array(preds, params.e_rate), _expand_array(dets, params.e_rate))
    if fuse:
        scores = scores * np.asarray(det_conf, dtype=np.float64)[None, :]
    thresholds = np.maximum(params.upper - params.decay * np.asarray(t_occluded, np.float64),
                            params.lower)
    return np.where(scores < thresholds[:, None], GATED, 1.0 - scores)


def hpc_cost(pred: BoundingBox, det: BoundingBox, lambda_h: float, lambda_y: float) -> float:
    """Height and bottom-edge disagreement. Boxes are expected in normalized coordinates."""
    return lambda_h * abs(pred.height - det.height) + lambda_y * abs(pred.y_bottom - det.y_bottom)


def hpc_cost_matrix(preds: np.ndarray, dets: np.ndarray, lambda_h: float, lambda_y: float) -> np.ndarray:
    p = np.asarray(preds, dtype=np.float64).reshape(-1, 4)
    d = np.asarray(dets, dtype=np.float64).reshape(-1, 4)
    dh = np.abs(p[:, None, 3] - d[None, :, 3])
    dy = np.abs((p[:, None, 1] + p[:, None, 3]) - (d[None, :, 1] + d[None, :, 3]))
    return lambda_h * dh + lambda_y * dy


def atcm_cost(predicted_conf: float, detected_conf: float) -> float:
    return abs(min(max(predicted_conf, 0.0), 1.0) - detected_conf)


def atcm_cost_matrix(predicted_conf: np.ndarray, detected_conf: np.ndarray) -> np.ndarray:
    p = np.clip(np.asarray(predicted_conf, dtype=np.float64), 0.0, 1.0)
    return np.abs(p[:, None] - np.asarray(detected_conf, dtype=np.float64)[None, :])


def _check_unit(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v)
    if norm < 1e-12:
        raise ValueError("embedding has zero norm")
    if abs(norm - 1.0) > 1e-6:
        raise ValueError(f"embedding must be L2-normalized, got norm {norm}")
    return v


def appearance_cost(track_embedding: np.ndarray, det_embedding: np.ndarray) -> float:
    return float(1.0 - _check_unit(track_embedding) @ _check_unit(det_embedding))


def appearance_cost_matrix(track_embeddings: list[np.ndarray | None], det_embeddings: np.ndarray) -> np.ndarray:
    """Cosine distances; rows of tracks without an embedding are NaN (no opinion)."""
    dets = np.asarray(det_embeddings, dtype=np.float64)
    out = np.full((len(track_embeddings), len(dets)), np.nan)
    for i, emb in enumerate(track_embeddings):
        if emb is not None and len(dets):
            out[i] = 1.0 - dets @ emb
    return out


def update_track_embedding(current: np.ndarray | None, new: np.ndarray, alpha: float = 0.9) -> np.ndarray:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    new = np.asarray(new, dtype=np.float64)
    if current is None:
        return new / np.linalg.norm(new)
    blend = alpha * np.asarray(current, dtype=np.float64) + (1.0 - alpha) * new
    norm = np.linalg.norm(blend)
    if norm < 1e-9:
        return np.asarray(current, dtype=np.float64)
    return blend / norm


def fuse(costs: dict[str, np.ndarray], w: AssociationWeights) -> np.ndarray:
    """Weighted sum of the per-cue matrices; DT-IoU gating carries over to the result.

    ``costs`` may hold ``dtiou``, ``hpc``, ``atcm`` and ``appearance``. NaN cells of
    the appearance matrix (tracks without an embedding) contribute nothing.
    """
    weights = {"dtiou": w.dtiou, "hpc": w.hpc, "atcm": w.atcm, "appearance": w.appearance}
    shapes = {np.shape(c) for c in costs.values()}
    if len(shapes) > 1:
        raise ValueError(f"cost matrices differ in shape: {sorted(shapes)}")
    if not costs:
        raise ValueError("no cost matrices to fuse")
    shape = shapes.pop()
    total = np.zeros(shape)
    gated = np.zeros(shape, dtype=bool)
    for key, c in costs.items():
        if key not in weights:
            raise ValueError(f"unknown cost kind {key!r}")
        c = np.asarray(c, dtype=np.float64)
        if key == "dtiou":
            gated |= is_gated(c)
        lam = weights[key]
        if lam == 0:
            continue
        total += lam * np.where(np.isfinite(c), c, 0.0)
    total[gated] = GATED
    return total


@dataclass
class Assignment:
    matches: list[tuple[int, int]]
    unmatched_tracks: list[int]
    unmatched_detections: list[int]

    def total_cost(self, c: np.ndarray) -> float:
        return math.fsum(float(c[i, j]) for i, j in self.matches)


def solve(c: np.ndarray) -> Assignment:
    """Minimum-cost matching that never uses a gated cell.

    Among matchings with the largest possible number of non-gated pairs, the one
    of least total cost is returned.
    """
    c = np.asarray(c, dtype=np.float64)
    n, m = c.shape if c.ndim == 2 else (0, 0)
    if n == 0 or m == 0:
        return Assignment([], list(range(n)), list(range(m)))
    gated = is_gated(c)
    if np.any(np.isnan(c)) or np.any(np.isneginf(c)):
        raise ValueError("cost matrix holds NaN or -inf")
    finite = c[~gated]
    if finite.size == 0:
        return Assignment([], list(range(n)), list(range(m)))
    if np.any(finite < 0):
        raise ValueError("costs must be non-negative")
    big = (min(n, m) + 1) * (float(finite.max()) + 1.0)
    rows, cols = linear_sum_assignment(np.where(gated, big, c))
    matches = sorted((int(i), int(j)) for i, j in zip(rows, cols) if not gated[i, j])
    mt = {i for i, _ in matches}
    md = {j for _, j in matches}
    return Assignment(matches, [i for i in range(n) if i not in mt], [j for j in range(m) if j not in md])
