"""CLEAR-MOT accuracy, identity F1 and displacement error.

Ground truth and predictions are mappings ``frame -> [(id, BoundingBox), ...]``.
Tracker records (objects with ``frame``, ``id`` and ``box``) can be converted
with :func:`as_frame_map`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import BoundingBox, iou_matrix

IOU_THRESHOLD = 0.5

FrameMap = Mapping[int, Sequence[tuple[int, BoundingBox]]]


def as_frame_map(records: Iterable) -> dict[int, list[tuple[int, BoundingBox]]]:
    out: dict[int, list[tuple[int, BoundingBox]]] = {}
    for r in records:
        out.setdefault(r.frame, []).append((r.id, r.box))
    return out


def _tlwh(items: Sequence[tuple[int, BoundingBox]]) -> np.ndarray:
    return np.array([b.tlwh() for _, b in items], dtype=np.float64).reshape(-1, 4)


@dataclass
class FrameMatching:
    pairs: list[tuple[int, int, float]]   # (gt index, prediction index, IoU)
    false_positives: list[int]
    false_negatives: list[int]


def match_frame(gt: Sequence[tuple[int, BoundingBox]], pred: Sequence[tuple[int, BoundingBox]],
                threshold: float = IOU_THRESHOLD) -> FrameMatching:
    """One-to-one matching maximizing total IoU over pairs with IoU >= threshold."""
    if not gt or not pred:
        return FrameMatching([], list(range(len(pred))), list(range(len(gt))))
    ious = iou_matrix(_tlwh(gt), _tlwh(pred))
    allowed = ious >= threshold
    cost = np.where(allowed, -ious, 1.0)
    rows, cols = linear_sum_assignment(cost)
    pairs = [(int(i), int(j), float(ious[i, j])) for i, j in zip(rows, cols) if allowed[i, j]]
    mg = {i for i, _, _ in pairs}
    mp = {j for _, j, _ in pairs}
    return FrameMatching(pairs, [j for j in range(len(pred)) if j not in mp],
                         [i for i in range(len(gt)) if i not in mg])


@dataclass
class MetricsReport:
    mota: float
    idf1: float
    id_switches: int
    false_positives: int
    false_negatives: int
    n_gt: int
    n_pred: int
    idtp: int
    idfp: int
    idfn: int
    mean_matched_iou: float

    def as_dict(self) -> dict[str, float | int]:
        return dict(self.__dict__)


def _frames(gt: FrameMap, pred: FrameMap) -> list[int]:
    return sorted(set(gt) | set(pred))


def clear_mot(gt: FrameMap, pred: FrameMap) -> tuple[int, int, int, int, list[float]]:
    """(FP, FN, IDSW, number of GT boxes, IoUs of matched pairs)."""
    fp = fn = idsw = n_gt = 0
    ious: list[float] = []
    last_match: dict[int, int] = {}
    for f in _frames(gt, pred):
        g, p = list(gt.get(f, ())), list(pred.get(f, ()))
        n_gt += len(g)
        fm = match_frame(g, p)
        fp += len(fm.false_positives)
        fn += len(fm.false_negatives)
        for i, j, v in fm.pairs:
            gid, pid = g[i][0], p[j][0]
            if gid in last_match and last_match[gid] != pid:
                idsw += 1
            last_match[gid] = pid
            ious.append(v)
    return fp, fn, idsw, n_gt, ious


def mota(gt: FrameMap, pred: FrameMap) -> float:
    fp, fn, idsw, n_gt, _ = clear_mot(gt, pred)
    if n_gt == 0:
        raise ValueError("MOTA is undefined without ground-truth boxes")
    return 1.0 - (fn + fp + idsw) / n_gt


def identity_counts(gt: FrameMap, pred: FrameMap, threshold: float = IOU_THRESHOLD) -> tuple[int, int, int]:
    """(IDTP, IDFP, IDFN) under the best one-to-one mapping of GT identities to predicted identities."""
    gids: dict[int, int] = {}
    pids: dict[int, int] = {}
    n_gt = n_pred = 0
    overlap: dict[tuple[int, int], int] = {}
    for f in _frames(gt, pred):
        g, p = list(gt.get(f, ())), list(pred.get(f, ()))
        n_gt += len(g)
        n_pred += len(p)
        for gid, _ in g:
            gids.setdefault(gid, len(gids))
        for pid, _ in p:
            pids.setdefault(pid, len(pids))
        if g and p:
            ious = iou_matrix(_tlwh(g), _tlwh(p))
            for i, j in zip(*np.nonzero(ious >= threshold)):
                key = (gids[g[i][0]], pids[p[j][0]])
                overlap[key] = overlap.get(key, 0) + 1
    idtp = 0
    if overlap:
        score = np.zeros((len(gids), len(pids)))
        for (i, j), c in overlap.items():
            score[i, j] = c
        rows, cols = linear_sum_assignment(-score)
        idtp = int(score[rows, cols].sum())
    return idtp, n_pred - idtp, n_gt - idtp


def idf1(gt: FrameMap, pred: FrameMap) -> float:
    idtp, idfp, idfn = identity_counts(gt, pred)
    if idtp + idfn == 0:
        raise ValueError("IDF1 is undefined without ground-truth boxes")
    return 2 * idtp / (2 * idtp + idfp + idfn)


def id_switches(gt: FrameMap, pred: FrameMap) -> int:
    return clear_mot(gt, pred)[2]


def mean_matched_iou(gt: FrameMap, pred: FrameMap) -> float:
    """Average IoU over matched GT/prediction pairs; NaN when nothing matches."""
    ious = clear_mot(gt, pred)[4]
    return float(np.mean(ious)) if ious else float("nan")


def evaluate(gt: FrameMap, pred: FrameMap) -> MetricsReport:
    fp, fn, idsw, n_gt, ious = clear_mot(gt, pred)
    if n_gt == 0:
        raise ValueError("metrics are undefined without ground-truth boxes")
    idtp, idfp, idfn = identity_counts(gt, pred)
    n_pred = sum(len(v) for v in pred.values())
    return MetricsReport(
        mota=1.0 - (fn + fp + idsw) / n_gt,
        idf1=2 * idtp / (2 * idtp + idfp + idfn),
        id_switches=idsw, false_positives=fp, false_negatives=fn, n_gt=n_gt, n_pred=n_pred,
        idtp=idtp, idfp=idfp, idfn=idfn,
        mean_matched_iou=float(np.mean(ious)) if ious else float("nan"),
    )


def ade(gt_track: np.ndarray, predicted: np.ndarray, image_size: tuple[float, float] | None = None) -> float:
    """Mean absolute error over the four tlwh coordinates and all steps.

    Inputs are ``(n, 4)`` arrays; with ``image_size`` they are taken as pixels and
    normalized first.
    """
    a = np.asarray(gt_track, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(predicted, dtype=np.float64).reshape(-1, 4)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {len(a)} ground-truth steps vs {len(b)} predicted")
    if len(a) == 0:
        raise ValueError("ade needs at least one step")
    if image_size is not None:
        scale = np.array([image_size[0], image_size[1], image_size[0], image_size[1]], dtype=np.float64)
        a, b = a / scale, b / scale
    return float(np.mean(np.abs(a - b)))
