"""Readers and writers for MOTChallenge text files, embeddings, CMC matrices and filter models.

Frames are 1-based in every file and 0-based in memory. Byte-level layouts are
documented in ``docs/formats.md``.
"""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .features import FEATURE_LAYOUT, FeatureStats
from .geometry import AffineTransform, BoundingBox
from .transfilter import TransFilter, TransFilterConfig, parameter_shapes


class FormatError(ValueError):
    """Malformed input file; the message names the file line when one applies."""


@dataclass(frozen=True)
class MotRow:
    frame: int          # 0-based
    id: int
    box: BoundingBox


def _floats(line: str, lineno: int, path, min_fields: int) -> list[float]:
    parts = [p.strip() for p in line.replace(" ", "").split(",")] if "," in line else line.split()
    if len(parts) < min_fields:
        raise FormatError(f"{path}:{lineno}: expected at least {min_fields} fields, got {len(parts)}")
    try:
        values = [float(p) for p in parts]
    except ValueError:
        raise FormatError(f"{path}:{lineno}: non-numeric field in {line.strip()!r}") from None
    if not all(math.isfinite(v) for v in values):
        raise FormatError(f"{path}:{lineno}: NaN or infinite field")
    return values


def read_mot_rows(path: str | Path) -> list[MotRow]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            v = _floats(line, lineno, path, 6)
            frame, tid, x, y, w, h = v[:6]
            conf = v[6] if len(v) > 6 else 1.0
            if frame < 1 or frame != int(frame):
                raise FormatError(f"{path}:{lineno}: frame must be a positive integer")
            if w <= 0 or h <= 0:
                raise FormatError(f"{path}:{lineno}: non-positive width/height ({w}, {h})")
            if not 0.0 <= conf <= 1.0:
                raise FormatError(f"{path}:{lineno}: confidence {conf} outside [0, 1]")
            rows.append(MotRow(int(frame) - 1, int(tid), BoundingBox(x, y, w, h, conf)))
    return rows


def read_detections(path: str | Path) -> dict[int, list[BoundingBox]]:
    """Detections grouped by 0-based frame, file order preserved within a frame."""
    out: dict[int, list[BoundingBox]] = {}
    for row in read_mot_rows(path):
        out.setdefault(row.frame, []).append(row.box)
    return out


def read_ground_truth(path: str | Path) -> dict[int, list[tuple[int, BoundingBox]]]:
    """(id, box) pairs per 0-based frame. GT rows flagged 0 in the confidence column are skipped."""
    out: dict[int, list[tuple[int, BoundingBox]]] = {}
    for row in read_mot_rows(path):
        if row.box.confidence == 0:
            continue
        out.setdefault(row.frame, []).append((row.id, row.box.with_confidence(1.0)))
    return out


def read_tracks(path: str | Path) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Per-identity ``(frames, tlwh boxes)`` arrays sorted by frame."""
    per_id: dict[int, list[tuple[int, np.ndarray]]] = {}
    for frame, items in read_ground_truth(path).items():
        for tid, box in items:
            per_id.setdefault(tid, []).append((frame, box.tlwh()))
    tracks = {}
    for tid in sorted(per_id):
        rows = sorted(per_id[tid], key=lambda r: r[0])
        tracks[tid] = (np.array([r[0] for r in rows], dtype=np.int64), np.array([r[1] for r in rows]))
    return tracks


def format_results(records: Iterable, clip_to: tuple[float, float] | None = None) -> str:
    """MOT result rows sorted by frame then id. ``records`` carry ``frame``, ``id`` and ``box``."""
    lines = []
    for r in sorted(records, key=lambda r: (r.frame, r.id)):
        if r.id < 1:
            raise ValueError(f"track ids must be positive, got {r.id}")
        x, y, w, h = r.box.x_left, r.box.y_top, r.box.width, r.box.height
        if clip_to is not None:
            x2, y2 = min(x + w, clip_to[0]), min(y + h, clip_to[1])
            x, y = max(x, 0.0), max(y, 0.0)
            w, h = x2 - x, y2 - y
            if w <= 0 or h <= 0:
                continue
        lines.append(f"{r.frame + 1},{r.id},{x:.2f},{y:.2f},{w:.2f},{h:.2f},{r.box.confidence:.2f},-1,-1,-1\n")
    return "".join(lines)


def write_results(path: str | Path, records: Iterable, clip_to: tuple[float, float] | None = None) -> None:
    Path(path).write_text(format_results(records, clip_to), encoding="utf-8")


def read_results(path: str | Path) -> dict[int, list[tuple[int, BoundingBox]]]:
    return read_ground_truth(path)


def write_ground_truth(path: str | Path, gt: Mapping[int, list[tuple[int, BoundingBox]]]) -> None:
    lines = []
    for frame in sorted(gt):
        for tid, b in sorted(gt[frame], key=lambda p: p[0]):
            lines.append(f"{frame + 1},{tid},{b.x_left:.4f},{b.y_top:.4f},{b.width:.4f},{b.height:.4f},1,1,1\n")
    Path(path).write_text("".join(lines), encoding="utf-8")


def write_detections(path: str | Path, dets: Mapping[int, list[BoundingBox]]) -> None:
    lines = []
    for frame in sorted(dets):
        for b in dets[frame]:
            lines.append(f"{frame + 1},-1,{b.x_left:.4f},{b.y_top:.4f},{b.width:.4f},{b.height:.4f},"
                         f"{b.confidence:.4f},-1,-1,-1\n")
    Path(path).write_text("".join(lines), encoding="utf-8")


# --------------------------------------------------------------------------- embeddings

EMB_MAGIC = b"DMSEMB01"
EMB_VERSION = 1
_EMB_HEADER = struct.Struct("<8sIIQ")
_EMB_KEY = struct.Struct("<II")


def write_embeddings(path: str | Path, embeddings: Mapping[int, np.ndarray]) -> None:
    """Binary embedding file; ``embeddings[frame]`` is ``(n_dets, dim)`` in detection order."""
    dims = {np.asarray(v).shape[-1] for v in embeddings.values() if len(v)}
    if len(dims) > 1:
        raise ValueError(f"embedding dimensions differ: {sorted(dims)}")
    dim = dims.pop() if dims else 0
    count = sum(len(v) for v in embeddings.values())
    buf = io.BytesIO()
    buf.write(_EMB_HEADER.pack(EMB_MAGIC, EMB_VERSION, dim, count))
    for frame in sorted(embeddings):
        for ordinal, vec in enumerate(np.asarray(embeddings[frame], dtype="<f4")):
            buf.write(_EMB_KEY.pack(frame + 1, ordinal))
            buf.write(vec.astype("<f4").tobytes())
    Path(path).write_bytes(buf.getvalue())


def _normalize_rows(rows: dict[tuple[int, int], np.ndarray]) -> dict[int, np.ndarray]:
    out: dict[int, list[tuple[int, np.ndarray]]] = {}
    for (frame, ordinal), vec in rows.items():
        norm = np.linalg.norm(vec)
        if norm < 1e-12:
            raise FormatError(f"frame {frame + 1} detection {ordinal}: zero-norm embedding")
        out.setdefault(frame, []).append((ordinal, vec / norm))
    result = {}
    for frame, items in out.items():
        items.sort(key=lambda p: p[0])
        if [o for o, _ in items] != list(range(len(items))):
            raise FormatError(f"frame {frame + 1}: detection ordinals are not contiguous from 0")
        result[frame] = np.stack([v for _, v in items])
    return result


def read_embeddings(path: str | Path) -> dict[int, np.ndarray]:
    """Embeddings per 0-based frame, rows in detection order, L2-normalized on load."""
    data = Path(path).read_bytes()
    if not data.startswith(EMB_MAGIC):
        return read_embeddings_csv(path)
    if len(data) < _EMB_HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, dim, count = _EMB_HEADER.unpack_from(data)
    if version != EMB_VERSION:
        raise FormatError(f"{path}: unsupported embedding format version {version}")
    rec = _EMB_KEY.size + 4 * dim
    if len(data) != _EMB_HEADER.size + rec * count:
        raise FormatError(f"{path}: size does not match {count} records of dim {dim}")
    rows: dict[tuple[int, int], np.ndarray] = {}
    for k in range(count):
        off = _EMB_HEADER.size + k * rec
        frame, ordinal = _EMB_KEY.unpack_from(data, off)
        vec = np.frombuffer(data, dtype="<f4", count=dim, offset=off + _EMB_KEY.size).astype(np.float64)
        if not np.all(np.isfinite(vec)):
            raise FormatError(f"{path}: record {k}: NaN or infinite value")
        if frame < 1:
            raise FormatError(f"{path}: record {k}: frame must be positive")
        rows[(frame - 1, ordinal)] = vec
    return _normalize_rows(rows)


def read_embeddings_csv(path: str | Path) -> dict[int, np.ndarray]:
    """Text fallback: ``frame,ordinal,v1,...,vd`` per line."""
    rows: dict[tuple[int, int], np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            v = _floats(line, lineno, path, 3)
            d = len(v) - 2
            if dim is None:
                dim = d
            elif d != dim:
                raise FormatError(f"{path}:{lineno}: embedding dimension {d} differs from earlier dimension {dim}")
            if v[0] < 1:
                raise FormatError(f"{path}:{lineno}: frame must be positive")
            rows[(int(v[0]) - 1, int(v[1]))] = np.array(v[2:])
    return _normalize_rows(rows)


# --------------------------------------------------------------------------- camera motion


class CmcTable(dict):
    """Frame -> transform from the previous frame; missing frames are the identity."""

    def get(self, frame, default=None):  # type: ignore[override]
        return super().get(frame, AffineTransform.identity() if default is None else default)

    def __missing__(self, frame):
        return AffineTransform.identity()


def read_cmc(path: str | Path) -> CmcTable:
    table = CmcTable()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            v = _floats(line, lineno, path, 7)
            if len(v) != 7:
                raise FormatError(f"{path}:{lineno}: expected 7 fields, got {len(v)}")
            try:
                t = AffineTransform(v[1], v[2], v[3], v[4], v[5], v[6])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
            table[int(v[0]) - 1] = t
    return table


def write_cmc(path: str | Path, table: Mapping[int, AffineTransform]) -> None:
    lines = [f"{f + 1},{t.a!r},{t.b!r},{t.tx!r},{t.c!r},{t.d!r},{t.ty!r}\n" for f, t in sorted(table.items())]
    Path(path).write_text("".join(lines), encoding="utf-8")


# --------------------------------------------------------------------------- filter model

MODEL_MAGIC = b"DMSTFMDL"
MODEL_VERSION = 1


def save_model(path: str | Path, model: TransFilter) -> None:
    tensors, blobs, offset = [], [], 0
    for name, shape in parameter_shapes(model.cfg).items():
        arr = np.ascontiguousarray(model.params[name], dtype="<f4")
        tensors.append({"name": name, "shape": list(shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = {
        "format_version": MODEL_VERSION,
        "feature_layout": FEATURE_LAYOUT,
        "architecture": model.cfg.to_dict(),
        "feature_stats": model.stats.to_dict(),
        "tensors": tensors,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    Path(path).write_bytes(MODEL_MAGIC + struct.pack("<I", len(head)) + head + b"".join(blobs))


def load_model(path: str | Path) -> TransFilter:
    data = Path(path).read_bytes()
    if not data.startswith(MODEL_MAGIC):
        raise FormatError(f"{path}: not a filter model file")
    (n,) = struct.unpack_from("<I", data, len(MODEL_MAGIC))
    start = len(MODEL_MAGIC) + 4
    header = json.loads(data[start:start + n].decode("utf-8"))
    if header.get("format_version") != MODEL_VERSION:
        raise FormatError(f"{path}: model format version {header.get('format_version')} is not {MODEL_VERSION}")
    if header.get("feature_layout") != FEATURE_LAYOUT:
        raise FormatError(f"{path}: feature layout {header.get('feature_layout')!r} is not supported")
    cfg = TransFilterConfig(**header["architecture"])
    stats = FeatureStats.from_dict(header["feature_stats"])
    body = data[start + n:]
    params = {}
    for t in header["tensors"]:
        count = int(np.prod(t["shape"]))
        if t["offset"] + 4 * count > len(body):
            raise FormatError(f"{path}: tensor {t['name']} runs past the end of the file")
        arr = np.frombuffer(body, dtype="<f4", count=count, offset=t["offset"])
        params[t["name"]] = arr.astype(np.float64).reshape(t["shape"])
    return TransFilter(cfg, stats, params)
