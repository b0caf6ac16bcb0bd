"""Track lifecycle and the three-cascade association loop."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .association import (AssociationWeights, DTIoUParams, appearance_cost_matrix, atcm_cost_matrix,
                          dtiou_cost_matrix, fuse, hpc_cost_matrix, solve, update_track_embedding)
from .buffer import MeasurementBuffer
from .features import TimedBox
from .geometry import AffineTransform, BoundingBox, iou_matrix
from .kalman import ConfidenceKalman, KalmanBoxFilter, KalmanState
from .transfilter import EncoderContext, TransFilter

MIN_DETECTION_CONFIDENCE = 0.1


@dataclass
class CascadeConfig:
    gate: DTIoUParams
    weights: AssociationWeights


@dataclass
class TrackerConfig:
    detection_confidence_threshold: float = 0.6
    track_max_time_lost: int = 30
    track_init_time: int = 3
    track_init_confidence: float = 0.7
    duplicate_iou_threshold: float = 1.0
    apply_noise_filtering: bool = False
    use_cmc: bool = False
    ha: CascadeConfig = field(default_factory=lambda: CascadeConfig(
        DTIoUParams(0.5, 0.25, 0.2, 0.0),
        AssociationWeights(dtiou=1.0, hpc=2.0, hpc_height=1.0, hpc_y=1.0, atcm=1.5, appearance=2.0)))
    la: CascadeConfig = field(default_factory=lambda: CascadeConfig(
        DTIoUParams.fixed(0.5),
        AssociationWeights(dtiou=1.0, hpc=2.0, hpc_height=1.0, hpc_y=1.0, atcm=1.0)))
    na: CascadeConfig = field(default_factory=lambda: CascadeConfig(
        DTIoUParams.fixed(0.25),
        AssociationWeights(dtiou=1.0, hpc=2.0, hpc_height=1.0, hpc_y=1.0)))
    use_low_cascade: bool = True
    use_new_cascade: bool = True
    buffer_max_age: int = 30
    buffer_min_length: int = 5
    buffer_policy: str = "deepmovesort"
    ema_alpha: float = 0.9
    sigma_conf: float = 0.2
    image_width: float = 1920.0
    image_height: float = 1080.0

    def __post_init__(self) -> None:
        for name in ("detection_confidence_threshold", "track_init_confidence"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if not 0.0 <= self.duplicate_iou_threshold <= 1.0:
            raise ValueError("duplicate_iou_threshold must lie in [0, 1]")
        if self.track_max_time_lost < 1 or self.track_init_time < 1:
            raise ValueError("track times must be at least 1")

    @property
    def image_size(self) -> tuple[float, float]:
        return (self.image_width, self.image_height)


# Config-file keys. Values: (attribute path, parser).
def _bool(v: str) -> bool:
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


CONFIG_KEYS: dict[str, tuple[tuple[str, ...], type]] = {
    "detection_confidence_threshold": (("detection_confidence_threshold",), float),
    "track_max_time_lost": (("track_max_time_lost",), int),
    "track_init_time": (("track_init_time",), int),
    "track_init_confidence": (("track_init_confidence",), float),
    "duplicate_track_iou_threshold": (("duplicate_iou_threshold",), float),
    "apply_noise_filtering": (("apply_noise_filtering",), _bool),
    "use_cmc": (("use_cmc",), _bool),
    "ha.dtiou.threshold_upper": (("ha", "gate", "upper"), float),
    "ha.dtiou.threshold_lower": (("ha", "gate", "lower"), float),
    "ha.dtiou.threshold_decay": (("ha", "gate", "decay"), float),
    "ha.dtiou.expansion_rate": (("ha", "gate", "e_rate"), float),
    "ha.dtiou.fuse_detection_score": (("ha", "weights", "fuse_detection_score"), _bool),
    "ha.dtiou.weight": (("ha", "weights", "dtiou"), float),
    "ha.reid.weight": (("ha", "weights", "appearance"), float),
    "ha.atcm.weight": (("ha", "weights", "atcm"), float),
    "ha.hpc.weight": (("ha", "weights", "hpc"), float),
    "ha.hpc.height_weight": (("ha", "weights", "hpc_height"), float),
    "ha.hpc.vertical_position_weight": (("ha", "weights", "hpc_y"), float),
    "la.iou.threshold": (("la", "gate", "upper|lower"), float),
    "la.iou.expansion_rate": (("la", "gate", "e_rate"), float),
    "la.iou.fuse_detection_score": (("la", "weights", "fuse_detection_score"), _bool),
    "la.iou.weight": (("la", "weights", "dtiou"), float),
    "la.atcm.weight": (("la", "weights", "atcm"), float),
    "la.hpc.weight": (("la", "weights", "hpc"), float),
    "la.hpc.height_weight": (("la", "weights", "hpc_height"), float),
    "la.hpc.vertical_position_weight": (("la", "weights", "hpc_y"), float),
    "na.iou.threshold": (("na", "gate", "upper|lower"), float),
    "na.iou.expansion_rate": (("na", "gate", "e_rate"), float),
    "na.iou.fuse_detection_score": (("na", "weights", "fuse_detection_score"), _bool),
    "na.iou.weight": (("na", "weights", "dtiou"), float),
    "na.hpc.weight": (("na", "weights", "hpc"), float),
    "na.hpc.height_weight": (("na", "weights", "hpc_height"), float),
    "na.hpc.vertical_position_weight": (("na", "weights", "hpc_y"), float),
    "cascade.low.enabled": (("use_low_cascade",), _bool),
    "cascade.new.enabled": (("use_new_cascade",), _bool),
    "buffer.max_age": (("buffer_max_age",), int),
    "buffer.min_length": (("buffer_min_length",), int),
    "buffer.policy": (("buffer_policy",), str),
    "appearance.ema_alpha": (("ema_alpha",), float),
    "atcm.sigma_conf": (("sigma_conf",), float),
    "image.width": (("image_width",), float),
    "image.height": (("image_height",), float),
}


def _get(cfg: TrackerConfig, path: tuple[str, ...]):
    obj = cfg
    for part in path:
        obj = getattr(obj, part.split("|")[0])
    return obj


def config_from_mapping(values: Mapping[str, str], base: TrackerConfig | None = None) -> TrackerConfig:
    """Apply string key/values onto ``base`` (default config). Unknown keys are errors."""
    cfg = dataclasses.replace(base) if base is not None else TrackerConfig()
    cascades = {k: dataclasses.asdict(getattr(cfg, k)) for k in ("ha", "la", "na")}
    top = {f.name: getattr(cfg, f.name) for f in dataclasses.fields(cfg) if f.name not in cascades}
    for key, raw in values.items():
        if key not in CONFIG_KEYS:
            raise KeyError(f"unknown config key {key!r}")
        path, parse = CONFIG_KEYS[key]
        value = parse(raw) if isinstance(raw, str) else raw
        if len(path) == 1:
            top[path[0]] = value
        else:
            for attr in path[2].split("|"):
                cascades[path[0]][path[1]][attr] = value
    built = {k: CascadeConfig(DTIoUParams(**v["gate"]), AssociationWeights(**v["weights"]))
             for k, v in cascades.items()}
    return TrackerConfig(**top, **built)


def parse_config_text(text: str, base: TrackerConfig | None = None) -> TrackerConfig:
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in values:
            raise ValueError(f"line {lineno}: duplicate key {key!r}")
        values[key] = value
    try:
        return config_from_mapping(values, base)
    except KeyError as exc:
        raise ValueError(str(exc.args[0])) from None


def config_to_text(cfg: TrackerConfig) -> str:
    lines = []
    for key, (path, parse) in CONFIG_KEYS.items():
        value = _get(cfg, path)
        if parse is _bool:
            value = "yes" if value else "no"
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"


def _preset(det_thr, max_lost, dup, filt, cmc, ha_gate, ha_fuse, la_thr, la_e, la_fuse, na_thr, na_e,
            na_fuse, ha_w, la_w, na_w) -> TrackerConfig:
    ha_dt, ha_reid, ha_atcm, ha_hpc, ha_h, ha_y = ha_w
    la_iou, la_atcm, la_hpc, la_h, la_y = la_w
    na_iou, na_hpc, na_h, na_y = na_w
    return TrackerConfig(
        detection_confidence_threshold=det_thr, track_max_time_lost=max_lost, track_init_time=3,
        track_init_confidence=0.7, duplicate_iou_threshold=dup, apply_noise_filtering=filt, use_cmc=cmc,
        ha=CascadeConfig(DTIoUParams(*ha_gate), AssociationWeights(ha_dt, ha_hpc, ha_h, ha_y, ha_atcm, ha_reid, ha_fuse)),
        la=CascadeConfig(DTIoUParams.fixed(la_thr, la_e), AssociationWeights(la_iou, la_hpc, la_h, la_y, la_atcm, 0.0, la_fuse)),
        na=CascadeConfig(DTIoUParams.fixed(na_thr, na_e), AssociationWeights(na_iou, na_hpc, na_h, na_y, 0.0, 0.0, na_fuse)),
    )


PRESETS = {
    "dancetrack": lambda: _preset(0.6, 30, 1.0, False, False, (0.5, 0.25, 0.2, 0.0), False, 0.5, 0.0, False,
                                  0.25, 0.0, False, (1.0, 2.0, 1.5, 2.0, 1.0, 1.0), (1.0, 1.0, 2.0, 1.0, 1.0),
                                  (1.0, 2.0, 1.0, 1.0)),
    "sportsmot": lambda: _preset(0.6, 60, 1.0, False, False, (0.2, 0.05, 0.05, 0.7), False, 0.5, 0.35, False,
                                 0.15, 0.7, False, (1.0, 2.0, 0.5, 1.0, 1.0, 0.5), (1.0, 1.0, 1.0, 1.0, 0.5),
                                 (1.0, 1.0, 1.0, 1.0)),
    "mot17": lambda: _preset(0.6, 30, 0.7, True, True, (0.4, 0.2, 0.1, 0.0), True, 0.5, 0.0, True,
                             0.3, 0.0, True, (0.2, 0.8, 0.0, 1.0, 1.0, 0.0), (0.2, 0.0, 0.2, 1.0, 0.0),
                             (0.2, 0.2, 1.0, 0.0)),
    "mot20": lambda: _preset(0.6, 30, 1.0, False, False, (0.4, 0.3, 0.1, 0.0), False, 0.5, 0.0, False,
                             0.3, 0.0, False, (0.2, 0.8, 0.2, 0.2, 1.0, 1.0), (0.2, 0.2, 0.1, 1.0, 1.0),
                             (0.2, 0.2, 1.0, 1.0)),
}
PRESETS["soccernet"] = PRESETS["sportsmot"]


# --------------------------------------------------------------------------- motion models


class KalmanMotion:
    """Per-track Kalman state advanced once per frame."""

    def __init__(self, kf: KalmanBoxFilter, box: BoundingBox):
        self.kf = kf
        self.state: KalmanState = kf.initiate(box)

    def apply_cmc(self, t: AffineTransform) -> None:
        self.state = self.kf.apply_affine(self.state, t)

    def predict(self, frame: int, buffer: MeasurementBuffer) -> BoundingBox:
        self.state = self.kf.predict(self.state)
        return self.state.box()

    def correct(self, frame: int, det: BoundingBox) -> BoundingBox:
        self.state = self.kf.update(self.state, det)
        return self.state.box(det.confidence)


class TransFilterMotion:
    """Learned filter driven by the track's buffer; the encoder reruns only when the buffer changed."""

    def __init__(self, model: TransFilter, image_size: tuple[float, float]):
        self.model = model
        self.scale = np.array([image_size[0], image_size[1], image_size[0], image_size[1]], dtype=np.float64)
        self.context: EncoderContext | None = None

    def apply_cmc(self, t: AffineTransform) -> None:
        pass  # the buffer itself is aligned by the track

    def _context(self, buffer: MeasurementBuffer) -> EncoderContext:
        if self.context is None or buffer.dirty:
            frames, boxes = buffer.arrays()
            self.context = self.model.encode_history(frames, boxes / self.scale)
            buffer.mark_clean()
        return self.context

    def predict(self, frame: int, buffer: MeasurementBuffer) -> BoundingBox:
        ctx = self._context(buffer)
        steps = int(round(frame - ctx.last_frame))
        steps = min(max(steps, 1), self.model.cfg.horizon)
        box = self.model.predict_from_context(ctx, steps)[-1] * self.scale
        return BoundingBox.from_tlwh(box)

    def correct(self, frame: int, det: BoundingBox) -> BoundingBox:
        ctx = self.context
        out = self.model.filter_array(ctx, frame, det.tlwh() / self.scale) * self.scale
        return BoundingBox.from_tlwh(out, det.confidence)


# --------------------------------------------------------------------------- tracks


@dataclass
class Track:
    id: int
    status: str
    buffer: MeasurementBuffer
    motion: KalmanMotion | TransFilterMotion
    confidence_model: ConfidenceKalman
    embedding: np.ndarray | None
    birth_frame: int
    box: BoundingBox
    frames_since_seen: int = 0
    consecutive_hits: int = 1
    predicted_box: BoundingBox | None = None
    predicted_conf: float = 0.0


@dataclass(frozen=True)
class TrackRecord:
    frame: int
    id: int
    box: BoundingBox

    @property
    def confidence(self) -> float:
        return self.box.confidence


@dataclass
class StepOutput:
    records: list[TrackRecord]
    matches: list[tuple[int, int]]  # (track id, detection index in the input list)


class Tracker:
    def __init__(self, config: TrackerConfig | None = None, model: TransFilter | None = None):
        self.cfg = config if config is not None else TrackerConfig()
        self.model = model
        self.kf = KalmanBoxFilter()
        self.tracks: list[Track] = []
        self.next_id = 1
        self.last_frame: int | None = None

    # -- helpers

    def _norm(self, boxes: np.ndarray) -> np.ndarray:
        w, h = self.cfg.image_size
        return np.asarray(boxes, dtype=np.float64).reshape(-1, 4) / np.array([w, h, w, h])

    def _new_motion(self, box: BoundingBox):
        if self.model is None:
            return KalmanMotion(self.kf, box)
        return TransFilterMotion(self.model, self.cfg.image_size)

    def _cascade(self, tracks: list[Track], det_idx: list[int], dets: Sequence[BoundingBox],
                 embeddings: np.ndarray | None, cascade: CascadeConfig, use_appearance: bool):
        if not tracks or not det_idx:
            return [], list(range(len(tracks))), list(range(len(det_idx)))
        w = cascade.weights
        pred = np.array([t.predicted_box.tlwh() for t in tracks])
        det = np.array([dets[j].tlwh() for j in det_idx])
        conf = np.array([dets[j].confidence for j in det_idx])
        t_occ = np.array([t.frames_since_seen for t in tracks], dtype=np.float64)
        costs = {"dtiou": dtiou_cost_matrix(pred, det, conf, t_occ, cascade.gate, w.fuse_detection_score)}
        if w.hpc > 0:
            costs["hpc"] = hpc_cost_matrix(self._norm(pred), self._norm(det), w.hpc_height, w.hpc_y)
        if w.atcm > 0:
            costs["atcm"] = atcm_cost_matrix(np.array([t.predicted_conf for t in tracks]), conf)
        if use_appearance and w.appearance > 0 and embeddings is not None:
            costs["appearance"] = appearance_cost_matrix([t.embedding for t in tracks], embeddings[det_idx])
        result = solve(fuse(costs, w))
        return result.matches, result.unmatched_tracks, result.unmatched_detections

    # -- main loop

    def step(self, frame: int, detections: Sequence[BoundingBox],
             embeddings: np.ndarray | None = None, cmc: AffineTransform | None = None) -> StepOutput:
        if self.last_frame is not None and frame <= self.last_frame:
            raise ValueError(f"frame {frame} does not advance past {self.last_frame}")
        if embeddings is not None:
            embeddings = np.asarray(embeddings, dtype=np.float64)
            if len(embeddings) != len(detections):
                raise ValueError(f"{len(embeddings)} embeddings for {len(detections)} detections")
        self.last_frame = frame
        cfg = self.cfg

        if cfg.use_cmc and cmc is not None and not cmc.is_identity():
            for t in self.tracks:
                t.buffer.align(cmc)
                t.motion.apply_cmc(cmc)

        kept = [i for i, d in enumerate(detections) if d.confidence >= MIN_DETECTION_CONFIDENCE]
        high = [i for i in kept if detections[i].confidence >= cfg.detection_confidence_threshold]
        low = [i for i in kept if detections[i].confidence < cfg.detection_confidence_threshold]

        for t in self.tracks:
            t.predicted_box = t.motion.predict(frame, t.buffer)
            t.predicted_conf = t.confidence_model.predict()

        matched: list[tuple[Track, int]] = []
        # high-confidence cascade: every track
        pool = list(self.tracks)
        m, um_t, um_d = self._cascade(pool, high, detections, embeddings, cfg.ha, True)
        matched += [(pool[i], high[j]) for i, j in m]
        rest_tracks = [pool[i] for i in um_t]
        rest_high = [high[j] for j in um_d]

        if cfg.use_low_cascade:
            old = [t for t in rest_tracks if t.status in ("active", "lost")]
            m, um_t, _ = self._cascade(old, low, detections, None, cfg.la, False)
            matched += [(old[i], low[j]) for i, j in m]
            done = {id(old[i]) for i, _ in m}
            rest_tracks = [t for t in rest_tracks if id(t) not in done]

        if cfg.use_new_cascade:
            fresh = [t for t in rest_tracks if t.status == "new"]
            m, _, um_d = self._cascade(fresh, rest_high, detections, None, cfg.na, False)
            matched += [(fresh[i], rest_high[j]) for i, j in m]
            done = {id(fresh[i]) for i, _ in m}
            rest_tracks = [t for t in rest_tracks if id(t) not in done]
            rest_high = [rest_high[j] for j in um_d]

        for t, j in matched:
            self._update_matched(t, frame, detections[j], None if embeddings is None else embeddings[j])

        deleted: set[int] = set()
        for t in rest_tracks:
            t.buffer.update(None, frame)
            t.frames_since_seen += 1
            t.consecutive_hits = 0
            t.box = t.predicted_box
            if t.status == "new":
                deleted.add(t.id)
            elif t.status == "active":
                t.status = "lost"
            if t.status == "lost" and t.frames_since_seen > cfg.track_max_time_lost:
                deleted.add(t.id)

        for j in rest_high:
            if detections[j].confidence >= cfg.track_init_confidence:
                self._spawn(frame, detections[j], None if embeddings is None else embeddings[j])

        self.tracks = [t for t in self.tracks if t.id not in deleted]
        self._remove_duplicates()

        records = [TrackRecord(frame, t.id, t.box) for t in self.tracks
                   if t.status == "active" and t.frames_since_seen == 0]
        records.sort(key=lambda r: r.id)
        return StepOutput(records, sorted((t.id, j) for t, j in matched))

    def _update_matched(self, t: Track, frame: int, det: BoundingBox, emb) -> None:
        filtered = t.motion.correct(frame, det)
        stored = filtered if self.cfg.apply_noise_filtering else det
        t.buffer.update(TimedBox(frame, stored), frame)
        t.confidence_model.update(det.confidence)
        if emb is not None:
            t.embedding = update_track_embedding(t.embedding, emb, self.cfg.ema_alpha)
        t.box = stored.with_confidence(det.confidence)
        t.frames_since_seen = 0
        t.consecutive_hits += 1
        if t.status == "lost":
            t.status = "active"
        elif t.status == "new" and t.consecutive_hits >= self.cfg.track_init_time:
            t.status = "active"

    def _spawn(self, frame: int, det: BoundingBox, emb) -> None:
        buf = MeasurementBuffer(self.cfg.buffer_max_age, self.cfg.buffer_policy, self.cfg.buffer_min_length)
        buf.update(TimedBox(frame, det), frame)
        track = Track(
            id=self.next_id,
            status="active" if self.cfg.track_init_time <= 1 else "new",
            buffer=buf,
            motion=self._new_motion(det),
            confidence_model=ConfidenceKalman.initiate(det.confidence, self.cfg.sigma_conf),
            embedding=None if emb is None else update_track_embedding(None, emb),
            birth_frame=frame,
            box=det,
        )
        self.next_id += 1
        self.tracks.append(track)

    def _remove_duplicates(self) -> None:
        old = [t for t in self.tracks if t.status in ("active", "lost")]
        if len(old) < 2:
            return
        ious = iou_matrix(np.array([t.box.tlwh() for t in old]), np.array([t.box.tlwh() for t in old]))
        drop: set[int] = set()
        for i in range(len(old)):
            for j in range(i + 1, len(old)):
                if ious[i, j] >= self.cfg.duplicate_iou_threshold:
                    a, b = old[i], old[j]
                    younger = a if (a.birth_frame, a.id) > (b.birth_frame, b.id) else b
                    drop.add(younger.id)
        if drop:
            self.tracks = [t for t in self.tracks if t.id not in drop]


def run_sequence(config: TrackerConfig, detections: Mapping[int, Sequence[BoundingBox]],
                 embeddings: Mapping[int, np.ndarray] | None = None,
                 cmc: Mapping[int, AffineTransform] | None = None,
                 model: TransFilter | None = None, n_frames: int | None = None) -> list[TrackRecord]:
    """Run the tracker over frames ``0..n_frames-1`` and collect emitted records."""
    if n_frames is None:
        n_frames = (max(detections) + 1) if detections else 0
    if embeddings is not None:
        for f, dets in detections.items():
            if len(dets) and (f not in embeddings or len(embeddings[f]) != len(dets)):
                raise ValueError(f"frame {f}: embeddings do not align with detections")
    tracker = Tracker(config, model)
    records: list[TrackRecord] = []
    for f in range(n_frames):
        dets = list(detections.get(f, ()))
        emb = None
        if embeddings is not None:
            emb = embeddings.get(f, np.zeros((0, 1)))
            if not len(dets):
                emb = np.zeros((0, emb.shape[-1] if np.ndim(emb) == 2 else 1))
        out = tracker.step(f, dets, emb, None if cmc is None else cmc.get(f))
        records.extend(out.records)
    return records


def records_by_frame(records: Iterable[TrackRecord]) -> dict[int, list[TrackRecord]]:
    out: dict[int, list[TrackRecord]] = {}
    for r in records:
        out.setdefault(r.frame, []).append(r)
    return out
