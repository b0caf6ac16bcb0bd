"""Synthetic multi-object scenes with known ground truth.

Objects follow closed-form paths; detections are the ground truth plus
Gaussian noise proportional to box size. Occlusion windows suppress an
object's detections and lower the confidence of its nearest neighbour.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import formats
from .geometry import AffineTransform, BoundingBox, iou_matrix

MOTIONS = ("linear", "sinusoidal", "direction_switch", "circular")


@dataclass(frozen=True)
class ObjectSpec:
    """Closed-form path of one object; ``t`` counts frames from 0."""

    kind: str
    x0: float
    y0: float
    width: float
    height: float
    vx: float = 0.0
    vy: float = 0.0
    amplitude: float = 50.0
    period: float = 40.0
    switch_period: int = 30

    def __post_init__(self) -> None:
        if self.kind not in MOTIONS:
            raise ValueError(f"unknown motion kind {self.kind!r}")
        if self.width <= 0 or self.height <= 0 or self.period <= 0 or self.switch_period < 1:
            raise ValueError("sizes, period and switch period must be positive")

    def position(self, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Top-left corner at times ``t``."""
        t = np.asarray(t, dtype=np.float64)
        w = 2 * np.pi / self.period
        if self.kind == "linear":
            return self.x0 + self.vx * t, self.y0 + self.vy * t
        if self.kind == "sinusoidal":
            return self.x0 + self.amplitude * np.sin(w * t), self.y0 + self.vy * t
        if self.kind == "circular":
            return self.x0 + self.amplitude * np.cos(w * t), self.y0 + self.amplitude * np.sin(w * t)
        # direction_switch: velocity flips sign every switch_period frames
        p = self.switch_period
        k = np.floor(t / p)
        r = t - k * p
        # displacement after k full legs alternates between 0 and p
        base = np.where(k % 2 == 0, 0.0, p)
        s = base + np.where(k % 2 == 0, r, -r)
        return self.x0 + self.vx * s, self.y0 + self.vy * s


@dataclass(frozen=True)
class ScenarioConfig:
    n_frames: int = 200
    image_width: float = 1280.0
    image_height: float = 720.0
    n_objects: int = 4
    motions: tuple[str, ...] = ("linear", "sinusoidal", "direction_switch", "circular")
    speed: float = 4.0
    amplitude: float = 60.0
    period: float = 40.0
    switch_period: int = 30
    min_width: float = 40.0
    max_width: float = 80.0
    aspect: float = 2.0
    occlusions: tuple[tuple[int, int, int], ...] = ()  # (object index, start frame, duration)
    noise_scale: float = 0.0
    confidence_high: float = 0.95
    confidence_low: float = 0.4
    confidence_jitter: float = 0.0
    overlap_iou: float = 0.2
    embedding_dim: int = 16
    embedding_noise: float = 0.05
    camera_shift_std: float = 0.0
    shuffle_detections: bool = True
    objects: tuple[ObjectSpec, ...] = ()  # explicit objects override the random layout
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_frames < 1 or self.n_objects < 0:
            raise ValueError("n_frames must be positive and n_objects non-negative")
        if any(m not in MOTIONS for m in self.motions) or not self.motions:
            raise ValueError(f"motions must be drawn from {MOTIONS}")
        n_obj = len(self.objects) if self.objects else self.n_objects
        for obj, start, dur in self.occlusions:
            if not (0 <= obj < n_obj and 0 <= start and dur >= 1 and start + dur <= self.n_frames):
                raise ValueError(f"occlusion window {(obj, start, dur)} lies outside the scenario")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be non-negative")

    @property
    def image_size(self) -> tuple[float, float]:
        return self.image_width, self.image_height

    def to_dict(self) -> dict:
        d = asdict(self)
        d["objects"] = [asdict(o) for o in self.objects]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise KeyError(f"unknown scenario keys: {sorted(unknown)}")
        if "motions" in d:
            d["motions"] = tuple(d["motions"])
        if "occlusions" in d:
            d["occlusions"] = tuple(tuple(int(v) for v in o) for o in d["occlusions"])
        if "objects" in d:
            d["objects"] = tuple(ObjectSpec(**o) for o in d["objects"])
        return cls(**d)


@dataclass
class SyntheticSequence:
    config: ScenarioConfig
    gt: dict[int, list[tuple[int, BoundingBox]]]
    detections: dict[int, list[BoundingBox]]
    embeddings: dict[int, np.ndarray]
    cmc: dict[int, AffineTransform] | None
    objects: tuple[ObjectSpec, ...] = field(default=())

    def gt_tracks(self) -> dict[int, tuple[np.ndarray, np.ndarray]]:
        per: dict[int, list[tuple[int, np.ndarray]]] = {}
        for f in sorted(self.gt):
            for tid, b in self.gt[f]:
                per.setdefault(tid, []).append((f, b.tlwh()))
        return {tid: (np.array([r[0] for r in rows]), np.array([r[1] for r in rows]))
                for tid, rows in sorted(per.items())}

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        formats.write_ground_truth(out / "gt.txt", self.gt)
        formats.write_detections(out / "det.txt", self.detections)
        formats.write_embeddings(out / "embeddings.bin", self.embeddings)
        if self.cmc is not None:
            formats.write_cmc(out / "cmc.txt", self.cmc)
        info = {"n_frames": self.config.n_frames, "image_width": self.config.image_width,
                "image_height": self.config.image_height, "scenario": self.config.to_dict()}
        (out / "seqinfo.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def random_objects(cfg: ScenarioConfig, rng: np.random.Generator) -> tuple[ObjectSpec, ...]:
    objs = []
    for k in range(cfg.n_objects):
        kind = cfg.motions[k % len(cfg.motions)]
        w = float(rng.uniform(cfg.min_width, cfg.max_width))
        h = w * cfg.aspect
        angle = rng.uniform(0, 2 * np.pi)
        vx, vy = cfg.speed * np.cos(angle), cfg.speed * np.sin(angle)
        margin = cfg.amplitude + w
        x0 = float(rng.uniform(margin, max(margin + 1, cfg.image_width - margin - w)))
        y0 = float(rng.uniform(h * 0.25, max(h * 0.25 + 1, cfg.image_height - 1.25 * h)))
        if kind == "sinusoidal":
            vx, vy = 0.0, float(rng.choice([-1.0, 1.0]) * rng.uniform(0.2, 0.6) * cfg.speed)
        objs.append(ObjectSpec(kind, x0, y0, w, h, float(vx), float(vy), cfg.amplitude, cfg.period,
                               cfg.switch_period))
    return tuple(objs)


def generate(cfg: ScenarioConfig) -> SyntheticSequence:
    rng = np.random.default_rng(cfg.seed)
    objects = cfg.objects if cfg.objects else random_objects(cfg, rng)
    n = len(objects)
    t = np.arange(cfg.n_frames, dtype=np.float64)
    world = np.zeros((n, cfg.n_frames, 4))
    for k, o in enumerate(objects):
        x, y = o.position(t)
        world[k] = np.stack([x, y, np.full_like(t, o.width), np.full_like(t, o.height)], axis=1)

    cmc = None
    offset = np.zeros((cfg.n_frames, 2))
    if cfg.camera_shift_std > 0:
        shifts = rng.normal(0.0, cfg.camera_shift_std, size=(cfg.n_frames, 2))
        shifts[0] = 0.0
        offset = np.cumsum(shifts, axis=0)
        cmc = {f: AffineTransform.translation(float(shifts[f, 0]), float(shifts[f, 1]))
               for f in range(1, cfg.n_frames)}
    boxes = world.copy()
    boxes[:, :, 0] += offset[None, :, 0]
    boxes[:, :, 1] += offset[None, :, 1]

    hidden = np.zeros((n, cfg.n_frames), dtype=bool)
    for obj, start, dur in cfg.occlusions:
        hidden[obj, start:start + dur] = True

    base_emb = rng.standard_normal((n, cfg.embedding_dim))
    base_emb /= np.linalg.norm(base_emb, axis=1, keepdims=True)

    gt: dict[int, list[tuple[int, BoundingBox]]] = {}
    dets: dict[int, list[BoundingBox]] = {}
    embs: dict[int, np.ndarray] = {}
    for f in range(cfg.n_frames):
        frame_boxes = boxes[:, f]
        gt[f] = [(k + 1, BoundingBox.from_tlwh(frame_boxes[k])) for k in range(n)]
        conf = np.full(n, cfg.confidence_high)
        if n > 1:
            ious = iou_matrix(frame_boxes, frame_boxes)
            np.fill_diagonal(ious, 0.0)
            conf[ious.max(axis=1) >= cfg.overlap_iou] = cfg.confidence_low
            centers = frame_boxes[:, :2] + frame_boxes[:, 2:] / 2
            for k in np.nonzero(hidden[:, f])[0]:
                dist = np.linalg.norm(centers - centers[k], axis=1)
                dist[k] = np.inf
                conf[int(np.argmin(dist))] = cfg.confidence_low
        visible = [k for k in range(n) if not hidden[k, f]]
        noisy = frame_boxes[visible] + (rng.standard_normal((len(visible), 4)) * cfg.noise_scale
                                        * frame_boxes[visible][:, [2, 3, 2, 3]])
        noisy[:, 2:] = np.maximum(noisy[:, 2:], 1.0)
        c = conf[visible]
        if cfg.confidence_jitter > 0:
            c = c + rng.normal(0.0, cfg.confidence_jitter, size=len(visible))
        c = np.clip(c, 0.11, 1.0)
        e = base_emb[visible] + cfg.embedding_noise * rng.standard_normal((len(visible), cfg.embedding_dim))
        e /= np.linalg.norm(e, axis=1, keepdims=True)
        order = rng.permutation(len(visible)) if cfg.shuffle_detections else np.arange(len(visible))
        dets[f] = [BoundingBox.from_tlwh(noisy[i], float(c[i])) for i in order]
        embs[f] = e[order].reshape(len(visible), cfg.embedding_dim)
    return SyntheticSequence(cfg, gt, dets, embs, cmc, tuple(objects))


def load_scenario(path: str | Path) -> ScenarioConfig:
    return ScenarioConfig.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def crossing_scenario(seed: int, n_frames: int = 160, n_pairs: int = 2, noise_scale: float = 0.02,
                      occlusion: int = 10, image_size: tuple[float, float] = (1280.0, 720.0)) -> ScenarioConfig:
    """Pairs of objects whose paths cross, the oscillating one hidden while they overlap.

    In each lane one object swings left and right (sinusoidal) while another
    walks straight through it. The oscillating object loses its detections for
    ``occlusion`` frames centred on the first strong overlap, so identity has to
    survive a gap during which a constant-velocity guess drifts off.
    """
    rng = np.random.default_rng(seed)
    w_img, h_img = image_size
    lane_h = h_img / n_pairs
    objs, occl = [], []
    t = np.arange(n_frames, dtype=np.float64)
    for p in range(n_pairs):
        w = float(rng.uniform(40, 60))
        h = 2 * w
        y = p * lane_h + (lane_h - h) / 2
        xc = w_img / 2 + float(rng.uniform(-150, 150))
        swing = ObjectSpec("sinusoidal", xc, y, w, h, amplitude=float(rng.uniform(100, 160)),
                           period=float(rng.uniform(50, 80)))
        speed = float(rng.uniform(2.5, 4.0))
        direction = 1.0 if p % 2 == 0 else -1.0
        start = xc - direction * speed * n_frames * 0.45
        walk = ObjectSpec("linear", start, y + float(rng.uniform(-6, 6)), w, h, direction * speed, 0.0)
        xs, _ = swing.position(t)
        xw, _ = walk.position(t)
        overlap = np.abs(xs - xw) < 0.5 * w
        lo = occlusion + 5
        hits = np.nonzero(overlap[lo:n_frames - occlusion - 5])[0]
        k = 2 * p
        objs += [swing, walk]
        if len(hits):
            centre = int(hits[0]) + lo
            occl.append((k, centre - occlusion // 2, occlusion))
    return ScenarioConfig(n_frames=n_frames, image_width=w_img, image_height=h_img, n_objects=len(objs),
                          objects=tuple(objs), occlusions=tuple(occl), noise_scale=noise_scale, seed=seed)


def nonlinear_benchmark(seed: int, n_train: int = 20, n_test: int = 5, n_frames: int = 120,
                        n_objects: int = 4) -> tuple[list[ScenarioConfig], list[ScenarioConfig]]:
    """Train and held-out scenarios of sinusoidal and direction-switching objects.

    Motion parameters vary per sequence so the held-out set is not a copy of
    the training set.
    """
    rng = np.random.default_rng(seed)
    configs = []
    for k in range(n_train + n_test):
        configs.append(ScenarioConfig(
            n_frames=n_frames, n_objects=n_objects, motions=("sinusoidal", "direction_switch"),
            speed=float(rng.uniform(2.0, 6.0)), amplitude=float(rng.uniform(40.0, 100.0)),
            period=float(rng.uniform(30.0, 60.0)), switch_period=int(rng.integers(15, 40)),
            seed=int(rng.integers(0, 2**31 - 1))))
    return configs[:n_train], configs[n_train:]
