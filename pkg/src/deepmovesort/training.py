"""Training data windows, augmentation and the optimization loop for the learned filter."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .features import FeatureStats, TimedBox, fit_stats, input_features, target_features
from .geometry import BoundingBox
from .transfilter import TransFilter, TransFilterConfig


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch} (loss {loss})")
        self.epoch = epoch
        self.loss = loss


@dataclass
class TrainingWindow:
    """An input history and the ``m_max`` frames that follow its last observation.

    Target row ``k`` belongs to frame ``input_frames[-1] + k + 1``; rows whose
    frame is absent from the track are masked out and hold the last input box.
    """

    input_frames: np.ndarray     # (n,) strictly increasing
    input_boxes: np.ndarray      # (n, 4) tlwh
    target_frames: np.ndarray    # (m_max,)
    target_boxes: np.ndarray     # (m_max, 4)
    target_mask: np.ndarray      # (m_max,) bool
    sequence_id: str = ""
    track_id: int = 0

    def __post_init__(self) -> None:
        f = np.concatenate([self.input_frames, self.target_frames])
        if len(self.input_frames) == 0 or np.any(np.diff(f) <= 0):
            raise ValueError("window frames must be strictly increasing with a non-empty input")

    @property
    def input_history(self) -> list[TimedBox]:
        return [TimedBox(int(f), BoundingBox.from_tlwh(b)) for f, b in zip(self.input_frames, self.input_boxes)]

    @property
    def target_future(self) -> list[TimedBox]:
        return [TimedBox(int(f), BoundingBox.from_tlwh(b))
                for f, b, ok in zip(self.target_frames, self.target_boxes, self.target_mask) if ok]


@dataclass(frozen=True)
class AugmentationConfig:
    noise_scale: float = 0.05
    mask_probability: float = 0.2
    seed: int = 0
    # The trainer draws each window's noise scale from [0, 2 * noise_scale] and
    # uses it for both the history and the decoder's observations; a share of
    # windows stays noise-free so clean measurements learn to pass through.
    scale_jitter: bool = True
    clean_fraction: float = 0.25

    def __post_init__(self) -> None:
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be non-negative")
        if not 0.0 <= self.mask_probability < 1.0:
            raise ValueError("mask_probability must lie in [0, 1)")
        if not 0.0 <= self.clean_fraction <= 1.0:
            raise ValueError("clean_fraction must lie in [0, 1]")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-5
    warmup_epochs: int = 4
    decay_factor: float = 0.1
    decay_period: int = 4
    weight_decay: float = 1e-4
    huber_delta: float = 0.5
    batch_size: int = 64
    epochs: int = 12
    seed: int = 0
    # Draw fresh augmentations every epoch instead of one fixed draw per window.
    resample_augmentation: bool = False

    def __post_init__(self) -> None:
        if self.huber_delta <= 0:
            raise ValueError("huber_delta must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.batch_size < 1 or self.decay_period < 1 or self.warmup_epochs < 0:
            raise ValueError("batch_size and decay_period must be positive, warmup_epochs non-negative")
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ValueError("learning rate and weight decay must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


def make_windows(tracks: Mapping[int, tuple[np.ndarray, np.ndarray]], history: int, m_max: int,
                 stride: int = 1, sequence_id: str = "") -> list[TrainingWindow]:
    """Sliding windows ending at every ``stride``-th observation that has a successor."""
    if history < 1 or m_max < 1 or stride < 1:
        raise ValueError("history, m_max and stride must be positive")
    windows = []
    for tid, (frames, boxes) in tracks.items():
        frames = np.asarray(frames, dtype=np.int64)
        boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
        lookup = {int(f): i for i, f in enumerate(frames)}
        for end in range(0, len(frames) - 1, stride):
            last = int(frames[end])
            tf = np.arange(last + 1, last + 1 + m_max)
            idx = [lookup.get(int(f)) for f in tf]
            mask = np.array([i is not None for i in idx])
            if not mask.any():
                continue
            tb = np.array([boxes[i] if i is not None else boxes[end] for i in idx])
            start = max(0, end - history + 1)
            windows.append(TrainingWindow(frames[start:end + 1].astype(np.float64), boxes[start:end + 1].copy(),
                                          tf.astype(np.float64), tb, mask, sequence_id, int(tid)))
    return windows


def tracks_from_ground_truth(gt_tracks: Mapping[int, tuple[np.ndarray, np.ndarray]],
                             image_size: tuple[float, float]) -> dict[int, tuple[np.ndarray, np.ndarray]]:
    """Rescale pixel tracks to the normalized coordinates the filter works in."""
    w, h = image_size
    scale = np.array([w, h, w, h], dtype=np.float64)
    return {tid: (np.asarray(f), np.asarray(b, dtype=np.float64) / scale)
            for tid, (f, b) in gt_tracks.items() if len(f) >= 2}


def _box_noise(boxes: np.ndarray, scale: float, rng: np.random.Generator) -> np.ndarray:
    dims = boxes[:, [2, 3, 2, 3]]
    return boxes + rng.standard_normal(boxes.shape) * scale * dims


def augment(w: TrainingWindow, cfg: AugmentationConfig, rng: np.random.Generator | None = None) -> TrainingWindow:
    """Jitter the input boxes and randomly drop non-final input points. Targets are untouched."""
    if cfg.noise_scale == 0 and cfg.mask_probability == 0:
        return w
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    boxes = _box_noise(w.input_boxes, cfg.noise_scale, rng) if cfg.noise_scale > 0 else w.input_boxes.copy()
    boxes[:, 2:] = np.maximum(boxes[:, 2:], 1e-6)
    keep = rng.random(len(w.input_frames)) >= cfg.mask_probability
    keep[-1] = True
    return TrainingWindow(w.input_frames[keep].copy(), boxes[keep], w.target_frames, w.target_boxes,
                          w.target_mask, w.sequence_id, w.track_id)


def window_rng(seed: int, index: int, epoch: int | None = None) -> np.random.Generator:
    key = [seed, index] if epoch is None else [seed, index, epoch]
    return np.random.default_rng(np.random.SeedSequence(key))


def make_batch(windows: Sequence[TrainingWindow], stats: FeatureStats, history: int,
               observations: Sequence[np.ndarray] | None = None) -> dict[str, np.ndarray]:
    """Stack windows into right-aligned, zero-padded arrays.

    ``observations`` optionally replaces the target boxes fed to the decoder
    (noisy measurements of the same frames); by default the clean targets are used.
    """
    b = len(windows)
    m = len(windows[0].target_frames)
    x = np.zeros((b, history, 13))
    x_mask = np.zeros((b, history), dtype=bool)
    obs = np.zeros((b, m, 5))
    y = np.zeros((b, m, 4))
    y_mask = np.zeros((b, m), dtype=bool)
    for i, w in enumerate(windows):
        frames, boxes = w.input_frames[-history:], w.input_boxes[-history:]
        n = len(frames)
        x[i, history - n:] = input_features(frames, boxes, stats, check=False)
        x_mask[i, history - n:] = True
        last_f, last_b = frames[-1], boxes[-1]
        y[i] = target_features(last_f, last_b, w.target_frames, w.target_boxes, stats, check=False)[:, :4]
        seen = w.target_boxes if observations is None else observations[i]
        obs[i] = target_features(last_f, last_b, w.target_frames, seen, stats, check=False)
        y_mask[i] = w.target_mask
    return {"x": x, "x_mask": x_mask, "obs": obs, "y": y, "y_mask": y_mask}


def learning_rate(cfg: TrainConfig, epoch: int, step: int, steps_per_epoch: int) -> float:
    """Linear warm-up over the first ``warmup_epochs``, then step decay every ``decay_period`` epochs."""
    if epoch < cfg.warmup_epochs:
        done = epoch * steps_per_epoch + step + 1
        return cfg.learning_rate * done / (cfg.warmup_epochs * steps_per_epoch)
    return cfg.learning_rate * cfg.decay_factor ** ((epoch - cfg.warmup_epochs) // cfg.decay_period)


class AdamW:
    def __init__(self, params: dict[str, np.ndarray], weight_decay: float,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.weight_decay = weight_decay
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float) -> None:
        if lr == 0:
            return
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, p in params.items():
            g = grads[k]
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            p *= 1.0 - lr * self.weight_decay
            p -= lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def observation_noise(w: TrainingWindow, scale: float, rng: np.random.Generator) -> np.ndarray:
    """Noisy copies of the target boxes, standing in for detections fed to the decoder."""
    if scale == 0:
        return w.target_boxes.copy()
    out = _box_noise(w.target_boxes, scale, rng)
    out[:, 2:] = np.maximum(out[:, 2:], 1e-6)
    return out


def build_model(windows: Sequence[TrainingWindow], arch: TransFilterConfig, seed: int = 0,
                aug: AugmentationConfig | None = None) -> TransFilter:
    """Fresh model whose feature statistics are fitted to ``windows``.

    With ``aug`` the statistics come from augmented copies, i.e. from what the
    model sees in training. Clean synthetic tracks can have constant box sizes,
    whose zero-variance channels would otherwise amplify any noise enormously.
    """
    if aug is not None:
        windows = [augment(w, aug, window_rng(aug.seed, i)) for i, w in enumerate(windows)]
    return TransFilter(arch, fit_stats(windows), seed=seed)


@dataclass
class TrainResult:
    model: TransFilter
    loss_history: list[float] = field(default_factory=list)


def train(model: TransFilter, windows: Sequence[TrainingWindow], cfg: TrainConfig,
          aug: AugmentationConfig | None = None, log=None) -> TrainResult:
    """Optimize ``model`` in place; the history holds the mean loss of every epoch.

    The epoch loss weights each batch by its number of valid target rows, so it
    does not depend on how windows were grouped into batches.
    """
    if not windows:
        raise ValueError("training needs at least one window")
    aug = aug if aug is not None else AugmentationConfig()
    m_max = len(windows[0].target_frames)
    if m_max > model.cfg.horizon:
        raise ValueError(f"target length {m_max} exceeds the model horizon {model.cfg.horizon}")
    rng = np.random.default_rng(cfg.seed)
    opt = AdamW(model.params, cfg.weight_decay)
    steps = math.ceil(len(windows) / cfg.batch_size)
    history = []

    def prepared(epoch):
        out = []
        for i, w in enumerate(windows):
            r = window_rng(aug.seed, i, epoch if cfg.resample_augmentation else None)
            scale = aug.noise_scale
            if aug.scale_jitter:
                clean = r.random() < aug.clean_fraction
                scale = 0.0 if clean else r.uniform(0.0, 2.0 * aug.noise_scale)
            a = dataclasses.replace(aug, noise_scale=scale)
            out.append((augment(w, a, r), observation_noise(w, scale, r)))
        return out

    fixed = None if cfg.resample_augmentation else prepared(None)
    for epoch in range(cfg.epochs):
        data = fixed if fixed is not None else prepared(epoch)
        order = rng.permutation(len(windows))
        total, weight = 0.0, 0.0
        for s in range(steps):
            idx = order[s * cfg.batch_size:(s + 1) * cfg.batch_size]
            batch = make_batch([data[i][0] for i in idx], model.stats, model.cfg.history,
                               [data[i][1] for i in idx])
            loss, grads = model.loss_and_grads(batch, cfg.huber_delta)
            if not math.isfinite(loss):
                raise TrainingDiverged(epoch + 1, loss)
            n_valid = float(batch["y_mask"].sum())
            total += loss * n_valid
            weight += n_valid
            opt.step(model.params, grads, learning_rate(cfg, epoch, s, steps))
        mean = total / weight
        if not all(np.all(np.isfinite(p)) for p in model.params.values()):
            raise TrainingDiverged(epoch + 1, math.nan)
        history.append(mean)
        if log is not None:
            log(epoch + 1, mean)
    return TrainResult(model, history)


def evaluate_loss(model: TransFilter, windows: Sequence[TrainingWindow], delta: float = 0.5,
                  batch_size: int = 256) -> float:
    total, weight = 0.0, 0.0
    for s in range(0, len(windows), batch_size):
        batch = make_batch(windows[s:s + batch_size], model.stats, model.cfg.history)
        loss, _ = model.loss_and_grads(batch, delta, need_grads=False)
        n = float(batch["y_mask"].sum())
        total += loss * n
        weight += n
    return total / weight


def write_loss_log(path: str | Path, history: Iterable[float]) -> None:
    Path(path).write_text("".join(f"{i} {loss!r}\n" for i, loss in enumerate(history, start=1)), encoding="utf-8")
