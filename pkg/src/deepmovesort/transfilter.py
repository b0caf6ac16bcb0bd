"""Transformer-based end-to-end motion filter.

The encoder consumes a track's buffered history and predicts every future step
in one pass from the time-pooled encoder output. A single decoder block with
cross-attention only (no self-attention, no positional code on its input)
corrects one observation at a time against the retained encoder output.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from . import nn
from .features import (INPUT_DIM, TARGET_DIM, FeatureStats, TimedBox, as_arrays,
                       input_features, target_features)
from .geometry import BoundingBox

MIN_SIZE = 1e-6


@dataclass(frozen=True)
class TransFilterConfig:
    d_model: int = 32
    n_heads: int = 4
    n_layers: int = 2
    history: int = 10
    horizon: int = 30
    ff_dim: int = 64

    def __post_init__(self) -> None:
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if min(self.d_model, self.n_heads, self.n_layers, self.history, self.horizon, self.ff_dim) < 1:
            raise ValueError("all architecture sizes must be positive")

    @classmethod
    def reference(cls) -> "TransFilterConfig":
        """Full-size configuration: width 256, six encoder layers."""
        return cls(d_model=256, n_heads=4, n_layers=6, history=10, horizon=30, ff_dim=1024)

    def to_dict(self) -> dict:
        return asdict(self)


def positional_encoding(n: int, d_model: int) -> np.ndarray:
    """Sinusoidal encoding of positions 0..n-1."""
    pos = np.arange(n, dtype=np.float64)[:, None]
    i = np.arange(d_model)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d_model)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


def rpe_encoding(n: int, d_model: int) -> np.ndarray:
    """Positional code counted backwards: the final row always gets position 0."""
    if n < 1:
        raise ValueError("sequence length must be at least 1")
    return positional_encoding(n, d_model)[::-1].copy()


def parameter_shapes(cfg: TransFilterConfig) -> dict[str, tuple[int, ...]]:
    d, f = cfg.d_model, cfg.ff_dim
    shapes: dict[str, tuple[int, ...]] = {}

    def lin(name, i, o):
        shapes[name + ".w"] = (i, o)
        shapes[name + ".b"] = (o,)

    def ln(name):
        shapes[name + ".g"] = (d,)
        shapes[name + ".b"] = (d,)

    def block(name, i):
        lin(name + ".fc", i, d)
        ln(name + ".ln")

    def attn_ff(name):
        for p in ("q", "k", "v", "o"):
            lin(f"{name}.attn.{p}", d, d)
        ln(name + ".ln1")
        lin(name + ".ff1", d, f)
        lin(name + ".ff2", f, d)
        ln(name + ".ln2")

    block("embed.0", INPUT_DIM)
    block("embed.1", d)
    for layer in range(cfg.n_layers):
        attn_ff(f"encoder.{layer}")
    block("head.0", d)
    lin("head.out", d, cfg.horizon * 4)
    block("dec_embed.0", TARGET_DIM)
    block("dec_embed.1", d)
    attn_ff("decoder")
    lin("decoder.out", d, 4)
    return shapes


def init_parameters(cfg: TransFilterConfig, seed: int = 0) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in parameter_shapes(cfg).items():
        if name.endswith(".w"):
            limit = np.sqrt(6.0 / (shape[0] + shape[1]))
            if name in ("head.out.w", "decoder.out.w"):
                limit *= 0.1
            params[name] = rng.uniform(-limit, limit, size=shape)
        elif name.endswith(".g"):
            params[name] = np.ones(shape)
        else:
            params[name] = np.zeros(shape)
    return params


@dataclass
class EncoderContext:
    """Encoder output retained for a track, plus the head output computed from it."""

    memory: np.ndarray          # (1, T, d_model)
    last_frame: float
    last_box: np.ndarray        # normalized tlwh of the newest buffered box
    predictions: np.ndarray     # (horizon, 4) standardized offsets


class TransFilter:
    def __init__(self, cfg: TransFilterConfig, stats: FeatureStats | None = None,
                 params: dict[str, np.ndarray] | None = None, seed: int = 0):
        self.cfg = cfg
        self.stats = stats if stats is not None else FeatureStats.identity()
        self.params = params if params is not None else init_parameters(cfg, seed)
        expected = parameter_shapes(cfg)
        if set(expected) != set(self.params):
            missing = sorted(set(expected) ^ set(self.params))
            raise ValueError(f"parameter table mismatch: {missing[:5]}")
        for name, shape in expected.items():
            if self.params[name].shape != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {self.params[name].shape}")
            if not np.all(np.isfinite(self.params[name])):
                raise ValueError(f"{name} contains non-finite values")
        self.encoder_passes = 0

    # ------------------------------------------------------------------ core graph

    def _embed(self, p, x, prefix):
        h0, c0 = nn.mlp_block(p, prefix + ".0", x)
        h1, c1 = nn.mlp_block(p, prefix + ".1", h0)
        return h1, (c0, c1)

    def _embed_backward(self, p, g, prefix, dy, cache):
        c0, c1 = cache
        dh0 = nn.mlp_block_backward(p, g, prefix + ".1", dy, c1)
        return nn.mlp_block_backward(p, g, prefix + ".0", dh0, c0)

    def encode(self, x: np.ndarray, mask: np.ndarray, params=None):
        """Right-aligned inputs ``(B, T, 13)`` -> memory ``(B, T, d)``, pooled ``(B, d)``, caches."""
        p = self.params if params is None else params
        h, ce = self._embed(p, x, "embed")
        h = h + rpe_encoding(x.shape[1], self.cfg.d_model)[None]
        layer_caches = []
        for layer in range(self.cfg.n_layers):
            h, c = nn.encoder_layer(p, f"encoder.{layer}", h, mask, self.cfg.n_heads)
            layer_caches.append(c)
        pooled, cp = nn.masked_mean(h, mask)
        return h, pooled, (ce, layer_caches, cp)

    def head(self, pooled, params=None):
        p = self.params if params is None else params
        h, c0 = nn.mlp_block(p, "head.0", pooled)
        out, c1 = nn.linear(p, "head.out", h)
        return out.reshape(len(pooled), self.cfg.horizon, 4), (c0, c1)

    def decode(self, obs, memory, mask, pred, params=None):
        """Observation rows ``(B, M, 5)`` cross-attend ``memory`` -> corrected offsets ``(B, M, 4)``.

        The output layer emits a per-coordinate gain that moves each observation
        towards the encoder's prediction ``pred`` for the same frame, so a
        measurement that agrees with the prediction passes through unchanged.
        """
        p = self.params if params is None else params
        q, ce = self._embed(p, obs, "dec_embed")
        z, cl = nn.cross_layer(p, "decoder", q, memory, mask, self.cfg.n_heads)
        gain, co = nn.linear(p, "decoder.out", z)
        seen = obs[..., :4]
        return seen + gain * (pred - seen), (ce, cl, co, gain, pred - seen)

    def loss_and_grads(self, batch, delta: float, params=None, need_grads: bool = True):
        """Huber prediction + filtering loss averaged over valid target elements."""
        p = self.params if params is None else params
        x, xmask, obs, y, ymask = batch["x"], batch["x_mask"], batch["obs"], batch["y"], batch["y_mask"]
        memory, pooled, cenc = self.encode(x, xmask, p)
        pred, chead = self.head(pooled, p)
        m = y.shape[1]
        filt, cdec = self.decode(obs, memory, xmask, pred[:, :m], p)
        loss, dpred_m, dfilt = e2e_loss_and_grad(y, pred[:, :m], filt, ymask, delta)
        if not need_grads:
            return loss, None
        g: dict[str, np.ndarray] = {}
        ce, cl, co, gain, gap = cdec
        dpred = np.zeros_like(pred)
        dpred[:, :m] = dpred_m + dfilt * gain
        # decoder
        dz = nn.linear_backward(p, g, "decoder.out", dfilt * gap, co)
        dq, dmemory = nn.cross_layer_backward(p, g, "decoder", dz, cl)
        self._embed_backward(p, g, "dec_embed", dq, ce)
        # head
        c0, c1 = chead
        dh = nn.linear_backward(p, g, "head.out", dpred.reshape(len(pred), -1), c1)
        dpooled = nn.mlp_block_backward(p, g, "head.0", dh, c0)
        # encoder
        cemb, layer_caches, cp = cenc
        dh = nn.masked_mean_backward(dpooled, cp) + dmemory
        for layer in reversed(range(self.cfg.n_layers)):
            dh = nn.encoder_layer_backward(p, g, f"encoder.{layer}", dh, layer_caches[layer])
        self._embed_backward(p, g, "embed", dh, cemb)
        for name in p:
            if name not in g:
                g[name] = np.zeros_like(p[name])
        return loss, g

    # ------------------------------------------------------------------ inference

    def encode_history(self, frames: np.ndarray, boxes: np.ndarray) -> EncoderContext:
        frames = np.asarray(frames, dtype=np.float64)
        boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
        if len(frames) == 0:
            raise ValueError("cannot encode an empty history")
        frames, boxes = frames[-self.cfg.history:], boxes[-self.cfg.history:]
        x = input_features(frames, boxes, self.stats)[None]
        mask = np.ones((1, x.shape[1]), dtype=bool)
        memory, pooled, _ = self.encode(x, mask)
        pred, _ = self.head(pooled)
        self.encoder_passes += 1
        return EncoderContext(memory, float(frames[-1]), boxes[-1].copy(), pred[0])

    def predict_from_context(self, ctx: EncoderContext, m: int) -> np.ndarray:
        """First ``m`` predicted boxes (normalized tlwh) from a retained context."""
        if m == 0:
            return np.zeros((0, 4))
        if not 1 <= m <= self.cfg.horizon:
            raise ValueError(f"prediction steps must lie in [0, {self.cfg.horizon}], got {m}")
        offsets = self.stats.destandardize_target(ctx.predictions[:m])
        return _floor_size(ctx.last_box + offsets)

    def predict(self, history: Sequence[TimedBox] | tuple, m: int) -> tuple[list[BoundingBox], EncoderContext | None]:
        if m == 0:
            return [], None
        frames, boxes = as_arrays(history)
        ctx = self.encode_history(frames, boxes)
        return [BoundingBox.from_tlwh(r) for r in self.predict_from_context(ctx, m)], ctx

    def filter_array(self, ctx: EncoderContext, frame: float, box: np.ndarray) -> np.ndarray:
        if ctx is None:
            raise ValueError("filtering requires an encoder context from a prior prediction")
        obs = target_features(ctx.last_frame, ctx.last_box, np.array([frame], float),
                              np.asarray(box, float).reshape(1, 4), self.stats)[None]
        mask = np.ones((1, ctx.memory.shape[1]), dtype=bool)
        step = min(max(int(round(frame - ctx.last_frame)), 1), self.cfg.horizon)
        pred = ctx.predictions[step - 1][None, None]
        out, _ = self.decode(obs, ctx.memory, mask, pred)
        return _floor_size(ctx.last_box + self.stats.destandardize_target(out[0, 0]))

    def filter(self, ctx: EncoderContext, observation: TimedBox) -> BoundingBox:
        corrected = self.filter_array(ctx, observation.frame, observation.box.tlwh())
        return BoundingBox.from_tlwh(corrected, observation.box.confidence)

    def n_parameters(self) -> int:
        return int(sum(v.size for v in self.params.values()))


def _floor_size(boxes: np.ndarray) -> np.ndarray:
    boxes = np.array(boxes, dtype=np.float64, copy=True)
    boxes[..., 2:4] = np.maximum(boxes[..., 2:4], MIN_SIZE)
    return boxes


def e2e_loss_and_grad(target, pred, filt, mask, delta):
    """Mean over valid elements of Huber(target - pred) + Huber(target - filtered)."""
    if delta <= 0:
        raise ValueError("huber delta must be positive")
    m = np.asarray(mask, dtype=np.float64)
    if m.sum() == 0:
        raise ValueError("loss needs at least one valid target step")
    n = m.sum() * target.shape[-1]
    rp, rf = pred - target, filt - target
    mm = m[..., None]
    loss = float(((nn.huber(rp, delta) + nn.huber(rf, delta)) * mm).sum() / n)
    return loss, nn.huber_grad(rp, delta) * mm / n, nn.huber_grad(rf, delta) * mm / n


def e2e_loss(target, pred, filt, mask, delta) -> float:
    target, pred, filt = (np.asarray(a, dtype=np.float64) for a in (target, pred, filt))
    return e2e_loss_and_grad(target, pred, filt, mask, delta)[0]
