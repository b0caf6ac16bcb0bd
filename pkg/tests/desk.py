"""Desk-scale training recipe and measurements shared by the acceptance suite."""

from __future__ import annotations

import dataclasses
import os
import time

import numpy as np

from deepmovesort.geometry import BoundingBox
from deepmovesort.kalman import KalmanBoxFilter
from deepmovesort.metrics import ade, as_frame_map, evaluate
from deepmovesort.synth import crossing_scenario, generate, nonlinear_benchmark
from deepmovesort.tracker import config_from_mapping, run_sequence
from deepmovesort.training import (
    AugmentationConfig, TrainConfig, build_model, make_windows, tracks_from_ground_truth, train,
)
from deepmovesort.transfilter import TransFilterConfig

IMAGE = (1280.0, 720.0)
HISTORY, HORIZON = 10, 10
EPOCHS = int(os.environ.get("DMS_DESK_EPOCHS", "30"))
STRIDE = int(os.environ.get("DMS_DESK_STRIDE", "1"))

ARCH = TransFilterConfig(d_model=32, n_heads=4, n_layers=2, history=HISTORY, horizon=HORIZON, ff_dim=64)


def augmentation(seed: int) -> AugmentationConfig:
    return AugmentationConfig(noise_scale=0.05, mask_probability=0.1, seed=seed, clean_fraction=0.5)


def train_config(seed: int) -> TrainConfig:
    return TrainConfig(learning_rate=2e-3, warmup_epochs=1, decay_factor=0.3, decay_period=10,
                       epochs=EPOCHS, batch_size=32, seed=seed, resample_augmentation=True)


def windows(cfgs, stride):
    out = []
    for c in cfgs:
        out += make_windows(tracks_from_ground_truth(generate(c).gt_tracks(), IMAGE), HISTORY, HORIZON, stride)
    return out


def desk_model(seed: int):
    """Train the desk filter on the training half of the seed's benchmark.

    Returns ``(model, seconds, held-out scenario configs)``.
    """
    train_cfgs, test_cfgs = nonlinear_benchmark(seed)
    w = windows(train_cfgs, STRIDE)
    aug = augmentation(seed)
    model = build_model(w, ARCH, seed, aug)
    t0 = time.perf_counter()
    train(model, w, train_config(seed), aug)
    return model, time.perf_counter() - t0, test_cfgs


def ade_pair(model, test_cfgs) -> tuple[float, float]:
    """Mean ADE of the filter and the Kalman baseline on full held-out windows."""
    kf = KalmanBoxFilter()
    tf_err, kf_err = [], []
    for w in windows(test_cfgs, 5):
        if len(w.input_frames) != HISTORY or not w.target_mask.all():
            continue
        pred, _ = model.predict((w.input_frames, w.input_boxes), HORIZON)
        tf_err.append(ade(w.target_boxes, np.array([b.tlwh() for b in pred])))
        st = kf.initiate(BoundingBox.from_tlwh(w.input_boxes[0]))
        for b in w.input_boxes[1:]:
            st = kf.update(kf.predict(st), BoundingBox.from_tlwh(b))
        boxes, _ = kf.predict_steps(st, HORIZON)
        kf_err.append(ade(w.target_boxes, np.array([b.tlwh() for b in boxes])))
    return float(np.mean(tf_err)), float(np.mean(kf_err))


def tracker_config(**overrides):
    values = {"image.width": IMAGE[0], "image.height": IMAGE[1]}
    values.update(overrides)
    return config_from_mapping(values)


def crossing_idf1(model, seed: int) -> tuple[float, float]:
    """IDF1 of the pipeline with the filter and with the Kalman filter on a crossing scene."""
    c = crossing_scenario(seed)
    s = generate(c)
    cfg = tracker_config(**{"ha.reid.weight": 0.0})
    out = []
    for m in (model, None):
        rec = run_sequence(cfg, s.detections, None, None, m, c.n_frames)
        out.append(evaluate(s.gt, as_frame_map(rec)).idf1)
    return out[0], out[1]


def filtering_delta(model, test_cfgs, noise: float) -> list[float]:
    """Per-scene change of mean matched IoU when observation filtering is switched on."""
    cfg = tracker_config()
    deltas = []
    for c in test_cfgs:
        s = generate(dataclasses.replace(c, noise_scale=noise))
        v = []
        for filt in (False, True):
            rec = run_sequence(dataclasses.replace(cfg, apply_noise_filtering=filt), s.detections,
                               s.embeddings, None, model, c.n_frames)
            v.append(evaluate(s.gt, as_frame_map(rec)).mean_matched_iou)
        deltas.append(v[1] - v[0])
    return deltas
