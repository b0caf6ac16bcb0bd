"""Constant-velocity Kalman filters: one for boxes, one for detection confidence."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .geometry import AffineTransform, BoundingBox


@dataclass
class KalmanState:
    mean: np.ndarray        # (8,) cx, cy, w, h and their per-frame velocities
    covariance: np.ndarray  # (8, 8)

    def box(self, confidence: float = 1.0) -> BoundingBox:
        cx, cy, w, h = self.mean[:4]
        w, h = max(w, 1e-6), max(h, 1e-6)
        return BoundingBox(cx - w / 2, cy - h / 2, w, h, confidence)

    def copy(self) -> "KalmanState":
        return KalmanState(self.mean.copy(), self.covariance.copy())


def tlwh_to_xywh(tlwh) -> np.ndarray:
    x, y, w, h = np.asarray(tlwh, dtype=np.float64)
    return np.array([x + w / 2, y + h / 2, w, h])


class KalmanBoxFilter:
    """Box filter with noise proportional to the box size.

    Position-like components get std ``std_weight_position`` times the box width
    (x, w) or height (y, h); velocities use ``std_weight_velocity``.
    """

    def __init__(self, std_weight_position: float = 1.0 / 20, std_weight_velocity: float = 1.0 / 160,
                 measurement_weight: float | None = None):
        self.wp = std_weight_position
        self.wv = std_weight_velocity
        self.wm = std_weight_position if measurement_weight is None else measurement_weight
        self.motion = np.eye(8)
        self.motion[:4, 4:] = np.eye(4)
        self.observe = np.eye(4, 8)

    def _scale(self, mean) -> np.ndarray:
        w, h = mean[2], mean[3]
        return np.array([w, h, w, h])

    def initiate(self, box: BoundingBox) -> KalmanState:
        z = tlwh_to_xywh(box.tlwh())
        s = self._scale(z)
        std = np.concatenate([2 * self.wp * s, 10 * self.wv * s])
        return KalmanState(np.concatenate([z, np.zeros(4)]), np.diag(std ** 2))

    def process_noise(self, mean) -> np.ndarray:
        s = self._scale(mean)
        return np.diag(np.concatenate([self.wp * s, self.wv * s]) ** 2)

    def predict(self, state: KalmanState) -> KalmanState:
        q = self.process_noise(state.mean)
        mean = self.motion @ state.mean
        cov = self.motion @ state.covariance @ self.motion.T + q
        return KalmanState(mean, 0.5 * (cov + cov.T))

    def predict_steps(self, state: KalmanState, steps: int) -> tuple[list[BoundingBox], list[KalmanState]]:
        boxes, states = [], []
        for _ in range(steps):
            state = self.predict(state)
            states.append(state)
            boxes.append(state.box())
        return boxes, states

    def measurement_noise(self, mean) -> np.ndarray:
        return np.diag((self.wm * self._scale(mean)) ** 2)

    def update(self, state: KalmanState, observation: BoundingBox) -> KalmanState:
        z = tlwh_to_xywh(observation.tlwh())
        if not np.all(np.isfinite(z)):
            raise ValueError("observation must be finite")
        h = self.observe
        s = h @ state.covariance @ h.T + self.measurement_noise(state.mean)
        pht = state.covariance @ h.T
        gain = scipy.linalg.cho_solve(scipy.linalg.cho_factor(s, lower=True), pht.T).T
        mean = state.mean + gain @ (z - h @ state.mean)
        cov = state.covariance - gain @ s @ gain.T
        return KalmanState(mean, 0.5 * (cov + cov.T))

    @staticmethod
    def apply_affine(state: KalmanState, t: AffineTransform) -> KalmanState:
        """Rotate/scale every 2-vector of the state by the linear part; translate the center."""
        rot = np.kron(np.eye(4), t.linear)
        mean = rot @ state.mean
        mean[:2] += t.offset
        return KalmanState(mean, rot @ state.covariance @ rot.T)


@dataclass
class ConfidenceKalman:
    """Scalar constant-velocity model of a track's detection confidence.

    The measurement variance shrinks with the observed confidence:
    ``(sigma_conf * (1 - conf)) ** 2``.
    """

    mean: np.ndarray
    covariance: np.ndarray
    sigma_conf: float = 0.2
    process_std: tuple[float, float] = (1e-2, 1e-3)

    @classmethod
    def initiate(cls, confidence: float, sigma_conf: float = 0.2) -> "ConfidenceKalman":
        var0 = (sigma_conf * (1.0 - confidence)) ** 2 + 1e-4
        return cls(np.array([confidence, 0.0]), np.diag([var0, 1e-4]), sigma_conf)

    def predict(self) -> float:
        f = np.array([[1.0, 1.0], [0.0, 1.0]])
        self.mean = f @ self.mean
        cov = f @ self.covariance @ f.T + np.diag(np.square(self.process_std))
        self.covariance = 0.5 * (cov + cov.T)
        return float(self.mean[0])

    def measurement_variance(self, confidence: float) -> float:
        return (self.sigma_conf * (1.0 - confidence)) ** 2

    def update(self, confidence: float) -> None:
        p = self.covariance
        s = p[0, 0] + self.measurement_variance(confidence)
        k = p[:, 0] / s
        innovation = confidence - self.mean[0]
        self.mean = np.array([(1.0 - k[0]) * self.mean[0] + k[0] * confidence,
                              self.mean[1] + k[1] * innovation])
        cov = p - np.outer(k, p[0, :])
        self.covariance = 0.5 * (cov + cov.T)

    @property
    def value(self) -> float:
        return float(self.mean[0])


def atcm_step(ck: ConfidenceKalman, detected_conf: float | None) -> tuple[float, ConfidenceKalman]:
    """Predict one frame ahead, then fold in the detection confidence when one exists."""
    nxt = ConfidenceKalman(ck.mean.copy(), ck.covariance.copy(), ck.sigma_conf, ck.process_std)
    predicted = nxt.predict()
    if detected_conf is not None:
        nxt.update(detected_conf)
    return predicted, nxt
