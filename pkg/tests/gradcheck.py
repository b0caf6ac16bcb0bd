"""Central finite-difference check of the filter's analytic gradients."""

from __future__ import annotations

import numpy as np

from deepmovesort.transfilter import TransFilter, TransFilterConfig

TINY = TransFilterConfig(d_model=8, n_heads=2, n_layers=1, history=4, horizon=4, ff_dim=16)


def tiny_problem(seed: int = 0):
    """Tiny model with perturbed weights plus a batch exercising padding and target masks."""
    model = TransFilter(TINY, seed=seed + 1)
    rng = np.random.default_rng(seed)
    for k in model.params:
        model.params[k] = model.params[k] + rng.normal(0, 0.3, model.params[k].shape)
    b = 3
    x_mask = np.ones((b, 4), bool)
    x_mask[0, :2] = False
    batch = {
        "x": rng.normal(size=(b, 4, 13)),
        "x_mask": x_mask,
        "obs": rng.normal(size=(b, 4, 5)),
        "y": rng.normal(size=(b, 4, 4)),
        "y_mask": np.array([[1, 1, 0, 1], [1, 0, 0, 0], [1, 1, 1, 1]], bool),
    }
    return model, batch


def worst_relative_error(model: TransFilter, batch, delta: float = 0.5, step: float = 1e-4,
                         floor: float = 1e-8) -> tuple[float, str]:
    """Largest |analytic - numeric| / max(|analytic|, |numeric|, floor) over all parameters."""
    _, grads = model.loss_and_grads(batch, delta)
    worst, where = 0.0, ""
    for name, value in model.params.items():
        flat = value.reshape(-1)
        g = grads[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = model.loss_and_grads(batch, delta, need_grads=False)[0]
            flat[i] = orig - step
            down = model.loss_and_grads(batch, delta, need_grads=False)[0]
            flat[i] = orig
            numeric = (up - down) / (2 * step)
            err = abs(numeric - g[i]) / max(abs(numeric), abs(g[i]), floor)
            if err > worst:
                worst, where = err, f"{name}[{i}]"
    return worst, where
