"""Central finite-difference check of the analytic gradients."""

from __future__ import annotations

import numpy as np

from .model import ModelConfig, init_params, loss_and_gradients, shape_plan


def random_tiny_config(rng: np.random.Generator):
    """A small random architecture and a slice length it accepts."""
    n_conv = int(rng.integers(1, 4))
    config = ModelConfig(
        n_slices=int(rng.integers(2, 4)),
        conv_filters=tuple(int(f) for f in rng.integers(2, 5, n_conv)),
        kernel=3,
        lstm_units=int(rng.integers(2, 5)),
        dense_units=int(rng.integers(2, 5)),
        n_classes=int(rng.integers(2, 5)),
        dropout=float(rng.choice([0.0, 0.3])),
    )
    slice_len = int(rng.integers(24, 33))
    shape_plan(config, slice_len)
    return config, slice_len


def gradient_check(config: ModelConfig, slice_len: int, seed: int = 0, batch: int = 3,
                   steps=(1e-4, 1e-5, 1e-6), floor: float = 1e-6) -> float:
    """Largest ``|analytic - numeric| / max(|analytic|, |numeric|, floor)`` over all parameters.

    Runs in float64; dropout uses a fixed mask so the loss is a deterministic
    function of the parameters. Each numeric derivative is taken at the
    largest step whose central difference agrees with the one at half that
    step; disagreement means a ReLU or max-pool switch lies inside the step.
    """
    rng = np.random.default_rng(seed)
    params = init_params(config, slice_len, seed=seed, dtype=np.float64)
    for name in params:
        # non-zero biases so their gradients are exercised off the init point
        params[name] = params[name] + rng.normal(0, 0.1, params[name].shape)
    x = rng.normal(size=(batch, config.n_slices, slice_len))
    y = rng.integers(0, config.n_classes, batch)

    def loss(p):
        drop = np.random.default_rng(seed + 1) if config.dropout else None
        return loss_and_gradients(p, config, x, y, rng=drop)

    def rel(a, b):
        return abs(a - b) / max(abs(a), abs(b), floor)

    _, grads = loss(params)
    worst = 0.0
    for name, arr in params.items():
        flat = arr.reshape(-1)
        g = grads[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]

            def central(h):
                flat[i] = orig + h
                up, _ = loss(params)
                flat[i] = orig - h
                down, _ = loss(params)
                flat[i] = orig
                return (up - down) / (2 * h)

            for h in steps:
                num = central(h / 2)
                if rel(central(h), num) < 1e-5:
                    break
            worst = max(worst, rel(g[i], num))
    return worst
