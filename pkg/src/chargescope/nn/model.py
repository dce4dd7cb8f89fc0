"""Time-distributed 1-D CNN followed by an LSTM, with exact backpropagation.

Each input window arrives as ``n_slices`` equal temporal slices. A shared
stack of (valid conv -> ReLU -> max-pool) blocks turns every slice into a
feature vector; the LSTM reads those vectors in temporal order and its last
hidden state goes through dropout, a ReLU dense layer and a softmax layer.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np


class ShapeError(ValueError):
    def __init__(self, layer: str, length: int):
        self.layer = layer
        self.length = length
        super().__init__(f"layer {layer} would have non-positive output length {length}")


@dataclass(frozen=True)
class ModelConfig:
    n_slices: int = 3
    conv_filters: Tuple[int, ...] = (128, 192, 300)
    kernel: int = 5
    pool_size: int = 2
    pool_stride: int = 2
    lstm_units: int = 128
    dense_units: int = 100
    n_classes: int = 20
    dropout: float = 0.5

    def __post_init__(self):
        ints = (self.n_slices, self.kernel, self.pool_size, self.pool_stride,
                self.lstm_units, self.dense_units, self.n_classes, *self.conv_filters)
        if not self.conv_filters or min(ints) < 1:
            raise ValueError("all model sizes must be positive")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")
        object.__setattr__(self, "conv_filters", tuple(int(f) for f in self.conv_filters))


@dataclass(frozen=True)
class ShapePlan:
    layers: Tuple[Tuple[str, int], ...]
    slice_len: int
    features: int  # flattened per-slice width fed to the LSTM

    @property
    def lengths(self):
        return [n for _, n in self.layers]


def shape_plan(config: ModelConfig, slice_len: int) -> ShapePlan:
    """Per-layer output lengths for one slice (valid convolutions)."""
    n = slice_len
    chain = []
    for i, _ in enumerate(config.conv_filters, start=1):
        n = n - config.kernel + 1
        if n < 1:
            raise ShapeError(f"conv{i}", n)
        chain.append((f"conv{i}", n))
        n = (n - config.pool_size) // config.pool_stride + 1
        if n < 1:
            raise ShapeError(f"pool{i}", n)
        chain.append((f"pool{i}", n))
    return ShapePlan(tuple(chain), slice_len, n * config.conv_filters[-1])


class ModelParams(dict):
    """Named parameter tensors; a plain dict with a couple of helpers."""

    def copy(self):
        return ModelParams({k: v.copy() for k, v in self.items()})

    def astype(self, dtype):
        return ModelParams({k: v.astype(dtype) for k, v in self.items()})

    @property
    def dtype(self):
        return next(iter(self.values())).dtype

    def n_parameters(self) -> int:
        return int(sum(v.size for v in self.values()))


def param_shapes(config: ModelConfig, slice_len: int) -> dict:
    plan = shape_plan(config, slice_len)
    shapes = {}
    c_in = 1
    for i, f in enumerate(config.conv_filters, start=1):
        shapes[f"conv{i}.w"] = (config.kernel, c_in, f)
        shapes[f"conv{i}.b"] = (f,)
        c_in = f
    h = config.lstm_units
    shapes["lstm.w"] = (plan.features, 4 * h)
    shapes["lstm.u"] = (h, 4 * h)
    shapes["lstm.b"] = (4 * h,)
    shapes["dense.w"] = (h, config.dense_units)
    shapes["dense.b"] = (config.dense_units,)
    shapes["out.w"] = (config.dense_units, config.n_classes)
    shapes["out.b"] = (config.n_classes,)
    return shapes


def init_params(config: ModelConfig, slice_len: int, seed: int = 0, dtype=np.float32) -> ModelParams:
    """Glorot-uniform kernels, orthogonal recurrent weights, forget-gate bias 1."""
    rng = np.random.default_rng(seed)
    params = ModelParams()
    for name, shape in param_shapes(config, slice_len).items():
        if name.endswith(".b"):
            p = np.zeros(shape)
        elif name == "lstm.u":
            h = shape[0]
            q, r = np.linalg.qr(rng.standard_normal((4 * h, h)))
            p = (q * np.sign(np.diag(r))).T
        else:
            if len(shape) == 3:
                k, cin, cout = shape
                fan_in, fan_out = k * cin, k * cout
            else:
                fan_in, fan_out = shape
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            p = rng.uniform(-lim, lim, shape)
        params[name] = p
    h = config.lstm_units
    params["lstm.b"][h:2 * h] = 1.0
    return params.astype(dtype)


def check_params(params: ModelParams, config: ModelConfig, slice_len: int) -> None:
    want = param_shapes(config, slice_len)
    if set(want) != set(params):
        raise ValueError(f"parameter names {sorted(params)} do not match model {sorted(want)}")
    for k, shape in want.items():
        if params[k].shape != shape:
            raise ValueError(f"{k} has shape {params[k].shape}, expected {shape} for slice length {slice_len}")


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _im2col(a: np.ndarray, k: int) -> np.ndarray:
    # (N, L, C) -> (N, L-k+1, k*C), kernel-tap major
    lo = a.shape[1] - k + 1
    return np.concatenate([a[:, j:j + lo, :] for j in range(k)], axis=2)


def _maxpool(z: np.ndarray, size: int, stride: int, with_arg: bool):
    # pools axis 1; arg holds the winning tap (first one on ties)
    p = (z.shape[1] - size) // stride + 1
    best = z[:, 0:stride * (p - 1) + 1:stride].copy()
    arg = np.zeros(best.shape, np.int8) if with_arg else None
    for j in range(1, size):
        cand = z[:, j:j + stride * (p - 1) + 1:stride]
        if with_arg:
            upd = cand > best
            arg[upd] = j
            np.copyto(best, cand, where=upd)
        else:
            np.maximum(best, cand, out=best)
    return best, arg


def dropout_mask(rng: np.random.Generator, shape, rate: float, dtype=np.float64) -> np.ndarray:
    """Inverted-dropout mask: kept units are scaled by 1/(1-rate)."""
    keep = rng.random(shape) >= rate
    return keep.astype(dtype) / (1.0 - rate)


def _as_batch(x) -> np.ndarray:
    if hasattr(x, "slices"):
        x = x.slices
    x = np.asarray(x)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3:
        raise ValueError(f"expected (batch, slices, slice_len) input, got shape {x.shape}")
    return x


def _forward(params, config: ModelConfig, x: np.ndarray, rng=None, keep_cache=False):
    b, s, length = x.shape
    if s != config.n_slices:
        raise ValueError(f"input has {s} slices, model expects {config.n_slices}")
    check_params(params, config, length)
    dtype = params.dtype
    k, ps, st = config.kernel, config.pool_size, config.pool_stride
    a = x.astype(dtype, copy=False).reshape(b * s, length, 1)
    convs = []
    for i in range(1, len(config.conv_filters) + 1):
        w = params[f"conv{i}.w"]
        cols = _im2col(a, k)
        n, lo, kc = cols.shape
        z = (cols.reshape(n * lo, kc) @ w.reshape(kc, -1)).reshape(n, lo, -1)
        z += params[f"conv{i}.b"]
        np.maximum(z, 0, out=z)
        a, arg = _maxpool(z, ps, st, keep_cache)
        if keep_cache:
            convs.append((cols, z > 0, arg, lo))
    feats = a.reshape(b, s, -1)

    h_units = config.lstm_units
    W, U, bias = params["lstm.w"], params["lstm.u"], params["lstm.b"]
    xw = (feats.reshape(b * s, -1) @ W).reshape(b, s, 4 * h_units)
    h = np.zeros((b, h_units), dtype)
    c = np.zeros((b, h_units), dtype)
    steps = []
    for t in range(s):
        g = xw[:, t] + h @ U + bias
        gi = _sigmoid(g[:, :h_units])
        gf = _sigmoid(g[:, h_units:2 * h_units])
        gg = np.tanh(g[:, 2 * h_units:3 * h_units])
        go = _sigmoid(g[:, 3 * h_units:])
        c_prev, h_prev = c, h
        c = gf * c + gi * gg
        tc = np.tanh(c)
        h = go * tc
        if keep_cache:
            steps.append((gi, gf, gg, go, c_prev, h_prev, tc))

    mask = None
    hd = h
    if rng is not None and config.dropout > 0:
        mask = dropout_mask(rng, h.shape, config.dropout, dtype)
        hd = h * mask
    d = hd @ params["dense.w"] + params["dense.b"]
    np.maximum(d, 0, out=d)
    logits = d @ params["out.w"] + params["out.b"]
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    probs = e / e.sum(axis=1, keepdims=True)
    cache = None
    if keep_cache:
        cache = dict(x_shape=x.shape, convs=convs, feats=feats, steps=steps, mask=mask, hd=hd, d=d)
    return probs, cache


def forward(params, config: ModelConfig, sliced_segment, mode: str = "infer", rng=None) -> np.ndarray:
    """Class probabilities for one sliced segment (or a batch of them).

    ``mode="train"`` applies dropout with masks drawn from ``rng``.
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    if mode == "train" and rng is None:
        raise ValueError("train mode needs a random generator for dropout")
    x = _as_batch(sliced_segment)
    probs, _ = _forward(params, config, x, rng if mode == "train" else None)
    return probs[0] if np.ndim(getattr(sliced_segment, "slices", sliced_segment)) == 2 else probs


def loss_and_gradients(params, config: ModelConfig, x, y, rng=None, return_probs=False):
    """Mean cross-entropy over the batch and its gradient for every parameter.

    Dropout is active only when ``rng`` is given; the same generator state
    yields the same mask, which is what finite-difference checks rely on.
    """
    x = _as_batch(x)
    y = np.asarray(y, dtype=np.int64)
    if len(y) == 0 or len(y) != len(x):
        raise ValueError("batch must be non-empty with one label per input")
    probs, cache = _forward(params, config, x, rng, keep_cache=True)
    b, s, _ = x.shape
    picked = probs[np.arange(b), y]
    with np.errstate(divide="ignore"):
        loss = float(-np.mean(np.log(picked.astype(np.float64))))
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite loss")
    dtype = params.dtype
    grads = ModelParams()

    dlogits = probs.copy()
    dlogits[np.arange(b), y] -= 1.0
    dlogits /= b
    d = cache["d"]
    grads["out.w"] = d.T @ dlogits
    grads["out.b"] = dlogits.sum(axis=0)
    dd = (dlogits @ params["out.w"].T) * (d > 0)
    grads["dense.w"] = cache["hd"].T @ dd
    grads["dense.b"] = dd.sum(axis=0)
    dh = dd @ params["dense.w"].T
    if cache["mask"] is not None:
        dh = dh * cache["mask"]

    hu = config.lstm_units
    W, U = params["lstm.w"], params["lstm.u"]
    feats = cache["feats"]
    dW = np.zeros_like(W)
    dU = np.zeros_like(U)
    db = np.zeros_like(params["lstm.b"])
    dfeats = np.empty_like(feats)
    dc = np.zeros((b, hu), dtype)
    for t in reversed(range(s)):
        gi, gf, gg, go, c_prev, h_prev, tc = cache["steps"][t]
        do = dh * tc
        dc = dc + dh * go * (1 - tc * tc)
        dgates = np.concatenate(
            [
                dc * gg * gi * (1 - gi),
                dc * c_prev * gf * (1 - gf),
                dc * gi * (1 - gg * gg),
                do * go * (1 - go),
            ],
            axis=1,
        )
        dc = dc * gf
        dW += feats[:, t].T @ dgates
        dU += h_prev.T @ dgates
        db += dgates.sum(axis=0)
        dfeats[:, t] = dgates @ W.T
        dh = dgates @ U.T
    grads["lstm.w"], grads["lstm.u"], grads["lstm.b"] = dW, dU, db

    k, ps, st = config.kernel, config.pool_size, config.pool_stride
    n_layers = len(config.conv_filters)
    da = dfeats.reshape(b * s, -1, config.conv_filters[-1])
    for i in range(n_layers, 0, -1):
        cols, relu_on, arg, lo = cache["convs"][i - 1]
        n, p, c = da.shape
        dz = np.zeros((n, lo, c), dtype)
        for j in range(ps):
            dz[:, j:j + st * (p - 1) + 1:st] += np.where(arg == j, da, 0)
        dz *= relu_on
        w = params[f"conv{i}.w"]
        grads[f"conv{i}.w"] = (cols.reshape(-1, cols.shape[2]).T @ dz.reshape(-1, c)).reshape(w.shape)
        grads[f"conv{i}.b"] = dz.sum(axis=(0, 1))
        if i > 1:
            dcols = (dz.reshape(n * lo, c) @ w.reshape(-1, c).T).reshape(n, lo, k, w.shape[1])
            da = np.zeros((n, lo + k - 1, w.shape[1]), dtype)
            for j in range(k):
                da[:, j:j + lo] += dcols[:, :, j]
    grads = ModelParams({name: grads[name] for name in params})
    if return_probs:
        return loss, grads, probs
    return loss, grads


@dataclass
class SegmentPrediction:
    probs: np.ndarray
    label: int


def predict_proba(params, config: ModelConfig, x, batch_size: int = 256) -> np.ndarray:
    x = _as_batch(x)
    out = [
        _forward(params, config, x[i:i + batch_size])[0] for i in range(0, len(x), batch_size)
    ]
    return np.concatenate(out) if out else np.empty((0, config.n_classes))


def predict_segments(params, config: ModelConfig, segments, batch_size: int = 256) -> list:
    """Inference-mode probabilities and argmax label (ties -> lowest index)."""
    if not isinstance(segments, np.ndarray):
        segments = np.stack([getattr(s, "slices", s) for s in segments])
    probs = predict_proba(params, config, segments, batch_size)
    return [SegmentPrediction(p, int(np.argmax(p))) for p in probs]
