"""Random forest over whole-trace magnitude spectra."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

FOREST_MAGIC = "chargescope-forest v1"


def next_pow2(n: int) -> int:
    return 1 << max(0, (n - 1).bit_length())


def fft_radix2(x, inverse: bool = False) -> np.ndarray:
    """Iterative radix-2 decimation-in-time FFT; ``len(x)`` must be a power of two.

    The inverse transform includes the 1/N factor.
    """
    a = np.asarray(x, dtype=np.complex128).copy()
    n = len(a)
    if n == 0 or n & (n - 1):
        raise ValueError(f"length {n} is not a power of two")
    bits = n.bit_length() - 1
    if bits:
        idx = np.arange(n)
        rev = np.zeros(n, dtype=np.int64)
        for b in range(bits):
            rev |= ((idx >> b) & 1) << (bits - 1 - b)
        a = a[rev]
    sign = 1.0 if inverse else -1.0
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp(sign * 2j * np.pi * np.arange(half) / size)
        blocks = a.reshape(-1, size)
        even = blocks[:, :half].copy()
        odd = blocks[:, half:] * tw
        blocks[:, :half] = even + odd
        blocks[:, half:] = even - odd
        size *= 2
    return a / n if inverse else a


@dataclass(frozen=True, eq=False)
class SpectrumFeatures:
    magnitudes: np.ndarray  # bins 0..N/2
    bin_hz: float

    @property
    def n_fft(self) -> int:
        return 2 * (len(self.magnitudes) - 1)


def fft_magnitude(trace, n_fft: Optional[int] = None) -> SpectrumFeatures:
    """Magnitude spectrum of a trace zero-padded to a power of two.

    ``trace`` may be a CurrentTrace or a plain sample array (then ``bin_hz``
    is per sample, i.e. fs = 1).
    """
    samples = np.asarray(getattr(trace, "samples", trace), dtype=np.float64)
    fs = getattr(trace, "sampling_rate", 1)
    if len(samples) == 0:
        raise ValueError("cannot transform an empty trace")
    n = n_fft or next_pow2(len(samples))
    if n < len(samples) or n & (n - 1):
        raise ValueError(f"n_fft={n} must be a power of two >= trace length {len(samples)}")
    padded = np.zeros(n)
    padded[: len(samples)] = samples
    spec = fft_radix2(padded)[: n // 2 + 1]
    return SpectrumFeatures(np.abs(spec), fs / n)


def spectrum_matrix(traces, n_fft: Optional[int] = None) -> np.ndarray:
    n = n_fft or next_pow2(max(len(t) for t in traces))
    return np.stack([fft_magnitude(t, n).magnitudes for t in traces])


@dataclass
class Tree:
    """Array-encoded binary tree; leaves have ``feature == -1``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    hist: np.ndarray  # (n_nodes, n_classes) training counts reaching each node

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            rows = np.flatnonzero(active)
            nd = node[rows]
            go_left = X[rows, self.feature[nd]] <= self.threshold[nd]
            node[rows] = np.where(go_left, self.left[nd], self.right[nd])
            active = self.feature[node] >= 0
        return node


@dataclass
class Forest:
    trees: list
    n_classes: int
    n_features: int
    max_depth: Optional[int] = None
    seed: int = 0

    @property
    def n_trees(self) -> int:
        return len(self.trees)


def _gini_best_split(Xn: np.ndarray, yn: np.ndarray, n_classes: int, feats: np.ndarray):
    n = len(yn)
    vals = Xn[:, feats]
    order = np.argsort(vals, axis=0, kind="stable")
    sv = np.take_along_axis(vals, order, axis=0)
    onehot = np.eye(n_classes)[yn]
    left = np.cumsum(onehot[order], axis=0)[:-1]          # (n-1, m, C)
    total = onehot.sum(axis=0)
    right = total - left
    nl = np.arange(1, n)[:, None]
    nr = n - nl
    gini = (nl * (1 - ((left / nl[..., None]) ** 2).sum(-1))
            + nr * (1 - ((right / nr[..., None]) ** 2).sum(-1))) / n
    valid = sv[1:] > sv[:-1]
    gini = np.where(valid, gini, np.inf)
    flat = int(np.argmin(gini))
    pos, j = divmod(flat, len(feats))
    if not np.isfinite(gini[pos, j]):
        return None
    return int(feats[j]), float((sv[pos, j] + sv[pos + 1, j]) / 2), float(gini[pos, j])


def _grow_tree(X, y, n_classes, max_features, max_depth, rng) -> Tree:
    feature, threshold, left, right, hist = [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        hist.append(np.bincount(y[idx], minlength=n_classes))
        return len(feature) - 1

    root = new_node(np.arange(len(y)))
    stack = [(root, np.arange(len(y)), 0)]
    n_feat = X.shape[1]
    while stack:
        node, idx, depth = stack.pop()
        if (max_depth is not None and depth >= max_depth) or np.count_nonzero(hist[node]) <= 1:
            continue
        cand = rng.choice(n_feat, size=max_features, replace=False)
        split = _gini_best_split(X[idx], y[idx], n_classes, cand)
        if split is None and max_features < n_feat:
            split = _gini_best_split(X[idx], y[idx], n_classes, np.arange(n_feat))
        if split is None:
            continue
        f, thr, _ = split
        mask = X[idx, f] <= thr
        feature[node], threshold[node] = f, thr
        li, ri = idx[mask], idx[~mask]
        left[node] = new_node(li)
        right[node] = new_node(ri)
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))
    return Tree(np.array(feature), np.array(threshold), np.array(left), np.array(right), np.array(hist))


def _bootstrap(seed: int, tree_index: int, n: int):
    rng = np.random.default_rng([seed, tree_index])
    return rng.integers(0, n, n), rng


def rf_train(features, labels, n_trees: int = 100, max_depth: Optional[int] = None, seed: int = 0,
             n_classes: Optional[int] = None) -> Forest:
    """Bootstrap-aggregated Gini trees with sqrt(F) candidate features per node.

    Tree ``i`` draws everything from a generator seeded by ``(seed, i)``.
    """
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if len(np.unique(y)) < 2:
        raise ValueError("random forest needs at least two classes")
    n_classes = n_classes or int(y.max()) + 1
    max_features = max(1, int(math.isqrt(X.shape[1])))
    trees = []
    for i in range(n_trees):
        boot, rng = _bootstrap(seed, i, len(y))
        trees.append(_grow_tree(X[boot], y[boot], n_classes, max_features, max_depth, rng))
    return Forest(trees, n_classes, X.shape[1], max_depth, seed)


def rf_proba(forest: Forest, features) -> np.ndarray:
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if X.shape[1] != forest.n_features:
        raise ValueError(f"forest expects {forest.n_features} features, got {X.shape[1]}")
    acc = np.zeros((len(X), forest.n_classes))
    for tree in forest.trees:
        h = tree.hist[tree.apply(X)].astype(np.float64)
        acc += h / h.sum(axis=1, keepdims=True)
    return acc / forest.n_trees


def rank_classes(probs: np.ndarray) -> list:
    # stable sort on -p keeps lower class index first among ties
    return [int(c) for c in np.argsort(-probs, kind="stable")]


def rf_predict(forest: Forest, features) -> list:
    """Ranked class list per row (mean leaf probability, ties to the lower index)."""
    return [rank_classes(p) for p in rf_proba(forest, features)]


def oob_accuracy(forest: Forest, features, labels) -> float:
    X = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    acc = np.zeros((len(y), forest.n_classes))
    for i, tree in enumerate(forest.trees):
        boot, _ = _bootstrap(forest.seed, i, len(y))
        out = np.setdiff1d(np.arange(len(y)), boot)
        if len(out):
            h = tree.hist[tree.apply(X[out])].astype(np.float64)
            acc[out] += h / h.sum(axis=1, keepdims=True)
    seen = acc.sum(axis=1) > 0
    if not seen.any():
        raise ValueError("no out-of-bag samples")
    return float(np.mean(acc[seen].argmax(axis=1) == y[seen]))


def forest_to_dict(forest: Forest) -> dict:
    return {
        "format": FOREST_MAGIC,
        "n_classes": forest.n_classes,
        "n_features": forest.n_features,
        "max_depth": forest.max_depth,
        "seed": forest.seed,
        "trees": [
            {
                "feature": t.feature.tolist(),
                "threshold": t.threshold.tolist(),
                "left": t.left.tolist(),
                "right": t.right.tolist(),
                "hist": t.hist.tolist(),
            }
            for t in forest.trees
        ],
    }


def save_forest(forest: Forest, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(forest_to_dict(forest), fh, separators=(",", ":"))
        fh.write("\n")


def load_forest(path) -> Forest:
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    if d.get("format") != FOREST_MAGIC:
        raise ValueError(f"{path}: not a {FOREST_MAGIC} file")
    trees = [
        Tree(
            np.array(t["feature"], dtype=np.int64),
            np.array(t["threshold"], dtype=np.float64),
            np.array(t["left"], dtype=np.int64),
            np.array(t["right"], dtype=np.int64),
            np.array(t["hist"], dtype=np.int64).reshape(len(t["feature"]), d["n_classes"]),
        )
        for t in d["trees"]
    ]
    return Forest(trees, d["n_classes"], d["n_features"], d["max_depth"], d["seed"])
