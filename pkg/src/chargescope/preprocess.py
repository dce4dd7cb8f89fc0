"""Windowing, temporal slicing, normalization and train/val/test splitting."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .trace_model import CurrentTrace, TraceSet


@dataclass(frozen=True, eq=False)
class Segment:
    values: np.ndarray
    parent_trace_id: int
    offset_samples: int
    label: Optional[int]


@dataclass(frozen=True, eq=False)
class SlicedSegment:
    slices: np.ndarray  # (n_slices, slice_len)
    label: Optional[int]


@dataclass(frozen=True)
class NormStats:
    mean: float
    sd: float

    def __post_init__(self):
        if not self.sd > 0:
            raise ValueError("normalization sd must be positive")


def window_geometry(n_samples: int, fs: int, window_s: float = 1.0, overlap: float = 0.975):
    """Return ``(W, step, count)`` for sliding windows over ``n_samples``."""
    if not 0 <= overlap < 1:
        raise ValueError("overlap must lie in [0, 1)")
    w = int(round(window_s * fs))
    if w < 1:
        raise ValueError("window must hold at least one sample")
    if n_samples < w:
        raise ValueError(f"trace of {n_samples} samples is shorter than one {w}-sample window")
    step = max(1, int(math.floor(w * (1 - overlap) + 1e-9)))
    return w, step, (n_samples - w) // step + 1


def window_matrix(samples: np.ndarray, fs: int, window_s: float = 1.0, overlap: float = 0.975) -> np.ndarray:
    w, step, count = window_geometry(len(samples), fs, window_s, overlap)
    return np.lib.stride_tricks.sliding_window_view(samples, w)[::step][:count]


def sliding_windows(
    trace: CurrentTrace, window_s: float = 1.0, overlap: float = 0.975, trace_id: int = 0
) -> list:
    w, step, _ = window_geometry(len(trace), trace.sampling_rate, window_s, overlap)
    mats = window_matrix(trace.samples, trace.sampling_rate, window_s, overlap)
    return [
        Segment(np.array(row), trace_id, i * step, trace.label) for i, row in enumerate(mats)
    ]


def slice_segment(seg: Segment, n_slices: int = 3) -> SlicedSegment:
    w = len(seg.values)
    if w < n_slices:
        raise ValueError(f"window of {w} samples cannot be cut into {n_slices} slices")
    length = w // n_slices
    return SlicedSegment(np.asarray(seg.values)[: n_slices * length].reshape(n_slices, length), seg.label)


def fit_norm(train_segments) -> NormStats:
    values = _stack_values(train_segments)
    if values.size == 0:
        raise ValueError("cannot fit normalization on no segments")
    sd = float(values.std())
    if not sd > 0:
        raise ValueError("training segments have zero variance")
    return NormStats(float(values.mean()), sd)


def apply_norm(segments, stats: NormStats):
    """z-score segments; accepts a list of Segment/SlicedSegment or an array."""
    if isinstance(segments, np.ndarray):
        return (segments - stats.mean) / stats.sd
    out = []
    for s in segments:
        if isinstance(s, SlicedSegment):
            out.append(SlicedSegment((s.slices - stats.mean) / stats.sd, s.label))
        else:
            out.append(Segment((s.values - stats.mean) / stats.sd, s.parent_trace_id, s.offset_samples, s.label))
    return out


def invert_norm(segments, stats: NormStats):
    if isinstance(segments, np.ndarray):
        return segments * stats.sd + stats.mean
    return apply_norm(segments, NormStats(-stats.mean / stats.sd, 1.0 / stats.sd))


def _stack_values(segments) -> np.ndarray:
    if isinstance(segments, np.ndarray):
        return segments.ravel()
    parts = [np.ravel(s.slices if isinstance(s, SlicedSegment) else s.values) for s in segments]
    return np.concatenate(parts) if parts else np.empty(0)


@dataclass
class SegmentArrays:
    """Model-ready segments of many traces, ordered by (trace, offset)."""

    x: np.ndarray          # (n_segments, n_slices, slice_len)
    y: np.ndarray          # (n_segments,), -1 for unlabeled
    trace_index: np.ndarray  # position of the parent trace in the input list
    offsets: np.ndarray

    def __len__(self):
        return len(self.y)


def segment_traces(
    traces: Sequence[CurrentTrace],
    window_s: float = 1.0,
    overlap: float = 0.975,
    n_slices: int = 3,
    dtype=np.float64,
) -> SegmentArrays:
    xs, ys, idx, offs = [], [], [], []
    for i, tr in enumerate(traces):
        w, step, count = window_geometry(len(tr), tr.sampling_rate, window_s, overlap)
        if w < n_slices:
            raise ValueError(f"window of {w} samples cannot be cut into {n_slices} slices")
        length = w // n_slices
        mats = window_matrix(tr.samples, tr.sampling_rate, window_s, overlap)[:, : n_slices * length]
        xs.append(mats.reshape(count, n_slices, length).astype(dtype))
        ys.append(np.full(count, -1 if tr.label is None else tr.label))
        idx.append(np.full(count, i))
        offs.append(np.arange(count) * step)
    return SegmentArrays(np.concatenate(xs), np.concatenate(ys), np.concatenate(idx), np.concatenate(offs))


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_counts(n: int, ratios=(0.64, 0.16, 0.20)):
    n_val = _round_half_up(ratios[1] * n)
    n_test = _round_half_up(ratios[2] * n)
    return n - n_val - n_test, n_val, n_test


def split_indices(labels: Sequence[int], ratios=(0.64, 0.16, 0.20), seed: int = 0, min_per_class: int = 5):
    """Stratified trace-level split; returns three sorted index arrays."""
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ValueError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    parts = ([], [], [])
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        if len(members) < min_per_class:
            raise ValueError(f"class {c} has {len(members)} traces, need at least {min_per_class}")
        members = rng.permutation(members)
        n_train, n_val, _ = split_counts(len(members), ratios)
        parts[0].append(members[:n_train])
        parts[1].append(members[n_train:n_train + n_val])
        parts[2].append(members[n_train + n_val:])
    return tuple(np.sort(np.concatenate(p)) for p in parts)


def split_dataset(traceset: TraceSet, ratios=(0.64, 0.16, 0.20), seed: int = 0):
    if any(t.label is None for t in traceset.traces):
        raise ValueError("cannot split a set containing unlabeled traces")
    parts = split_indices(traceset.labels, ratios, seed)
    return tuple(TraceSet([traceset.traces[i] for i in p], traceset.class_names) for p in parts)
