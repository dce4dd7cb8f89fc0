from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chargescope.preprocess import (
    NormStats, Segment, apply_norm, fit_norm, invert_norm, segment_traces, slice_segment, sliding_windows,
    split_counts, split_dataset, split_indices, window_geometry,
)
from chargescope.trace_model import CurrentTrace, TraceSet, default_class_names


def trace(n, fs=700, label=0):
    return CurrentTrace(np.arange(n, dtype=float), fs, label)


def brute_offsets(length, w, overlap):
    """Enumerate window starts with exact rational arithmetic."""
    step = max(1, int(w * (1 - Fraction(str(overlap)))))
    offsets, o = [], 0
    while o + w <= length:
        offsets.append(o)
        o += step
    return step, offsets


@pytest.mark.parametrize("length, fs, overlap, step, count", [
    (7000, 700, 0.975, 17, 371),
    (1250, 500, 0.975, 12, 63),
    (1250, 500, 0.90, 50, 16),
])
def test_window_examples(length, fs, overlap, step, count):
    segs = sliding_windows(trace(length, fs), 1.0, overlap)
    assert window_geometry(length, fs, 1.0, overlap) == (fs, step, count)
    assert len(segs) == count
    assert [s.offset_samples for s in segs] == brute_offsets(length, fs, overlap)[1]


def test_single_window_and_errors():
    segs = sliding_windows(trace(700), 1.0, 0.975)
    assert len(segs) == 1 and segs[0].offset_samples == 0
    with pytest.raises(ValueError):
        sliding_windows(trace(699), 1.0, 0.5)
    with pytest.raises(ValueError):
        sliding_windows(trace(800), 1.0, 1.0)


@settings(max_examples=200)
@given(st.integers(1, 400), st.integers(0, 600), st.sampled_from([0.0, 0.1, 0.25, 0.5, 0.9, 0.95, 0.975, 0.99]))
def test_window_count_matches_enumeration(w, extra, overlap):
    length = w + extra
    step, offsets = brute_offsets(length, w, overlap)
    segs = sliding_windows(trace(length, fs=w), 1.0, overlap)
    assert [s.offset_samples for s in segs] == offsets
    assert all(np.array_equal(s.values, np.arange(o, o + w)) for s, o in zip(segs, offsets))


@pytest.mark.parametrize("w, slice_len", [(700, 233), (699, 233), (500, 166)])
def test_slice_examples(w, slice_len):
    seg = Segment(np.arange(w, dtype=float), 0, 0, 1)
    sl = slice_segment(seg)
    assert sl.slices.shape == (3, slice_len)
    assert np.array_equal(sl.slices.ravel(), seg.values[: 3 * slice_len])
    assert sl.label == 1


@given(st.integers(3, 2000), st.integers(1, 6))
def test_slice_concatenation(w, n):
    if w < n:
        return
    seg = Segment(np.random.default_rng(w).normal(size=w), 0, 0, None)
    sl = slice_segment(seg, n)
    assert np.array_equal(sl.slices.ravel(), seg.values[: n * (w // n)])


def test_norm_examples():
    rng = np.random.default_rng(0)
    x = rng.normal(50, 7, size=(40, 3, 20))
    z = apply_norm(x, fit_norm(x))
    assert abs(z.mean()) < 1e-9 and abs(z.std() - 1) < 1e-9
    with pytest.raises(ValueError):
        fit_norm(np.full((4, 3, 5), 2.0))
    assert apply_norm(np.array([12.0]), NormStats(10, 2)).tolist() == [1.0]
    segs = sliding_windows(trace(900, fs=300), 1.0, 0.5)
    assert isinstance(fit_norm(segs), NormStats)


@given(st.floats(-1e3, 1e3), st.floats(1e-3, 1e3), st.lists(st.floats(-1e4, 1e4), min_size=1, max_size=30))
def test_norm_round_trip(mean, sd, values):
    stats = NormStats(mean, sd)
    x = np.array(values)
    assert np.allclose(invert_norm(apply_norm(x, stats), stats), x, rtol=0, atol=1e-9 * max(1, np.abs(x).max()))


def test_segment_traces_layout():
    traces = [trace(600, 300, label=2), trace(900, 300, label=None)]
    sa = segment_traces(traces, 1.0, 0.5, 3)
    assert sa.x.shape == (3 + 5, 3, 100)
    assert sa.y.tolist() == [2, 2, 2, -1, -1, -1, -1, -1]
    assert sa.trace_index.tolist() == [0, 0, 0, 1, 1, 1, 1, 1]
    assert sa.offsets.tolist() == [0, 150, 300, 0, 150, 300, 450, 600]


def test_split_counts_examples():
    assert split_counts(50) == (32, 8, 10)
    assert split_counts(10) == (6, 2, 2)
    labels = np.repeat(np.arange(20), 50)
    parts = split_indices(labels, seed=3)
    assert [len(p) for p in parts] == [640, 160, 200]
    again = split_indices(labels, seed=3)
    assert all(np.array_equal(a, b) for a, b in zip(parts, again))


def test_split_errors():
    with pytest.raises(ValueError):
        split_indices(np.repeat(np.arange(2), 10), (0.5, 0.2, 0.2))
    with pytest.raises(ValueError):
        split_indices(np.repeat(np.arange(2), 4))


def test_split_dataset_tracesets():
    ts = TraceSet([trace(10, 10, label=c) for c in range(3) for _ in range(10)], default_class_names(3))
    tr, va, te = split_dataset(ts, seed=1)
    assert (len(tr), len(va), len(te)) == (18, 6, 6)
    for part in (tr, va, te):
        counts = np.bincount(part.labels, minlength=3)
        assert len(set(counts)) == 1


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 6), st.integers(5, 20), st.integers(0, 10_000))
def test_no_segment_leakage(classes, per_class, seed):
    labels = np.repeat(np.arange(classes), per_class)
    parts = split_indices(labels, seed=seed)
    assert sum(len(p) for p in parts) == len(labels)
    assert len(np.unique(np.concatenate(parts))) == len(labels)
    # every segment inherits its parent's partition
    traces = [trace(60, 20, label=int(c)) for c in labels]
    owner = np.empty(len(labels), dtype=int)
    for k, p in enumerate(parts):
        owner[p] = k
    for k, p in enumerate(parts):
        sa = segment_traces([traces[i] for i in p], 1.0, 0.5, 2)
        assert set(owner[p[sa.trace_index]]) <= {k}
