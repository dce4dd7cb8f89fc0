import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chargescope.baseline import (
    Forest, Tree, fft_magnitude, fft_radix2, load_forest, next_pow2, oob_accuracy, rf_predict, rf_proba, rf_train,
    save_forest, spectrum_matrix,
)
from chargescope.trace_model import CurrentTrace


def direct_dft(x):
    n = len(x)
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n) @ x


def test_dc_and_tone():
    mag = fft_magnitude(np.full(8, 3.0)).magnitudes
    assert mag[0] == pytest.approx(24.0, abs=1e-9)
    assert np.all(np.abs(mag[1:]) < 1e-9)
    n = 16
    tone = np.sin(2 * np.pi * 2 * np.arange(n) / n)
    mag = fft_magnitude(tone).magnitudes
    assert len(mag) == n // 2 + 1
    assert int(np.argmax(mag)) == 2 and mag[2] == pytest.approx(n / 2, abs=1e-9)


@settings(max_examples=40)
@given(st.integers(0, 9), st.integers(0, 10_000))
def test_matches_direct_dft_and_round_trips(log_n, seed):
    x = np.random.default_rng(seed).normal(size=2 ** log_n) + 1j * np.random.default_rng(seed + 1).normal(size=2 ** log_n)
    X = fft_radix2(x)
    assert np.allclose(X, direct_dft(x), atol=1e-9 * max(1, np.abs(X).max()))
    back = fft_radix2(X, inverse=True)
    assert np.max(np.abs(back - x)) <= 1e-9 * max(1, np.abs(x).max())


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=300))
def test_parseval(values):
    x = np.array(values)
    n = next_pow2(len(x))
    X = fft_radix2(np.pad(x, (0, n - len(x))))
    energy = np.sum(x ** 2)
    assert np.sum(np.abs(X) ** 2) / n == pytest.approx(energy, rel=1e-9, abs=1e-9)


def test_padding_and_errors():
    tr = CurrentTrace(np.ones(700), 700, 0)
    feats = fft_magnitude(tr)
    assert feats.n_fft == 1024 and feats.bin_hz == pytest.approx(700 / 1024)
    with pytest.raises(ValueError):
        fft_radix2(np.ones(6))
    with pytest.raises(ValueError):
        fft_magnitude(np.ones(10), n_fft=8)
    assert spectrum_matrix([np.ones(5), np.ones(9)]).shape == (2, 9)


def clusters(n=40, seed=0):
    rng = np.random.default_rng(seed)
    x = np.concatenate([rng.normal(-5, 0.5, n), rng.normal(5, 0.5, n)])[:, None]
    return x, np.repeat([0, 1], n)


def test_separable_clusters():
    x, y = clusters()
    forest = rf_train(x, y, n_trees=25, seed=1)
    assert oob_accuracy(forest, x, y) == 1.0
    assert [r[0] for r in rf_predict(forest, x)] == y.tolist()


def test_memorizes_training_data():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(60, 12))
    y = rng.integers(0, 4, 60)
    forest = rf_train(x, y, n_trees=30, seed=3)
    assert np.mean(rf_proba(forest, x).argmax(axis=1) == y) == 1.0


def test_determinism_and_tree_prefix():
    x, y = clusters(15, seed=4)
    a, b = rf_train(x, y, n_trees=5, seed=9), rf_train(x, y, n_trees=5, seed=9)
    big = rf_train(x, y, n_trees=8, seed=9)
    for t1, t2, t3 in zip(a.trees, b.trees, big.trees):
        for f in ("feature", "threshold", "left", "right", "hist"):
            assert np.array_equal(getattr(t1, f), getattr(t2, f))
            assert np.array_equal(getattr(t1, f), getattr(t3, f))


def test_tree_invariants():
    rng = np.random.default_rng(5)
    x, y = rng.normal(size=(50, 6)), rng.integers(0, 3, 50)
    forest = rf_train(x, y, n_trees=4, seed=0, max_depth=3)
    for t in forest.trees:
        internal = t.feature >= 0
        assert np.all(t.left[internal] >= 0) and np.all(t.right[internal] >= 0)
        assert np.array_equal(t.hist[internal], t.hist[t.left[internal]] + t.hist[t.right[internal]])
        assert t.hist[0].sum() == 50


def test_single_class_rejected():
    with pytest.raises(ValueError):
        rf_train(np.ones((4, 2)), [1, 1, 1, 1])


def leaf(hist):
    return Tree(np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]), np.array([hist]))


def test_prediction_examples():
    tie = Forest([leaf([5, 5])], 2, 1)
    assert rf_predict(tie, [[0.0]]) == [[0, 1]]
    unanimous = Forest([leaf([0, 4, 0])] * 3, 3, 1)
    assert rf_predict(unanimous, [[0.0]])[0][0] == 1
    votes = Forest([leaf([3, 0]), leaf([2, 0]), leaf([0, 7])], 2, 1)
    assert rf_predict(votes, [[0.0]]) == [[0, 1]]
    assert np.allclose(rf_proba(votes, [[0.0]]), [[2 / 3, 1 / 3]])
    with pytest.raises(ValueError):
        rf_predict(votes, [[0.0, 1.0]])


def test_tree_order_invariance():
    rng = np.random.default_rng(6)
    x, y = rng.normal(size=(40, 5)), rng.integers(0, 3, 40)
    forest = rf_train(x, y, n_trees=7, seed=2)
    flipped = Forest(forest.trees[::-1], forest.n_classes, forest.n_features)
    assert np.allclose(rf_proba(forest, x), rf_proba(flipped, x), rtol=0, atol=1e-15)


def test_forest_file_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    x, y = rng.normal(size=(30, 4)), rng.integers(0, 3, 30)
    forest = rf_train(x, y, n_trees=3, seed=1)
    save_forest(forest, tmp_path / "f.json")
    back = load_forest(tmp_path / "f.json")
    assert np.array_equal(rf_proba(back, x), rf_proba(forest, x))
    save_forest(back, tmp_path / "g.json")
    assert (tmp_path / "f.json").read_bytes() == (tmp_path / "g.json").read_bytes()
