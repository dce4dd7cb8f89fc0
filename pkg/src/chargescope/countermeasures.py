"""Defenses: low-pass filtering of collected traces and a charge-cap policy."""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .simulator import SimConfig
from .trace_model import CurrentTrace

DEFAULT_TAPS = 101


def windowed_sinc(cutoff_hz: float, fs: float, n_taps: int = DEFAULT_TAPS) -> np.ndarray:
    """Hamming-windowed sinc low-pass taps, normalized to unity DC gain."""
    if n_taps < 1 or n_taps % 2 == 0:
        raise ValueError("n_taps must be a positive odd number")
    if not 0 < cutoff_hz < fs / 2:
        raise ValueError(f"cutoff {cutoff_hz} Hz must lie strictly between 0 and Nyquist ({fs / 2} Hz)")
    m = np.arange(n_taps) - (n_taps - 1) / 2
    fc = cutoff_hz / fs
    h = 2 * fc * np.sinc(2 * fc * m) * np.hamming(n_taps)
    return h / h.sum()


def frequency_response(taps: np.ndarray, freq_hz, fs: float) -> np.ndarray:
    """Magnitude of the filter response at the given frequencies."""
    f = np.atleast_1d(np.asarray(freq_hz, dtype=np.float64))
    n = np.arange(len(taps))
    return np.abs(np.exp(-2j * np.pi * np.outer(f / fs, n)) @ taps)


def lowpass_samples(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Linear-phase filtering with the group delay removed; output length = input length.

    Edges are extended by reflection so the first and last samples see data
    on both sides.
    """
    x = np.asarray(x, dtype=np.float64)
    half = (len(taps) - 1) // 2
    if len(x) == 0:
        return x.copy()
    padded = np.pad(x, half, mode="reflect")
    return np.convolve(padded, taps, mode="valid")


def lowpass_filter(trace: CurrentTrace, cutoff_hz: float = 60.0, n_taps: int = DEFAULT_TAPS) -> CurrentTrace:
    taps = windowed_sinc(cutoff_hz, trace.sampling_rate, n_taps)
    out = lowpass_samples(trace.samples, taps)
    return replace(trace, samples=out, meta=replace(trace.meta, filtered=True))


def charge_cap_policy(config: SimConfig, cap: float = 0.80) -> SimConfig:
    """Never let the battery charge past ``cap``: clamp the configured state of charge."""
    if not 0 < cap <= 1:
        raise ValueError("cap must lie in (0, 1]")
    lo, hi = config.soc_range()
    if hi <= cap and lo <= cap:
        return config
    if isinstance(config.soc, (tuple, list)):
        return replace(config, soc=(min(lo, cap), min(hi, cap)))
    return replace(config, soc=min(lo, cap))
