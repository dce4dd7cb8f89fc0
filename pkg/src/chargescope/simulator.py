"""Synthetic charger-side current traces for website-loading activity.

Each trace is

    battery_current(soc) + alpha(soc) * gain * smooth(activity(t)) + ripple + noise

clamped at zero. ``activity`` is the sum of a website's event waveforms with
per-trace timing and amplitude jitter; ``alpha`` gates how much of it the
charger sees, depending on battery state of charge and charging channel.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple, Union

import numpy as np
from scipy.signal import lfilter

from .trace_model import CHANNELS, CurrentTrace, TraceMeta, TraceSet, default_class_names

MAX_EVENTS = 20
MIN_EVENTS = 3
SHAPES = ("rect", "exp_decay")


@dataclass(frozen=True)
class BatteryProfile:
    i_max: float = 1000.0
    i_top: float = 50.0
    soc_cv: float = 0.80
    tau_cv: float = 0.08
    capacity_mah: float = 3110.0

    def __post_init__(self):
        if not 0 < self.i_top < self.i_max:
            raise ValueError("need 0 < i_top < i_max")
        if not 0 < self.soc_cv < 1:
            raise ValueError("soc_cv must lie in (0, 1)")
        if self.tau_cv <= 0:
            raise ValueError("tau_cv must be positive")


@dataclass(frozen=True)
class LeakageRamp:
    soc_zero: float
    soc_full: float

    def __post_init__(self):
        if not 0 <= self.soc_zero < self.soc_full <= 1:
            raise ValueError("need 0 <= soc_zero < soc_full <= 1")


@dataclass(frozen=True)
class DeviceProfile:
    name: str
    wired_ramp: LeakageRamp
    wireless_ramp: Optional[LeakageRamp]  # None: no Qi support
    gain: float = 1.0
    smoothing_ms: float = 20.0
    ripple_hz: float = 11.0
    ripple_amp: float = 15.0
    noise_sd_wireless: float = 8.0
    noise_sd_wired: float = 3.0
    # width of the per-device multiplicative mask over event amplitudes
    mask_spread: float = 1.5
    # half-width (s) of the per-device shift applied to each event start
    timing_spread_s: float = 0.5

    def __post_init__(self):
        if self.gain <= 0:
            raise ValueError("gain must be positive")
        if not self.noise_sd_wireless >= self.noise_sd_wired >= 0:
            raise ValueError("need noise_sd_wireless >= noise_sd_wired >= 0")
        if self.smoothing_ms < 0 or self.ripple_amp < 0 or self.ripple_hz < 0:
            raise ValueError("smoothing, ripple amplitude and frequency must be non-negative")
        if not 0 <= self.mask_spread < 2:
            raise ValueError("mask_spread must lie in [0, 2)")
        if self.timing_spread_s < 0:
            raise ValueError("timing_spread_s must be non-negative")

    def ramp(self, channel: str) -> LeakageRamp:
        if channel == "wired":
            return self.wired_ramp
        if channel == "wireless":
            if self.wireless_ramp is None:
                raise ValueError(f"device {self.name!r} does not support wireless charging")
            return self.wireless_ramp
        raise ValueError(f"unknown channel {channel!r}")

    def noise_sd(self, channel: str) -> float:
        return self.noise_sd_wireless if channel == "wireless" else self.noise_sd_wired

    def _name_rng(self) -> np.random.Generator:
        digest = hashlib.sha256(self.name.encode("utf-8")).digest()
        return np.random.default_rng(int.from_bytes(digest[:8], "little"))

    def amplitude_mask(self) -> np.ndarray:
        """Per-event-index amplitude multipliers, fixed by the device name."""
        half = self.mask_spread / 2
        return self._name_rng().uniform(1 - half, 1 + half, MAX_EVENTS)

    def timing_offsets(self) -> np.ndarray:
        """Per-event-index start shifts (s), fixed by the device name."""
        rng = self._name_rng()
        rng.uniform(size=MAX_EVENTS)  # the amplitude mask's draws
        return rng.uniform(-1.0, 1.0, MAX_EVENTS) * self.timing_spread_s


DEVICES = {
    "iphone11": DeviceProfile(
        "iphone11", wired_ramp=LeakageRamp(0.80, 0.95), wireless_ramp=LeakageRamp(0.80, 0.90),
    ),
    "pixel4": DeviceProfile(
        "pixel4", wired_ramp=LeakageRamp(0.80, 0.95), wireless_ramp=LeakageRamp(0.80, 0.90),
        gain=1.6, smoothing_ms=45.0, noise_sd_wireless=10.0, noise_sd_wired=4.0,
    ),
    "iphone8": DeviceProfile(
        "iphone8", wired_ramp=LeakageRamp(0.30, 0.50), wireless_ramp=LeakageRamp(0.70, 0.90),
        gain=0.8, smoothing_ms=30.0,
    ),
    "iphone6s": DeviceProfile(
        "iphone6s", wired_ramp=LeakageRamp(0.30, 0.50), wireless_ramp=None,
        gain=0.7, smoothing_ms=35.0,
    ),
}


@dataclass(frozen=True)
class Event:
    start_s: float
    duration_s: float
    amplitude_ma: float
    shape: str = "rect"


@dataclass(frozen=True)
class WebsiteSignature:
    class_id: int
    events: Tuple[Event, ...]
    load_time_s: float

    def __post_init__(self):
        if not MIN_EVENTS <= len(self.events) <= MAX_EVENTS:
            raise ValueError(f"signature needs {MIN_EVENTS}..{MAX_EVENTS} events, got {len(self.events)}")
        for ev in self.events:
            if not 0 <= ev.start_s <= self.load_time_s:
                raise ValueError("event start outside [0, load_time_s]")
            if ev.amplitude_ma <= 0 or ev.duration_s <= 0:
                raise ValueError("event amplitude and duration must be positive")
            if ev.shape not in SHAPES:
                raise ValueError(f"unknown event shape {ev.shape!r}")


@dataclass(frozen=True)
class Jitter:
    shift_max_s: float = 0.3
    event_jitter_s: float = 0.05
    amp_jitter_frac: float = 0.1


SocSpec = Union[float, Tuple[float, float]]


@dataclass(frozen=True)
class SimConfig:
    """Dataset-level simulation settings.

    ``soc`` is either a constant state of charge or a ``(first, last)`` pair
    interpolated linearly over collection order.
    """

    classes: int = 20
    traces_per_class: int = 50
    duration_s: float = 10.0
    fs: int = 700
    device: DeviceProfile = field(default_factory=lambda: DEVICES["iphone11"])
    channel: str = "wireless"
    soc: SocSpec = 1.0
    signature_seed: int = 0
    noise_seed: int = 0
    jitter: Jitter = field(default_factory=Jitter)
    drift: float = 0.0
    drift_seed: int = 1
    battery: BatteryProfile = field(default_factory=BatteryProfile)

    def __post_init__(self):
        if self.classes < 1 or self.traces_per_class < 1 or self.fs < 1 or self.duration_s <= 0:
            raise ValueError("classes, traces_per_class, fs and duration_s must be positive")
        if self.channel not in CHANNELS:
            raise ValueError(f"channel must be one of {CHANNELS}")
        if not 0 <= self.drift <= 1:
            raise ValueError("drift must lie in [0, 1]")
        for s in self.soc_range():
            if not 0 <= s <= 1:
                raise ValueError("soc must lie in [0, 1]")
        self.device.ramp(self.channel)

    def soc_range(self) -> Tuple[float, float]:
        if isinstance(self.soc, (tuple, list)):
            return float(self.soc[0]), float(self.soc[1])
        return float(self.soc), float(self.soc)

    def soc_at(self, index: int, total: int) -> float:
        a, b = self.soc_range()
        if total <= 1 or a == b:
            return a
        return a + (b - a) * index / (total - 1)


def battery_current(soc: float, profile: BatteryProfile = BatteryProfile()) -> float:
    """Charger current into the battery (mA) for a CC/CV charge profile."""
    if not 0 <= soc <= 1:
        raise ValueError("soc must lie in [0, 1]")
    if soc < profile.soc_cv:
        return profile.i_max
    if soc >= 1:
        return profile.i_top
    decay = math.exp(-(soc - profile.soc_cv) / profile.tau_cv)
    return profile.i_top + (profile.i_max - profile.i_top) * decay


def leakage_coupling(soc: float, device: DeviceProfile, channel: str) -> float:
    if not 0 <= soc <= 1:
        raise ValueError("soc must lie in [0, 1]")
    ramp = device.ramp(channel)
    if soc <= ramp.soc_zero:
        return 0.0
    if soc >= ramp.soc_full:
        return 1.0
    return (soc - ramp.soc_zero) / (ramp.soc_full - ramp.soc_zero)


# signature prior
LOAD_TIME_S = (2.0, 5.0)
EVENT_COUNT = (14, 20)
EVENT_DURATION_S = (0.03, 0.3)
EVENT_AMPLITUDE_MA = (10.0, 60.0)


def _draw_event(rng: np.random.Generator, load_time: float) -> Event:
    return Event(
        start_s=float(rng.uniform(0.0, load_time)),
        duration_s=float(rng.uniform(*EVENT_DURATION_S)),
        amplitude_ma=float(rng.uniform(*EVENT_AMPLITUDE_MA)),
        shape=SHAPES[int(rng.integers(2))],
    )


def make_signature(class_id: int, signature_seed: int) -> WebsiteSignature:
    if class_id < 0:
        raise ValueError("class_id must be non-negative")
    rng = np.random.default_rng([signature_seed, class_id])
    load_time = float(rng.uniform(*LOAD_TIME_S))
    n_events = int(rng.integers(EVENT_COUNT[0], EVENT_COUNT[1] + 1))
    events = sorted((_draw_event(rng, load_time) for _ in range(n_events)), key=lambda e: e.start_s)
    return WebsiteSignature(class_id, tuple(events), load_time)


def age_signature(sig: WebsiteSignature, drift: float, seed: int) -> WebsiteSignature:
    """Replace ``round(drift * n_events)`` events with fresh draws from the prior.

    Event order (and so the device amplitude mask index) is kept.
    """
    if not 0 <= drift <= 1:
        raise ValueError("drift must lie in [0, 1]")
    n = len(sig.events)
    k = int(math.floor(drift * n + 0.5))
    if k == 0:
        return sig
    rng = np.random.default_rng([seed, sig.class_id, 0xA9E])
    chosen = rng.choice(n, size=k, replace=False)
    events = list(sig.events)
    for i in sorted(chosen):
        events[i] = _draw_event(rng, sig.load_time_s)
    return WebsiteSignature(sig.class_id, tuple(events), sig.load_time_s)


def activity_waveform(
    sig: WebsiteSignature,
    t: np.ndarray,
    *,
    delay_s: float = 0.0,
    start_offsets: Optional[np.ndarray] = None,
    amp_scale: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Sum of event waveforms sampled at times ``t`` (mA, before device gain)."""
    out = np.zeros_like(t, dtype=np.float64)
    for k, ev in enumerate(sig.events):
        start = ev.start_s + delay_s + (0.0 if start_offsets is None else start_offsets[k])
        amp = ev.amplitude_ma * (1.0 if amp_scale is None else amp_scale[k])
        rel = t - start
        if ev.shape == "rect":
            out += np.where((rel >= 0) & (rel < ev.duration_s), amp, 0.0)
        else:
            live = (rel >= 0) & (rel < 5 * ev.duration_s)
            out[live] += amp * np.exp(-rel[live] / ev.duration_s)
    return out


def _lowpass_first_order(x: np.ndarray, fs: int, tau_ms: float) -> np.ndarray:
    if tau_ms <= 0:
        return x
    a = 1.0 - math.exp(-1000.0 / (fs * tau_ms))
    return lfilter([a], [1.0, a - 1.0], x)


def synth_trace(
    sig: WebsiteSignature,
    config: SimConfig,
    trace_seed: int,
    *,
    soc: Optional[float] = None,
    label: Optional[int] = None,
) -> CurrentTrace:
    """One charger current trace while the page behind ``sig`` loads.

    Timing jitter, amplitude jitter and sensor noise come from independent
    streams derived from ``trace_seed``, so with zero coupling the samples do
    not depend on the signature at all.
    """
    if soc is None:
        soc = config.soc_range()[0]
    dev = config.device
    n = int(round(config.duration_s * config.fs))
    t = np.arange(n) / config.fs

    timing_rng, amp_rng, noise_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(trace_seed).spawn(3)
    )
    alpha = leakage_coupling(soc, dev, config.channel)
    base = battery_current(soc, config.battery)

    x = np.full(n, base)
    if alpha > 0:
        j = config.jitter
        n_ev = len(sig.events)
        delay = timing_rng.uniform(0.0, j.shift_max_s)
        offsets = timing_rng.normal(0.0, j.event_jitter_s, n_ev) + dev.timing_offsets()[:n_ev]
        amp_scale = dev.amplitude_mask()[:n_ev] * np.clip(
            1.0 + j.amp_jitter_frac * amp_rng.standard_normal(n_ev), 0.0, None
        )
        act = activity_waveform(sig, t, delay_s=delay, start_offsets=offsets, amp_scale=amp_scale)
        x += alpha * dev.gain * _lowpass_first_order(act, config.fs, dev.smoothing_ms)
    if config.channel == "wireless" and dev.ripple_amp > 0:
        x += dev.ripple_amp * np.sin(2 * np.pi * dev.ripple_hz * t)
    sd = dev.noise_sd(config.channel)
    if sd > 0:
        x += sd * noise_rng.standard_normal(n)
    np.maximum(x, 0.0, out=x)

    meta = TraceMeta(
        device_profile=dev.name, channel=config.channel, soc_start=float(soc), seed=int(trace_seed),
    )
    return CurrentTrace(x, config.fs, sig.class_id if label is None else label, meta)


def trace_seed_for(noise_seed: int, counter: int) -> int:
    state = np.random.SeedSequence([noise_seed, counter]).generate_state(2, np.uint32)
    return int(state[0]) | (int(state[1]) << 32)


def dataset_signatures(config: SimConfig) -> list:
    sigs = [make_signature(c, config.signature_seed) for c in range(config.classes)]
    if config.drift > 0:
        sigs = [age_signature(s, config.drift, config.drift_seed) for s in sigs]
    return sigs


def synth_dataset(config: SimConfig) -> TraceSet:
    """All traces of a collection run, ordered by class then repetition.

    Collection runs in rounds (every site once per round); the state of
    charge schedule and trace seeds follow that collection order.
    """
    sigs = dataset_signatures(config)
    total = config.classes * config.traces_per_class
    traces = []
    for c in range(config.classes):
        for r in range(config.traces_per_class):
            order = r * config.classes + c
            traces.append(
                synth_trace(
                    sigs[c], config, trace_seed_for(config.noise_seed, order),
                    soc=config.soc_at(order, total),
                )
            )
    return TraceSet(traces, default_class_names(config.classes))


def with_device(config: SimConfig, device: Union[str, DeviceProfile]) -> SimConfig:
    if isinstance(device, str):
        device = DEVICES[device]
    return replace(config, device=device)
