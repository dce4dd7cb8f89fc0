import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chargescope.simulator import (
    DEVICES, MAX_EVENTS, MIN_EVENTS, BatteryProfile, DeviceProfile, Event, LeakageRamp, SimConfig, WebsiteSignature,
    age_signature, battery_current, leakage_coupling, make_signature, synth_dataset, synth_trace, with_device,
)


def small(**kw):
    base = dict(classes=3, traces_per_class=2, duration_s=2.0, fs=200)
    base.update(kw)
    return SimConfig(**base)


def test_battery_current_examples():
    p = BatteryProfile()
    assert battery_current(0.5, p) == p.i_max
    assert battery_current(1.0, p) == p.i_top
    expected = 50 + 950 * math.exp(-1.25)
    assert battery_current(0.9, p) == pytest.approx(expected, abs=1e-9)
    assert expected == pytest.approx(322.2, abs=0.05)


def test_battery_current_continuous_and_monotone():
    p = BatteryProfile()
    assert battery_current(p.soc_cv - 1e-12, p) == pytest.approx(battery_current(p.soc_cv, p), abs=1e-6)
    socs = np.linspace(p.soc_cv, 1.0, 400)
    vals = [battery_current(s, p) for s in socs]
    assert all(b <= a + 1e-12 for a, b in zip(vals, vals[1:]))


def test_battery_profile_invariants():
    with pytest.raises(ValueError):
        BatteryProfile(i_top=2000)
    with pytest.raises(ValueError):
        BatteryProfile(tau_cv=0)


def test_leakage_examples():
    iphone = DEVICES["iphone11"]
    assert leakage_coupling(0.75, iphone, "wireless") == 0
    for dev in DEVICES.values():
        for ch in ("wired", "wireless"):
            if dev.wireless_ramp is None and ch == "wireless":
                continue
            assert leakage_coupling(1.0, dev, ch) == 1
    assert leakage_coupling(0.85, iphone, "wireless") == pytest.approx(0.5)


@given(st.floats(0, 1), st.floats(0, 1), st.sampled_from(sorted(DEVICES)), st.sampled_from(["wired", "wireless"]))
def test_leakage_monotone(a, b, name, channel):
    dev = DEVICES[name]
    if dev.wireless_ramp is None and channel == "wireless":
        return
    lo, hi = sorted((a, b))
    assert leakage_coupling(lo, dev, channel) <= leakage_coupling(hi, dev, channel)
    ramp = dev.ramp(channel)
    if lo < ramp.soc_zero:
        assert leakage_coupling(lo, dev, channel) == 0


def test_builtin_ramps():
    assert DEVICES["iphone8"].wired_ramp == LeakageRamp(0.30, 0.50)
    assert DEVICES["iphone8"].wireless_ramp == LeakageRamp(0.70, 0.90)
    assert DEVICES["iphone6s"].wireless_ramp is None
    assert DEVICES["pixel4"].wireless_ramp == DEVICES["iphone11"].wireless_ramp
    with pytest.raises(ValueError):
        small(device=DEVICES["iphone6s"], channel="wireless")


def test_profile_invariants():
    with pytest.raises(ValueError):
        LeakageRamp(0.9, 0.8)
    with pytest.raises(ValueError):
        replace(DEVICES["iphone11"], gain=0)
    with pytest.raises(ValueError):
        replace(DEVICES["iphone11"], noise_sd_wireless=1.0, noise_sd_wired=2.0)


def test_signature_determinism_and_distinctness():
    a, b = make_signature(0, 42), make_signature(0, 42)
    assert a == b
    assert make_signature(1, 42).events != a.events
    assert make_signature(0, 43).events != a.events
    for c in range(20):
        sig = make_signature(c, 7)
        assert MIN_EVENTS <= len(sig.events) <= MAX_EVENTS
        assert all(0 <= e.start_s <= sig.load_time_s for e in sig.events)
        assert all(e.amplitude_ma > 0 for e in sig.events)


def test_signature_invariants():
    ev = Event(0.1, 0.1, 10.0)
    with pytest.raises(ValueError):
        WebsiteSignature(0, (ev,) * 2, 1.0)
    with pytest.raises(ValueError):
        WebsiteSignature(0, (Event(2.0, 0.1, 10.0),) * 3, 1.0)
    with pytest.raises(ValueError):
        WebsiteSignature(0, (Event(0.1, 0.1, -1.0),) * 3, 1.0)


def test_age_signature_examples():
    sig = make_signature(4, 1)
    assert age_signature(sig, 0.0, 9) == sig
    full = age_signature(sig, 1.0, 9)
    assert not set(full.events) & set(sig.events)
    ten = WebsiteSignature(0, tuple(Event(0.1 * i, 0.05, 20.0 + i) for i in range(10)), 1.0)
    half = age_signature(ten, 0.5, 3)
    assert len(set(half.events) & set(ten.events)) == 5
    assert age_signature(ten, 0.5, 3) == half
    with pytest.raises(ValueError):
        age_signature(ten, 1.5, 3)


@given(st.integers(0, 50), st.floats(0, 1), st.integers(0, 100))
@settings(max_examples=50)
def test_age_signature_counts(cls, drift, seed):
    sig = make_signature(cls, 5)
    aged = age_signature(sig, drift, seed)
    n = len(sig.events)
    kept = sum(a == b for a, b in zip(aged.events, sig.events))
    assert kept == n - math.floor(drift * n + 0.5)


def test_zero_coupling_hides_signature():
    cfg = small(soc=0.5)
    a = synth_trace(make_signature(0, 1), cfg, trace_seed=77)
    b = synth_trace(make_signature(1, 1), cfg, trace_seed=77)
    assert np.array_equal(a.samples, b.samples)


def test_trace_length_and_bounds():
    cfg = SimConfig(classes=1, traces_per_class=1)
    tr = synth_trace(make_signature(0, 0), cfg, trace_seed=1)
    assert len(tr) == 7000
    assert np.all(tr.samples >= 0) and np.all(np.isfinite(tr.samples))


def _power_at(samples, fs, hz):
    spec = np.abs(np.fft.rfft(samples - samples.mean())) ** 2
    freqs = np.fft.rfftfreq(len(samples), 1 / fs)
    peak = spec[np.argmin(np.abs(freqs - hz))]
    floor = np.median(spec[(freqs > 5) & (freqs < 40)])
    return peak / floor


def test_ripple_only_on_wireless():
    # at low SoC only battery current, ripple and noise remain
    cfg = SimConfig(classes=1, traces_per_class=1, duration_s=10, fs=700, soc=0.5)
    wl = synth_trace(make_signature(0, 0), cfg, 5)
    wd = synth_trace(make_signature(0, 0), replace(cfg, channel="wired"), 5)
    assert _power_at(wl.samples, 700, 11.0) > 100
    assert _power_at(wd.samples, 700, 11.0) < 20


def test_dataset_counts_and_determinism():
    default = SimConfig()
    assert default.classes * default.traces_per_class == 1000
    one_each = synth_dataset(small(classes=2, traces_per_class=1))
    assert sorted(t.label for t in one_each.traces) == [0, 1]
    a, b = synth_dataset(small()), synth_dataset(small())
    assert len(a.traces) == 6
    assert all(x == y for x, y in zip(a.traces, b.traces))
    seeds = {t.meta.seed for t in a.traces}
    assert len(seeds) == 6


def test_soc_schedule():
    cfg = small(soc=(1.0, 0.9), classes=2, traces_per_class=3)
    socs = [t.meta.soc_start for t in synth_dataset(cfg).traces]
    assert max(socs) == pytest.approx(1.0) and min(socs) == pytest.approx(0.9)


def test_label_independent_without_coupling():
    cfg = SimConfig(classes=4, traces_per_class=30, duration_s=1.0, fs=200, soc=0.5)
    ts = synth_dataset(cfg)
    means = np.array([[t.samples.mean() for t in ts.traces if t.label == c] for c in range(4)])
    sd = cfg.device.noise_sd("wireless") / math.sqrt(200)
    grand = means.mean()
    # class means of per-trace means: standard error sd / sqrt(30)
    assert np.all(np.abs(means.mean(axis=1) - grand) < 5 * sd / math.sqrt(30) + 1e-9)


def test_device_switch_keeps_signatures():
    cfg = small()
    other = with_device(cfg, "pixel4")
    assert other.device is DEVICES["pixel4"]
    assert other.signature_seed == cfg.signature_seed
    with pytest.raises(KeyError):
        with_device(cfg, "nokia")


def test_device_transform_is_name_seeded():
    dev = DeviceProfile("custom", LeakageRamp(0.8, 0.95), LeakageRamp(0.8, 0.9))
    twin = DeviceProfile("custom", LeakageRamp(0.8, 0.95), LeakageRamp(0.8, 0.9))
    assert np.array_equal(dev.amplitude_mask(), twin.amplitude_mask())
    assert not np.array_equal(dev.amplitude_mask(), replace(dev, name="other").amplitude_mask())
