"""
The simulated charging channel
==============================

Walks through what a synthetic charger-current trace is made of and why the
state of charge decides whether anything leaks.
"""

import numpy as np

from chargescope.baseline import fft_magnitude
from chargescope.simulator import (
    DEVICES, BatteryProfile, SimConfig, battery_current, leakage_coupling, make_signature, synth_trace,
)

##############################################################################
# Battery current
# ---------------
#
# Constant current up to the knee, then an exponential decay towards the
# topping current.

profile = BatteryProfile()
for soc in (0.5, 0.8, 0.85, 0.9, 0.95, 1.0):
    print(f"soc {soc:.2f}: {battery_current(soc, profile):7.1f} mA")

##############################################################################
# Leakage gating
# --------------
#
# Page-load activity only reaches the charger once the battery is nearly
# full. Each device has its own ramp per channel.

for name, dev in DEVICES.items():
    row = []
    for ch in ("wired", "wireless"):
        if ch == "wireless" and dev.wireless_ramp is None:
            row.append(f"{ch}: n/a")
            continue
        row.append(f"{ch}: " + " ".join(f"{leakage_coupling(s, dev, ch):.2f}" for s in (0.5, 0.8, 0.9, 1.0)))
    print(f"{name:9s}", " | ".join(row))

##############################################################################
# Two websites, same noise
# ------------------------
#
# With equal trace seeds the only difference between two traces is the
# website signature. At soc 0.5 that difference disappears entirely.

for soc in (1.0, 0.5):
    cfg = SimConfig(classes=2, traces_per_class=1, duration_s=5.0, fs=700, soc=soc)
    a = synth_trace(make_signature(0, cfg.signature_seed), cfg, trace_seed=3)
    b = synth_trace(make_signature(1, cfg.signature_seed), cfg, trace_seed=3)
    print(f"soc {soc}: max |a - b| = {np.abs(a.samples - b.samples).max():.2f} mA")

##############################################################################
# The wireless ripple
# -------------------
#
# Wireless traces carry an 11 Hz component that wired traces lack.

for channel in ("wireless", "wired"):
    cfg = SimConfig(classes=1, traces_per_class=1, duration_s=10.0, fs=700, soc=0.5, channel=channel)
    spec = fft_magnitude(synth_trace(make_signature(0, 0), cfg, trace_seed=1))
    freqs = spec.bin_hz * np.arange(len(spec.magnitudes))
    band = (freqs > 5) & (freqs < 100)
    at_11 = spec.magnitudes[np.argmin(np.abs(freqs - 11.0))]
    print(f"{channel:8s}: 11 Hz bin is {at_11 / np.median(spec.magnitudes[band]):.1f}x the 5-100 Hz median")
