"""
Countermeasures
===============

A 60 Hz low-pass filter on the charger's current reporting, and a charging
policy that stops at 80 % so the battery never reaches the leaky region.
"""

import numpy as np

from chargescope.countermeasures import charge_cap_policy, frequency_response, lowpass_filter, windowed_sinc
from chargescope.runner import load_settings, run_experiment
from chargescope.simulator import SimConfig, make_signature, synth_trace

##############################################################################
# Filter response
# ---------------

taps = windowed_sinc(60.0, 700)
for f in (11, 30, 60, 100, 200):
    gain = np.abs(frequency_response(taps, [f], 700))[0]
    print(f"{f:4d} Hz: {20 * np.log10(max(gain, 1e-12)):7.1f} dB")

##############################################################################
# What the filter removes from a trace
# ------------------------------------

cfg = SimConfig(classes=1, traces_per_class=1, duration_s=5.0)
tr = synth_trace(make_signature(0, 0), cfg, trace_seed=2)
smooth = lowpass_filter(tr)
print(f"sample-to-sample sd: raw {np.diff(tr.samples).std():.2f} mA, filtered {np.diff(smooth.samples).std():.2f} mA")

##############################################################################
# Charge cap
# ----------

print("soc before cap:", cfg.soc, "after:", charge_cap_policy(cfg).soc)

##############################################################################
# Attack accuracy under each defence
# ----------------------------------

s = load_settings(text="""
[experiment]
scenario = countermeasure
classifier = forest
[sim]
classes = 10
traces_per_class = 15
""")
for name, rep in run_experiment(settings=s, out_dir="runs/demo_countermeasures").items():
    print(f"{name}: rank-1 {rep.rank1_acc:.2f}")
