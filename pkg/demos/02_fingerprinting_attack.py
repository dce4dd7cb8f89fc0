"""
Fingerprinting websites from charger current
============================================

Runs the attack end to end on a small simulated collection, first with the
frequency-domain random forest and then with the CNN+LSTM, and shows the
effect of battery state of charge. The settings are scaled down so the
script finishes in a few minutes; ``chargescope attack --full`` runs the
full-size experiment.
"""

from chargescope.runner import load_settings, run_experiment

CONFIG = """
[experiment]
scenario = {scenario}
classifier = {classifier}
[sim]
classes = 10
traces_per_class = 15
[model]
conv_filters = 16,16,16
lstm_units = 32
dense_units = 32
[train]
max_epochs = 15
[scenario]
socs = 0.5,0.9,1.0
"""

##############################################################################
# Random forest over trace spectra
# --------------------------------

s = load_settings(text=CONFIG.format(scenario="attack", classifier="forest"))
report = run_experiment(settings=s, out_dir="runs/demo_forest")["attack"]
print(f"forest: rank-1 {report.rank1_acc:.2f}, rank-2 {report.rank2_acc:.2f} (chance 0.10)")

##############################################################################
# CNN + LSTM over overlapping one-second windows
# ----------------------------------------------
#
# Every window of a test trace votes; the trace takes the majority class.

s = load_settings(text=CONFIG.format(scenario="attack", classifier="cnn"))
report = run_experiment(settings=s, out_dir="runs/demo_cnn")["attack"]
print(f"cnn: rank-1 {report.rank1_acc:.2f}, rank-2 {report.rank2_acc:.2f}")
print(report.confusion)

##############################################################################
# State of charge
# ---------------
#
# Below the leakage ramp the model sees only battery current and noise.

s = load_settings(text=CONFIG.format(scenario="soc_sweep", classifier="forest"))
for name, rep in run_experiment(settings=s, out_dir="runs/demo_soc").items():
    print(f"{name}: rank-1 {rep.rank1_acc:.2f}")
