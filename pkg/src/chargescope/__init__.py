"""Website fingerprinting from smartphone charger current.

Subpackages and modules:

* ``trace_model``: current traces, trace files and dataset manifests
* ``simulator``: synthetic charger current with SoC-gated leakage
* ``preprocess``: sliding windows, temporal slices, normalization, splits
* ``nn``: the CNN + LSTM segment classifier
* ``baseline``: FFT features and a random forest
* ``evaluation``: majority voting, rank-k accuracy, report files
* ``countermeasures``: low-pass filtering and charge capping
* ``runner``: configured end-to-end experiments
"""

from .trace_model import CurrentTrace, TraceMeta, TraceSet, read_trace, write_trace
from .simulator import DEVICES, SimConfig, synth_dataset, synth_trace
from .runner import load_settings, run_experiment

__all__ = [
    "CurrentTrace", "TraceMeta", "TraceSet", "read_trace", "write_trace",
    "DEVICES", "SimConfig", "synth_dataset", "synth_trace",
    "load_settings", "run_experiment",
]
__version__ = "0.1.0"
