"""Current traces: in-memory representation, text file format and trace surgery.

A trace file is UTF-8 text with LF endings::

    # chargescope-trace v1
    # label=3
    # device=iphone11
    # channel=wireless
    # fs_hz=700
    # soc_start=1.0
    # seed=1234            (optional)
    # collected_at=...     (optional)
    52.25
    51.0
    ...

Sample values are milliamps, written with the shortest decimal that
round-trips to the same float.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

MAGIC = "# chargescope-trace v1"
CHANNELS = ("wireless", "wired")
UNLABELED = "unlabeled"
MANIFEST_COLUMNS = ["path", "label", "device", "channel", "fs_hz", "soc_start"]


class TraceFormatError(ValueError):
    """Raised when a trace or manifest file cannot be parsed."""

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


@dataclass(frozen=True)
class TraceMeta:
    device_profile: str = "unknown"
    channel: str = "wireless"
    soc_start: float = 1.0
    seed: Optional[int] = None
    collected_at: Optional[str] = None
    # set by countermeasures; filtered traces may ring below zero
    filtered: bool = False

    def __post_init__(self):
        if self.channel not in CHANNELS:
            raise ValueError(f"channel must be one of {CHANNELS}, got {self.channel!r}")
        if not 0.0 <= self.soc_start <= 1.0:
            raise ValueError(f"soc_start must lie in [0, 1], got {self.soc_start}")
        if self.seed is not None and not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")


@dataclass(frozen=True, eq=False)
class CurrentTrace:
    """A fixed-rate series of charger current samples in mA.

    ``label`` is a class index, or ``None`` for an unlabeled (victim) trace.
    """

    samples: np.ndarray
    sampling_rate: int
    label: Optional[int] = None
    meta: TraceMeta = field(default_factory=TraceMeta)

    def __post_init__(self):
        x = np.array(self.samples, dtype=np.float64)
        if x.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if not isinstance(self.sampling_rate, (int, np.integer)) or self.sampling_rate <= 0:
            raise ValueError(f"sampling_rate must be a positive integer, got {self.sampling_rate!r}")
        if not np.all(np.isfinite(x)):
            raise ValueError("samples must be finite")
        if not self.meta.filtered and np.any(x < 0):
            raise ValueError("samples must be non-negative")
        if self.label is not None and (not isinstance(self.label, (int, np.integer)) or self.label < 0):
            raise ValueError(f"label must be a non-negative integer or None, got {self.label!r}")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sampling_rate", int(self.sampling_rate))
        if self.label is not None:
            object.__setattr__(self, "label", int(self.label))

    def __len__(self):
        return len(self.samples)

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sampling_rate

    def __eq__(self, other):
        if not isinstance(other, CurrentTrace):
            return NotImplemented
        return (
            self.sampling_rate == other.sampling_rate
            and self.label == other.label
            and self.meta == other.meta
            and np.array_equal(self.samples, other.samples)
        )

    __hash__ = None


@dataclass
class TraceSet:
    traces: list
    class_names: list

    def __post_init__(self):
        n = len(self.class_names)
        rates = {t.sampling_rate for t in self.traces}
        if len(rates) > 1:
            raise ValueError(f"traces in one set must share a sampling rate, got {sorted(rates)}")
        for i, t in enumerate(self.traces):
            if t.label is not None and t.label >= n:
                raise ValueError(f"trace {i} has label {t.label} but only {n} classes")

    def __len__(self):
        return len(self.traces)

    @property
    def labels(self) -> np.ndarray:
        return np.array([-1 if t.label is None else t.label for t in self.traces])

    @property
    def sampling_rate(self) -> Optional[int]:
        return self.traces[0].sampling_rate if self.traces else None


def default_class_names(n: int) -> list:
    return [f"site-{i:02d}" for i in range(n)]


def _format_float(v: float) -> str:
    return repr(float(v))


def _header_lines(trace: CurrentTrace) -> list:
    m = trace.meta
    lines = [
        MAGIC,
        f"# label={UNLABELED if trace.label is None else trace.label}",
        f"# device={m.device_profile}",
        f"# channel={m.channel}",
        f"# fs_hz={trace.sampling_rate}",
        f"# soc_start={_format_float(m.soc_start)}",
    ]
    if m.seed is not None:
        lines.append(f"# seed={m.seed}")
    if m.collected_at is not None:
        lines.append(f"# collected_at={m.collected_at}")
    if m.filtered:
        lines.append("# filtered=true")
    return lines


def write_trace(trace: CurrentTrace, path) -> None:
    body = _header_lines(trace) + [_format_float(v) for v in trace.samples]
    text = "\n".join(body) + "\n"
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write trace to {path}: {exc.strerror or exc}") from exc


_REQUIRED_KEYS = ("label", "device", "channel", "fs_hz", "soc_start")
_OPTIONAL_KEYS = ("seed", "collected_at", "filtered")


def read_trace(path) -> CurrentTrace:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0].rstrip("\r") != MAGIC:
        raise TraceFormatError(path, 1, f"expected header {MAGIC!r}")

    header = {}
    lineno = 1
    for lineno in range(2, len(lines) + 1):
        raw = lines[lineno - 1].rstrip("\r")
        if not raw.startswith("#"):
            break
        body = raw[1:].strip()
        if "=" not in body:
            raise TraceFormatError(path, lineno, f"malformed header line {raw!r}")
        key, value = (s.strip() for s in body.split("=", 1))
        if key not in _REQUIRED_KEYS and key not in _OPTIONAL_KEYS:
            raise TraceFormatError(path, lineno, f"unknown header key {key!r}")
        if key in header:
            raise TraceFormatError(path, lineno, f"duplicate header key {key!r}")
        header[key] = (value, lineno)
    else:
        lineno = len(lines) + 1
    first_data = lineno

    missing = [k for k in _REQUIRED_KEYS if k not in header]
    if missing:
        raise TraceFormatError(path, first_data, f"missing header keys: {', '.join(missing)}")

    def _get(key, conv):
        value, ln = header[key]
        try:
            return conv(value)
        except ValueError as exc:
            raise TraceFormatError(path, ln, f"bad value for {key}: {value!r}") from exc

    label_text = header["label"][0]
    label = None if label_text == UNLABELED else _get("label", int)
    fs = _get("fs_hz", int)
    filtered = header.get("filtered", ("false", 0))[0] == "true"
    try:
        meta = TraceMeta(
            device_profile=header["device"][0],
            channel=header["channel"][0],
            soc_start=_get("soc_start", float),
            seed=_get("seed", int) if "seed" in header else None,
            collected_at=header["collected_at"][0] if "collected_at" in header else None,
            filtered=filtered,
        )
    except ValueError as exc:
        raise TraceFormatError(path, 2, str(exc)) from exc

    samples = np.empty(len(lines) - first_data + 1)
    for i, ln in enumerate(range(first_data, len(lines) + 1)):
        raw = lines[ln - 1].strip()
        try:
            v = float(raw)
        except ValueError:
            raise TraceFormatError(path, ln, f"non-numeric sample {raw!r}") from None
        if not math.isfinite(v):
            raise TraceFormatError(path, ln, f"non-finite sample {raw!r}")
        if v < 0 and not filtered:
            raise TraceFormatError(path, ln, f"negative current {raw!r}")
        samples[i] = v
    try:
        return CurrentTrace(samples, fs, label, meta)
    except ValueError as exc:
        raise TraceFormatError(path, first_data, str(exc)) from exc


def read_logger_csv(path, fs_hz: int, *, label=None, meta: Optional[TraceMeta] = None) -> CurrentTrace:
    """Read a raw data-logger CSV (one sample per row, current in the last column).

    A non-numeric first row is treated as a column header. Rows may carry a
    leading timestamp column; it is ignored since the rate is fixed.
    """
    values = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not "".join(row).strip():
                continue
            cell = row[-1].strip()
            try:
                v = float(cell)
            except ValueError:
                if lineno == 1:
                    continue
                raise TraceFormatError(path, lineno, f"non-numeric sample {cell!r}") from None
            if not math.isfinite(v):
                raise TraceFormatError(path, lineno, f"non-finite sample {cell!r}")
            if v < 0:
                raise TraceFormatError(path, lineno, f"negative current {cell!r}")
            values.append(v)
    return CurrentTrace(np.array(values), fs_hz, label, meta or TraceMeta())


def slice_prefix(trace: CurrentTrace, n_seconds: float) -> CurrentTrace:
    if n_seconds <= 0:
        raise ValueError("n_seconds must be positive")
    n = int(round(n_seconds * trace.sampling_rate))
    if n > len(trace):
        raise ValueError(
            f"cannot take {n_seconds} s from a {trace.duration_s} s trace"
        )
    return replace(trace, samples=trace.samples[:n])


def resample(trace: CurrentTrace, fs_new: int) -> CurrentTrace:
    """Linearly interpolate onto ``fs_new``; first and last samples are kept."""
    if fs_new < 1:
        raise ValueError("fs_new must be at least 1")
    if fs_new == trace.sampling_rate:
        return replace(trace, samples=trace.samples.copy())
    n_old = len(trace)
    n_new = int(round(trace.duration_s * fs_new))
    if n_new == 1 or n_old == 1:
        out = np.full(n_new, trace.samples[0])
    else:
        grid = np.linspace(0.0, n_old - 1, n_new)
        out = np.interp(grid, np.arange(n_old), trace.samples)
    return replace(trace, samples=out, sampling_rate=fs_new)


def write_traceset(traceset: TraceSet, out_dir, prefix: str = "trace") -> Path:
    """Write every trace plus ``manifest.csv`` and ``classes.txt``; returns the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, t in enumerate(traceset.traces):
        name = f"{prefix}_{i:05d}.csv"
        write_trace(t, out_dir / name)
        rows.append([
            name,
            UNLABELED if t.label is None else str(t.label),
            t.meta.device_profile,
            t.meta.channel,
            str(t.sampling_rate),
            _format_float(t.meta.soc_start),
        ])
    manifest = out_dir / "manifest.csv"
    with open(manifest, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(MANIFEST_COLUMNS)
        w.writerows(rows)
    with open(out_dir / "classes.txt", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("".join(f"{c}\n" for c in traceset.class_names))
    return manifest


def read_manifest(path, class_names: Optional[Sequence[str]] = None) -> TraceSet:
    path = Path(path)
    base = path.parent
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != MANIFEST_COLUMNS:
            raise TraceFormatError(path, 1, f"expected columns {','.join(MANIFEST_COLUMNS)}")
        traces = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(MANIFEST_COLUMNS):
                raise TraceFormatError(path, lineno, "wrong number of columns")
            rel = row[0]
            t = read_trace(base / rel if not os.path.isabs(rel) else rel)
            want_label = None if row[1] == UNLABELED else int(row[1])
            if t.label != want_label or t.sampling_rate != int(row[4]):
                raise TraceFormatError(path, lineno, f"manifest row disagrees with {rel}")
            traces.append(t)
    if class_names is None:
        classes_file = base / "classes.txt"
        if classes_file.exists():
            class_names = classes_file.read_text(encoding="utf-8").split()
        else:
            labels = [t.label for t in traces if t.label is not None]
            class_names = default_class_names(max(labels) + 1 if labels else 0)
    return TraceSet(traces, list(class_names))
