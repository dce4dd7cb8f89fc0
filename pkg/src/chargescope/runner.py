"""Experiment orchestration: simulate or ingest, preprocess, train, evaluate, persist.

An experiment is described by an INI-style file (``key = value`` lines under
``[section]`` headers). Every scenario writes, under its output directory,

* ``runinfo.txt``: the fully resolved configuration including all seeds,
* ``data/<name>/``: trace files plus ``manifest.csv`` for each dataset used,
* ``<run>/``: ``report.csv``, ``confusion.csv``, ``summary.txt`` and the
  trained model (``model.ckpt`` or ``forest.json``) with ``history.csv``,
* ``summary.txt``: rank-1/rank-2 of every run in the scenario.
"""

from __future__ import annotations

import configparser
import csv
import io
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import baseline
from .countermeasures import charge_cap_policy, lowpass_filter
from .evaluation import (
    AttackReport, TracePrediction, build_report, check_report_files, report_from_segments, write_report,
)
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.model import ModelConfig, predict_proba, shape_plan
from .nn.train import TrainConfig, train
from .preprocess import NormStats, apply_norm, fit_norm, segment_traces, split_indices
from .simulator import (
    DEVICES, DeviceProfile, Jitter, LeakageRamp, SimConfig, synth_dataset,
)
from .trace_model import TraceSet, read_manifest, slice_prefix, write_traceset

log = logging.getLogger(__name__)

SCENARIOS = (
    "attack", "device_compare", "cross_device", "cross_charger", "noise",
    "duration_sweep", "aging", "soc_sweep", "countermeasure",
)

DEFAULTS = {
    "experiment": {"scenario": "attack", "seed": "0", "classifier": "cnn"},
    "data": {"manifest": ""},
    "sim": {
        "classes": "20", "traces_per_class": "20", "duration_s": "2.5", "fs": "500",
        "device": "iphone11", "channel": "wireless", "soc": "1.0",
        "signature_seed": "", "noise_seed": "",
        "shift_max_s": "0.3", "event_jitter_s": "0.05", "amp_jitter_frac": "0.1",
        "drift": "0", "drift_seed": "1",
    },
    "preprocess": {"window_s": "1.0", "overlap": "0.90", "n_slices": "3", "split": "0.64,0.16,0.20"},
    "model": {
        "conv_filters": "128,192,300", "kernel": "5", "pool_size": "2", "pool_stride": "2",
        "lstm_units": "128", "dense_units": "100", "dropout": "0.5",
    },
    "train": {
        "learning_rate": "0.001", "batch_size": "32", "max_epochs": "50",
        "early_stop_patience": "10", "precision": "single",
    },
    "forest": {"n_trees": "100", "max_depth": "none"},
    "countermeasure": {"lowpass_hz": "none", "charge_cap": "none"},
    "scenario": {
        "train_device": "iphone11", "test_device": "pixel4", "both_directions": "true",
        "devices": "iphone11,pixel4", "channels": "wireless,wired",
        "low_scale": "0.25", "high_scale": "1.0",
        "durations": "2.5,4,5,6,10", "drifts": "0.8",
        "socs": "0.5,0.8,0.85,0.9,0.95,1.0",
        "lowpass_hz": "60", "cap": "0.8",
    },
}

DEVICE_KEYS = {
    "base", "wired_ramp", "wireless_ramp", "gain", "smoothing_ms", "ripple_hz", "ripple_amp",
    "noise_sd_wireless", "noise_sd_wired", "mask_spread", "timing_spread_s",
}

FULL_OVERRIDES = {"sim": {"traces_per_class": "50", "fs": "700"}, "preprocess": {"overlap": "0.975"}}


class ConfigError(ValueError):
    pass


def _floats(text: str) -> list:
    return [float(v) for v in text.split(",") if v.strip()]


def _opt_float(text: str) -> Optional[float]:
    return None if text.strip().lower() in ("", "none") else float(text)


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


@dataclass
class Settings:
    scenario: str
    seed: int
    classifier: str
    sim: SimConfig
    window_s: float
    overlap: float
    n_slices: int
    split: tuple
    model: ModelConfig
    train: TrainConfig
    n_trees: int
    max_depth: Optional[int]
    lowpass_hz: Optional[float]
    charge_cap: Optional[float]
    manifest: Optional[str]
    opts: dict
    devices: dict = field(default_factory=dict)
    resolved: Optional[configparser.ConfigParser] = None

    def runinfo(self) -> str:
        buf = io.StringIO()
        self.resolved.write(buf)
        return buf.getvalue()


def _parse_device(name: str, sec, known: dict) -> DeviceProfile:
    base_name = sec.get("base", name if name in known else "iphone11")
    if base_name not in known:
        raise ConfigError(f"device.{name}: unknown base profile {base_name!r}")
    dev = replace(known[base_name], name=name)
    kw = {}
    for key in sec:
        if key == "base":
            continue
        val = sec[key]
        if key in ("wired_ramp", "wireless_ramp"):
            if val.strip().lower() == "none":
                kw[key] = None
            else:
                lo, hi = _floats(val)
                kw[key] = LeakageRamp(lo, hi)
        else:
            kw[key] = float(val)
    return replace(dev, **kw)


def load_settings(path=None, *, text: str = None, seed: Optional[int] = None, full: bool = False,
                  lowpass_hz: Optional[float] = None, charge_cap: Optional[float] = None) -> Settings:
    """Parse an experiment config (file path or literal text) and apply CLI overrides."""
    user = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            user.read_file(fh, source=str(path))
    elif text is not None:
        user.read_string(text)

    problems = []
    for sec in user.sections():
        if sec.startswith("device."):
            unknown = set(user[sec]) - DEVICE_KEYS
            if unknown:
                problems.append(f"[{sec}] unknown keys: {', '.join(sorted(unknown))}")
        elif sec not in DEFAULTS:
            problems.append(f"unknown section [{sec}]")
        else:
            unknown = set(user[sec]) - set(DEFAULTS[sec])
            if unknown:
                problems.append(f"[{sec}] unknown keys: {', '.join(sorted(unknown))}")
    if problems:
        raise ConfigError("; ".join(problems))

    cfg = configparser.ConfigParser(interpolation=None)
    cfg.read_dict(DEFAULTS)
    if full:
        cfg.read_dict(FULL_OVERRIDES)
    for sec in user.sections():
        if not cfg.has_section(sec):
            cfg.add_section(sec)
        for k, v in user[sec].items():
            cfg[sec][k] = v
    if seed is not None:
        cfg["experiment"]["seed"] = str(seed)
    if lowpass_hz is not None:
        cfg["countermeasure"]["lowpass_hz"] = repr(float(lowpass_hz))
    if charge_cap is not None:
        cfg["countermeasure"]["charge_cap"] = repr(float(charge_cap))

    ex, sim, pre = cfg["experiment"], cfg["sim"], cfg["preprocess"]
    scenario = ex["scenario"].strip()
    if scenario not in SCENARIOS:
        raise ConfigError(f"unknown scenario {scenario!r}; expected one of {', '.join(SCENARIOS)}")
    classifier = ex["classifier"].strip()
    if classifier not in ("cnn", "forest"):
        raise ConfigError(f"unknown classifier {classifier!r}")
    master = int(ex["seed"])
    for key in ("signature_seed", "noise_seed"):
        if not sim[key].strip():
            sim[key] = str(master)

    devices = dict(DEVICES)
    for sec in cfg.sections():
        if sec.startswith("device."):
            name = sec[len("device."):]
            devices[name] = _parse_device(name, cfg[sec], devices)

    def device(name):
        if name not in devices:
            raise ConfigError(f"unknown device profile {name!r}")
        return devices[name]

    try:
        soc_vals = _floats(sim["soc"])
        sim_cfg = SimConfig(
            classes=int(sim["classes"]),
            traces_per_class=int(sim["traces_per_class"]),
            duration_s=float(sim["duration_s"]),
            fs=int(sim["fs"]),
            device=device(sim["device"].strip()),
            channel=sim["channel"].strip(),
            soc=soc_vals[0] if len(soc_vals) == 1 else tuple(soc_vals[:2]),
            signature_seed=int(sim["signature_seed"]),
            noise_seed=int(sim["noise_seed"]),
            jitter=Jitter(float(sim["shift_max_s"]), float(sim["event_jitter_s"]), float(sim["amp_jitter_frac"])),
            drift=float(sim["drift"]),
            drift_seed=int(sim["drift_seed"]),
        )
        m, t = cfg["model"], cfg["train"]
        model = ModelConfig(
            n_slices=int(pre["n_slices"]),
            conv_filters=tuple(int(v) for v in m["conv_filters"].split(",")),
            kernel=int(m["kernel"]),
            pool_size=int(m["pool_size"]),
            pool_stride=int(m["pool_stride"]),
            lstm_units=int(m["lstm_units"]),
            dense_units=int(m["dense_units"]),
            n_classes=sim_cfg.classes,
            dropout=float(m["dropout"]),
        )
        train_cfg = TrainConfig(
            learning_rate=float(t["learning_rate"]),
            batch_size=int(t["batch_size"]),
            max_epochs=int(t["max_epochs"]),
            early_stop_patience=int(t["early_stop_patience"]),
            seed=master,
            precision=t["precision"].strip(),
        )
        max_depth = cfg["forest"]["max_depth"].strip().lower()
        s = Settings(
            scenario=scenario,
            seed=master,
            classifier=classifier,
            sim=sim_cfg,
            window_s=float(pre["window_s"]),
            overlap=float(pre["overlap"]),
            n_slices=int(pre["n_slices"]),
            split=tuple(_floats(pre["split"])),
            model=model,
            train=train_cfg,
            n_trees=int(cfg["forest"]["n_trees"]),
            max_depth=None if max_depth == "none" else int(max_depth),
            lowpass_hz=_opt_float(cfg["countermeasure"]["lowpass_hz"]),
            charge_cap=_opt_float(cfg["countermeasure"]["charge_cap"]),
            manifest=cfg["data"]["manifest"].strip() or None,
            opts=dict(cfg["scenario"]),
            devices=devices,
            resolved=cfg,
        )
    except ConfigError:
        raise
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc

    if s.charge_cap is not None:
        s.sim = charge_cap_policy(s.sim, s.charge_cap)
    if s.classifier == "cnn":
        # fail before any simulation if the window cannot feed the network
        shape_plan(s.model, int(round(s.window_s * s.sim.fs)) // s.n_slices)
    return s


# -- one train/evaluate cycle -------------------------------------------------

@dataclass
class Trained:
    """A fitted classifier plus everything needed to preprocess new traces for it."""

    kind: str  # "cnn" or "forest"
    window_s: float
    overlap: float
    n_slices: int
    lowpass_hz: Optional[float] = None
    model: Optional[ModelConfig] = None
    params: object = None
    norm: Optional[NormStats] = None
    forest: object = None
    seed: int = 0
    history: object = None

    @property
    def n_fft(self) -> int:
        return 2 * (self.forest.n_features - 1)


def _prepare(traces, lowpass_hz):
    if lowpass_hz is not None:
        traces = [lowpass_filter(t, lowpass_hz) for t in traces]
    return traces


def _segments(traces, window_s, overlap, n_slices, dtype, stats=None):
    sa = segment_traces(traces, window_s, overlap, n_slices, dtype)
    if stats is None:
        stats = fit_norm(sa.x)
    sa.x = apply_norm(sa.x, stats).astype(dtype, copy=False)
    return sa, stats


def fit(s: Settings, train_traces, val_traces) -> Trained:
    train_traces = _prepare(train_traces, s.lowpass_hz)
    val_traces = _prepare(val_traces, s.lowpass_hz)
    out = Trained(s.classifier, s.window_s, s.overlap, s.n_slices, s.lowpass_hz, seed=s.seed)
    if s.classifier == "forest":
        n_fft = baseline.next_pow2(max(len(t) for t in train_traces))
        X = baseline.spectrum_matrix(train_traces, n_fft)
        y = [t.label for t in train_traces]
        out.forest = baseline.rf_train(X, y, s.n_trees, s.max_depth, s.seed, n_classes=s.sim.classes)
        return out
    dtype = s.train.dtype
    tr, stats = _segments(train_traces, s.window_s, s.overlap, s.n_slices, dtype)
    va, _ = _segments(val_traces, s.window_s, s.overlap, s.n_slices, dtype, stats)
    log.info("training on %d segments, validating on %d", len(tr), len(va))
    out.params, out.history = train(s.model, s.train, tr.x, tr.y, va.x, va.y)
    out.model, out.norm = s.model, stats
    return out


def score(model: Trained, traces, class_names=None, trace_ids=None) -> AttackReport:
    """Classify whole traces; ``trace_ids`` label the report rows (default 0..n-1)."""
    traces = _prepare(traces, model.lowpass_hz)
    labels = [t.label for t in traces]
    if model.kind == "forest":
        n = max(model.n_fft, baseline.next_pow2(max(len(t) for t in traces)))
        # longer test traces are truncated to the trained resolution
        X = baseline.spectrum_matrix([t.samples[: model.n_fft] for t in traces], model.n_fft) if n > model.n_fft \
            else baseline.spectrum_matrix(traces, model.n_fft)
        rankings = baseline.rf_predict(model.forest, X)
        ids = range(len(traces)) if trace_ids is None else trace_ids
        preds = [TracePrediction(int(i), lab, r) for i, lab, r in zip(ids, labels, rankings)]
        return build_report(preds, model.forest.n_classes, class_names)
    dtype = model.params["out.w"].dtype
    sa, _ = _segments(traces, model.window_s, model.overlap, model.n_slices, dtype, model.norm)
    probs = predict_proba(model.params, model.model, sa.x)
    return report_from_segments(probs, sa.trace_index, labels, trace_ids=trace_ids, class_names=class_names)


def save_model(model: Trained, out_dir) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    info = {
        "kind": model.kind, "window_s": model.window_s, "overlap": model.overlap,
        "n_slices": model.n_slices, "lowpass_hz": model.lowpass_hz,
    }
    if model.kind == "forest":
        baseline.save_forest(model.forest, out_dir / "forest.json")
        (out_dir / "model_info.json").write_text(json.dumps(info, sort_keys=True) + "\n", encoding="utf-8")
        return
    info.update(norm_mean=model.norm.mean, norm_sd=model.norm.sd)
    save_checkpoint(out_dir / "model.ckpt", model.params, model.model, model.seed, info)
    with open(out_dir / "history.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "train_acc", "val_loss", "val_acc"])
        for e in model.history.epochs:
            w.writerow([e.epoch, repr(e.train_loss), repr(e.train_acc), repr(e.val_loss), repr(e.val_acc)])


def load_model(model_dir) -> Trained:
    """Inverse of :func:`save_model`."""
    model_dir = Path(model_dir)
    if (model_dir / "model.ckpt").exists():
        params, config, seed, info = load_checkpoint(model_dir / "model.ckpt")
        return Trained("cnn", info["window_s"], info["overlap"], info["n_slices"], info["lowpass_hz"],
                       model=config, params=params, norm=NormStats(info["norm_mean"], info["norm_sd"]), seed=seed)
    if (model_dir / "forest.json").exists():
        info = json.loads((model_dir / "model_info.json").read_text(encoding="utf-8"))
        forest = baseline.load_forest(model_dir / "forest.json")
        return Trained("forest", info["window_s"], info["overlap"], info["n_slices"], info["lowpass_hz"],
                       forest=forest, seed=forest.seed)
    raise FileNotFoundError(f"{model_dir}: no model.ckpt or forest.json")


# -- scenario plumbing --------------------------------------------------------

class _Run:
    def __init__(self, s: Settings, out_dir):
        self.s = s
        self.out = Path(out_dir)
        self.out.mkdir(parents=True, exist_ok=True)
        self.reports = {}
        self._split = None

    def dataset(self, name: str, sim: SimConfig) -> TraceSet:
        ts = synth_dataset(sim)
        write_traceset(ts, self.out / "data" / name)
        return ts

    def split(self, ts: TraceSet):
        if self._split is None:
            self._split = split_indices(ts.labels, self.s.split, self.s.seed)
        return self._split

    def parts(self, ts: TraceSet):
        return [[ts.traces[i] for i in idx] for idx in self.split(ts)]

    def fit(self, name: str, ts: TraceSet, s: Settings = None) -> Trained:
        tr, va, _ = self.parts(ts)
        model = fit(s or self.s, tr, va)
        save_model(model, self.out / name)
        return model

    def evaluate(self, name: str, model: Trained, ts: TraceSet, whole: bool = False) -> AttackReport:
        """Score the test split of ``ts``, or every trace when ``whole`` (a collection never trained on)."""
        ids = np.arange(len(ts.traces)) if whole else self.split(ts)[2]
        report = score(model, [ts.traces[i] for i in ids], ts.class_names, [int(i) for i in ids])
        write_report(report, self.out / name)
        check_report_files(self.out / name)
        self.reports[name] = report
        log.info("%s: rank1 %.3f rank2 %.3f", name, report.rank1_acc, report.rank2_acc)
        return report

    def attack(self, name: str, ts: TraceSet, s: Settings = None) -> AttackReport:
        return self.evaluate(name, self.fit(name, ts, s), ts)

    def finish(self):
        (self.out / "runinfo.txt").write_text(self.s.runinfo(), encoding="utf-8")
        with open(self.out / "summary.txt", "w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"scenario {self.s.scenario}\n")
            for name, r in self.reports.items():
                fh.write(f"{name} rank1 {100 * r.rank1_acc:.1f} rank2 {100 * r.rank2_acc:.1f}\n")
        return self.reports


def _alt_seed(sim: SimConfig, k: int) -> SimConfig:
    # independent noise for a second collection of the same websites
    return replace(sim, noise_seed=sim.noise_seed + 7919 * k)


def _scaled_noise(sim: SimConfig, scale: float) -> SimConfig:
    dev = sim.device
    dev = replace(dev, noise_sd_wireless=dev.noise_sd_wireless * scale,
                  noise_sd_wired=dev.noise_sd_wired * scale)
    j = sim.jitter
    return replace(sim, device=dev, jitter=Jitter(j.shift_max_s * scale, j.event_jitter_s * scale,
                                                  j.amp_jitter_frac * scale))


def _tag(x: float) -> str:
    return f"{x:g}"


def run_experiment(config_path=None, out_dir="runs/experiment", *, settings: Settings = None, **overrides) -> dict:
    """Execute the configured scenario; returns ``{run_name: AttackReport}``.

    ``overrides`` are passed to :func:`load_settings` (seed, full, lowpass_hz,
    charge_cap).
    """
    s = settings or load_settings(config_path, **overrides)
    run = _Run(s, out_dir)
    sim, opts = s.sim, s.opts
    sc = s.scenario

    if sc == "attack":
        if s.manifest:
            ts = read_manifest(s.manifest)
            if ts.sampling_rate != sim.fs:
                s = replace(s, sim=replace(sim, fs=ts.sampling_rate))
                run.s = s
        else:
            ts = run.dataset("main", sim)
        run.attack("attack", ts)

    elif sc == "device_compare":
        for dev in opts["devices"].split(","):
            for ch in opts["channels"].split(","):
                dev, ch = dev.strip(), ch.strip()
                cur = replace(sim, device=s.devices[dev], channel=ch)
                run.attack(f"{dev}_{ch}", run.dataset(f"{dev}_{ch}", cur))

    elif sc == "cross_device":
        a, b = opts["train_device"].strip(), opts["test_device"].strip()
        for name in (a, b):
            if name not in s.devices:
                raise ConfigError(f"unknown device profile {name!r}")
        ts_a = run.dataset(a, replace(sim, device=s.devices[a]))
        ts_b = run.dataset(b, _alt_seed(replace(sim, device=s.devices[b]), 1))
        model_a = run.fit(f"train_{a}", ts_a)
        run.evaluate(f"{a}_to_{a}", model_a, ts_a)
        run.evaluate(f"{a}_to_{b}", model_a, ts_b, whole=True)
        if _bool(opts["both_directions"]):
            model_b = run.fit(f"train_{b}", ts_b)
            run.evaluate(f"{b}_to_{b}", model_b, ts_b)
            run.evaluate(f"{b}_to_{a}", model_b, ts_a, whole=True)

    elif sc == "cross_charger":
        sets = {
            "wireless": run.dataset("wireless", replace(sim, channel="wireless")),
            "wired": run.dataset("wired", _alt_seed(replace(sim, channel="wired"), 1)),
        }
        for src in ("wireless", "wired"):
            model = run.fit(f"train_{src}", sets[src])
            for dst in ("wireless", "wired"):
                run.evaluate(f"{src}_to_{dst}", model, sets[dst], whole=dst != src)

    elif sc == "noise":
        for level in ("low", "high"):
            cur = _scaled_noise(sim, float(opts[f"{level}_scale"]))
            run.attack(f"noise_{level}", run.dataset(f"noise_{level}", cur))

    elif sc == "duration_sweep":
        durations = _floats(opts["durations"])
        base = run.dataset("main", replace(sim, duration_s=max(durations)))
        for d in durations:
            cut = TraceSet([slice_prefix(t, d) for t in base.traces], base.class_names)
            run.attack(f"duration_{_tag(d)}", cut, replace(s, sim=replace(sim, duration_s=d)))

    elif sc == "aging":
        ts = run.dataset("main", sim)
        model = run.fit("train", ts)
        # every drift level, including 0, is a fresh collection scored in full
        for k, d in enumerate([0.0] + _floats(opts["drifts"]), start=1):
            aged = run.dataset(f"drift_{_tag(d)}", _alt_seed(replace(sim, drift=d), k))
            run.evaluate(f"drift_{_tag(d)}", model, aged, whole=True)

    elif sc == "soc_sweep":
        for soc in _floats(opts["socs"]):
            cur = replace(sim, soc=soc)
            run.attack(f"soc_{_tag(soc)}", run.dataset(f"soc_{_tag(soc)}", cur))

    elif sc == "countermeasure":
        ts = run.dataset("main", sim)
        run.attack("baseline", ts)
        hz = float(opts["lowpass_hz"])
        run.attack(f"lowpass_{_tag(hz)}", ts, replace(s, lowpass_hz=hz))
        cap = float(opts["cap"])
        capped = charge_cap_policy(sim, cap)
        run.attack(f"charge_cap_{_tag(cap)}", run.dataset(f"charge_cap_{_tag(cap)}", capped),
                   replace(s, sim=capped))

    return run.finish()
