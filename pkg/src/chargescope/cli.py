"""Command-line entry point: ``python -m chargescope <command> ...``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import runner
from .evaluation import check_report_files, write_report
from .nn.gradcheck import random_tiny_config, gradient_check
from .preprocess import split_indices
from .simulator import synth_dataset
from .trace_model import (
    TraceFormatError, TraceMeta, TraceSet, default_class_names, read_logger_csv, read_manifest,
    read_trace, write_traceset, MAGIC,
)

log = logging.getLogger("chargescope")


def _countermeasure(text: str) -> float:
    kind, _, value = text.partition(":")
    if kind != "lowpass" or not value:
        raise argparse.ArgumentTypeError("expected lowpass:<cutoff_hz>")
    return float(value)


def _common(p: argparse.ArgumentParser, config: bool = True) -> None:
    if config:
        p.add_argument("--config", type=Path, help="experiment config file")
    p.add_argument("--seed", type=int, help="master seed (overrides [experiment] seed)")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--full", action="store_true", help="50 traces per class, 700 Hz, 97.5%% overlap")
    p.add_argument("--countermeasure", type=_countermeasure, metavar="lowpass:HZ",
                   help="low-pass filter every trace before classification")
    p.add_argument("--charge-cap", type=float, metavar="FRACTION", help="cap the state of charge")


def _settings(args) -> runner.Settings:
    return runner.load_settings(args.config, seed=args.seed, full=args.full,
                                lowpass_hz=args.countermeasure, charge_cap=args.charge_cap)


def cmd_simulate(args) -> int:
    s = _settings(args)
    ts = synth_dataset(s.sim)
    write_traceset(ts, args.out)
    (args.out / "runinfo.txt").write_text(s.runinfo(), encoding="utf-8")
    print(f"wrote {len(ts.traces)} traces to {args.out}")
    return 0


def _is_trace_file(path: Path) -> bool:
    with open(path, encoding="utf-8", errors="replace") as fh:
        return fh.readline().rstrip("\r\n") == MAGIC


def cmd_ingest(args) -> int:
    traces = []
    for path in args.inputs:
        if _is_trace_file(path):
            tr = read_trace(path)
        else:
            meta = TraceMeta(args.device, args.channel, args.soc)
            tr = read_logger_csv(path, args.fs, label=args.label, meta=meta)
        traces.append(tr)
    labels = [t.label for t in traces if t.label is not None]
    n = max(args.classes or 0, (max(labels) + 1) if labels else 1)
    write_traceset(TraceSet(traces, default_class_names(n)), args.out)
    print(f"ingested {len(traces)} traces into {args.out}")
    return 0


def _split_file(model_dir: Path) -> Path:
    return model_dir / "split.csv"


def cmd_train(args) -> int:
    s = _settings(args)
    ts = read_manifest(args.data)
    if ts.sampling_rate != s.sim.fs:
        s.sim = replace(s.sim, fs=ts.sampling_rate)
    if any(t.label is None for t in ts.traces):
        raise SystemExit("training data must be labeled")
    parts = split_indices(ts.labels, s.split, s.seed)
    model = runner.fit(s, *[[ts.traces[i] for i in idx] for idx in parts[:2]])
    runner.save_model(model, args.out)
    with open(_split_file(args.out), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("index,partition\n")
        for name, idx in zip(("train", "val", "test"), parts):
            for i in idx:
                fh.write(f"{i},{name}\n")
    (args.out / "runinfo.txt").write_text(s.runinfo(), encoding="utf-8")
    print(f"model written to {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    model = runner.load_model(args.model)
    ts = read_manifest(args.data)
    ids = np.arange(len(ts.traces))
    if args.test_split:
        rows = _split_file(args.model).read_text(encoding="utf-8").splitlines()[1:]
        ids = np.array([int(r.split(",")[0]) for r in rows if r.endswith(",test")])
    traces = [ts.traces[i] for i in ids]
    if any(t.label is None for t in traces):
        raise SystemExit("evaluation needs labeled traces")
    report = runner.score(model, traces, ts.class_names, [int(i) for i in ids])
    write_report(report, args.out)
    check_report_files(args.out)
    print(f"rank1 {100 * report.rank1_acc:.1f}%  rank2 {100 * report.rank2_acc:.1f}%")
    return 0


def cmd_attack(args) -> int:
    reports = runner.run_experiment(args.config, args.out, seed=args.seed, full=args.full,
                                    lowpass_hz=args.countermeasure, charge_cap=args.charge_cap)
    for name, r in reports.items():
        print(f"{name}: rank1 {100 * r.rank1_acc:.1f}%  rank2 {100 * r.rank2_acc:.1f}%")
    return 0


def cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(args.seed)
    worst = 0.0
    for i in range(args.configs):
        config, slice_len = random_tiny_config(rng)
        err = gradient_check(config, slice_len, seed=int(rng.integers(2**31)))
        worst = max(worst, err)
        print(f"config {i}: filters={config.conv_filters} kernel={config.kernel} slice={slice_len} "
              f"max rel err {err:.2e}")
    ok = worst < args.tol
    print(f"{'PASS' if ok else 'FAIL'} max relative error {worst:.2e} (tolerance {args.tol:g})")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="chargescope", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic trace dataset")
    _common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("ingest", help="convert logger CSVs or trace files into a dataset")
    p.add_argument("inputs", nargs="+", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--fs", type=int, default=700, help="sampling rate of logger CSVs")
    p.add_argument("--label", type=int, help="class label for logger CSVs (default unlabeled)")
    p.add_argument("--device", default="unknown")
    p.add_argument("--channel", default="wireless", choices=("wireless", "wired"))
    p.add_argument("--soc", type=float, default=1.0)
    p.add_argument("--classes", type=int, help="number of classes in classes.txt")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train a classifier on a dataset manifest")
    _common(p)
    p.add_argument("--data", type=Path, required=True, help="manifest.csv")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a trained model on a dataset manifest")
    p.add_argument("--model", type=Path, required=True, help="directory written by 'train'")
    p.add_argument("--data", type=Path, required=True, help="manifest.csv")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--test-split", action="store_true", help="only the traces held out by 'train'")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("attack", help="run a configured end-to-end scenario")
    _common(p)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("gradcheck", help="compare backprop with finite differences")
    p.add_argument("--configs", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (runner.ConfigError, TraceFormatError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
