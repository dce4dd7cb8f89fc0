"""Majority voting over segment predictions and trace-level attack metrics."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

CONFIDENCE_DECIMALS = 9


@dataclass
class VoteTally:
    trace_id: int
    counts: np.ndarray            # votes per class
    confidence_sums: np.ndarray   # summed segment probabilities per class
    true_label: Optional[int]

    @property
    def n_votes(self) -> int:
        return int(self.counts.sum())


def tally_votes(segment_predictions, n_classes: Optional[int] = None, trace_id: int = 0,
                true_label: Optional[int] = None) -> VoteTally:
    """Each segment votes for its argmax class.

    ``segment_predictions`` is a (n_segments, n_classes) probability array or
    a list of objects with a ``probs`` attribute.
    """
    if not isinstance(segment_predictions, np.ndarray):
        segment_predictions = [getattr(p, "probs", p) for p in segment_predictions]
    probs = np.asarray(segment_predictions, dtype=np.float64)
    if probs.ndim != 2 or len(probs) == 0:
        raise ValueError("need at least one segment prediction")
    if n_classes is not None and probs.shape[1] != n_classes:
        raise ValueError(f"predictions have {probs.shape[1]} classes, expected {n_classes}")
    counts = np.bincount(probs.argmax(axis=1), minlength=probs.shape[1])
    return VoteTally(trace_id, counts, probs.sum(axis=0), true_label)


def rank_order(tally: VoteTally) -> list:
    """Classes by votes, then summed confidence, then lowest index."""
    # rounding keeps summation-order noise from breaking exact confidence ties
    conf = np.round(tally.confidence_sums, CONFIDENCE_DECIMALS)
    return sorted(range(len(tally.counts)), key=lambda c: (-tally.counts[c], -conf[c], c))


def _rankings(reports) -> list:
    out = []
    for r in reports:
        if isinstance(r, VoteTally):
            out.append((r.true_label, rank_order(r)))
        elif isinstance(r, TracePrediction):
            out.append((r.true_label, r.ranking))
        else:
            true, ranking = r
            out.append((true, list(ranking)))
    return out


def rank_k_accuracy(reports, k: int) -> float:
    """Fraction of traces whose true class is among the top ``k`` ranked classes.

    ``reports`` may hold VoteTally, TracePrediction or ``(true, ranking)`` pairs.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    ranked = _rankings(reports)
    if not ranked:
        raise ValueError("no reports to score")
    return sum(true in ranking[:k] for true, ranking in ranked) / len(ranked)


def confusion_matrix(reports, n_classes: Optional[int] = None) -> np.ndarray:
    ranked = _rankings(reports)
    if not ranked:
        raise ValueError("no reports to score")
    n = n_classes or len(ranked[0][1])
    m = np.zeros((n, n), dtype=np.int64)
    for true, ranking in ranked:
        m[true, ranking[0]] += 1
    return m


@dataclass
class TracePrediction:
    trace_id: int
    true_label: int
    ranking: list
    counts: Optional[np.ndarray] = None  # None for classifiers without votes


@dataclass
class AttackReport:
    predictions: list
    rank1_acc: float
    rank2_acc: float
    confusion: np.ndarray
    class_names: Optional[list] = None

    @property
    def n_classes(self) -> int:
        return self.confusion.shape[0]

    def rank_k(self, k: int) -> float:
        return rank_k_accuracy(self.predictions, k)


def build_report(predictions: Sequence[TracePrediction], n_classes: int, class_names=None) -> AttackReport:
    preds = list(predictions)
    return AttackReport(
        preds,
        rank_k_accuracy(preds, 1),
        rank_k_accuracy(preds, min(2, n_classes)),
        confusion_matrix(preds, n_classes),
        list(class_names) if class_names is not None else None,
    )


def report_from_segments(segment_probs: np.ndarray, trace_index: np.ndarray, true_labels: Sequence[int],
                         trace_ids: Optional[Sequence[int]] = None, class_names=None) -> AttackReport:
    """Vote per trace; ``trace_index[i]`` names the trace (position in ``true_labels``) of segment i."""
    n_classes = segment_probs.shape[1]
    preds = []
    for pos, true in enumerate(true_labels):
        tally = tally_votes(segment_probs[trace_index == pos], n_classes,
                            trace_id=pos if trace_ids is None else trace_ids[pos], true_label=true)
        preds.append(TracePrediction(tally.trace_id, int(true), rank_order(tally), tally.counts))
    return build_report(preds, n_classes, class_names)


def _pct(x: float) -> str:
    return f"{100 * x:.1f}"


def write_report(report: AttackReport, out_dir) -> None:
    """Write ``report.csv``, ``confusion.csv`` and ``summary.txt`` into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n = report.n_classes
    with open(out_dir / "report.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "true", "rank1", "rank2"] + [f"votes_{c}" for c in range(n)])
        for p in report.predictions:
            votes = [""] * n if p.counts is None else [int(v) for v in p.counts]
            second = p.ranking[1] if len(p.ranking) > 1 else ""
            w.writerow([p.trace_id, p.true_label, p.ranking[0], second] + votes)
    with open(out_dir / "confusion.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerows(report.confusion.tolist())
    with open(out_dir / "summary.txt", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"traces {len(report.predictions)}\n")
        fh.write(f"rank1 {_pct(report.rank1_acc)}\n")
        fh.write(f"rank2 {_pct(report.rank2_acc)}\n")


def check_report_files(out_dir) -> None:
    """Recompute the summary from report.csv and confusion.csv; raise on mismatch."""
    out_dir = Path(out_dir)
    with open(out_dir / "report.csv", newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{out_dir}/report.csv has no traces")
    r1 = sum(r["true"] == r["rank1"] for r in rows) / len(rows)
    r2 = sum(r["true"] in (r["rank1"], r["rank2"]) for r in rows) / len(rows)
    summary = dict(line.split() for line in (out_dir / "summary.txt").read_text().splitlines())
    if summary["rank1"] != _pct(r1) or summary["rank2"] != _pct(r2) or int(summary["traces"]) != len(rows):
        raise ValueError(f"{out_dir}: summary.txt disagrees with report.csv")
    conf = np.loadtxt(out_dir / "confusion.csv", delimiter=",", dtype=np.int64, ndmin=2)
    recount = np.zeros_like(conf)
    for r in rows:
        recount[int(r["true"]), int(r["rank1"])] += 1
    if not np.array_equal(conf, recount):
        raise ValueError(f"{out_dir}: confusion.csv disagrees with report.csv")
