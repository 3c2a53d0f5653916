"""Framewise error decomposition.

Each frame is judged against its ground-truth note combination: exact,
with added notes, with omitted notes, or with both additions and
omissions. Per-combination proportions of these frame classes therefore
need not sum to one.
"""
from __future__ import annotations

import csv
import io
import json
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .notation import NoteCombination, PianoRoll, frame_combinations


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class FrameErrorClass:
    exact: bool
    has_additions: bool
    has_omissions: bool


@dataclass(frozen=True)
class CombinationStats:
    combination: NoteCombination
    n_frames: int
    p_exact: float
    p_additions: float
    p_omissions: float
    shared: bool | None = None


def classify_frame(pred: NoteCombination, truth: NoteCombination) -> FrameErrorClass:
    p, t = pred.as_set(), truth.as_set()
    return FrameErrorClass(p == t, bool(p - t), bool(t - p))


def _check_grid(pred: PianoRoll, truth: PianoRoll) -> None:
    if not pred.same_grid(truth):
        raise ConfigurationError(
            f"rolls disagree: pred {pred.data.shape} @ {pred.frame_rate} f/s from {pred.pitch_lo}, "
            f"truth {truth.data.shape} @ {truth.frame_rate} f/s from {truth.pitch_lo}"
        )


class FrameCounts:
    """Accumulates exact/addition/omission frame counts per ground-truth combination."""

    def __init__(self):
        self.frames: Counter = Counter()
        self.exact: Counter = Counter()
        self.additions: Counter = Counter()
        self.omissions: Counter = Counter()

    def add(self, pred: PianoRoll, truth: PianoRoll) -> "FrameCounts":
        _check_grid(pred, truth)
        extra = (pred.data > truth.data).any(axis=1)
        missing = (pred.data < truth.data).any(axis=1)
        for t, combo in enumerate(frame_combinations(truth)):
            if not combo.pitches:
                continue
            self.frames[combo] += 1
            self.additions[combo] += int(extra[t])
            self.omissions[combo] += int(missing[t])
            self.exact[combo] += int(not (extra[t] or missing[t]))
        return self

    def stats(self, top_k: int | None = None, min_frames: int = 20,
              reference: set[NoteCombination] | None = None) -> list[CombinationStats]:
        rows = []
        # descending frame count, ties broken by the combination itself
        for combo in sorted(self.frames, key=lambda c: (-self.frames[c], c)):
            n = self.frames[combo]
            if n < min_frames:
                continue
            shared = None if reference is None else combo in reference
            rows.append(CombinationStats(combo, n, self.exact[combo] / n, self.additions[combo] / n,
                                         self.omissions[combo] / n, shared))
        return rows if top_k is None else rows[:top_k]


def combination_stats(pred: PianoRoll, truth: PianoRoll, top_k: int | None = None,
                      min_frames: int = 20) -> list[CombinationStats]:
    """Per ground-truth combination proportions of exact/addition/omission frames.

    Silent frames are skipped; groups with fewer than ``min_frames`` frames
    are dropped; the rest are sorted by frame count, most common first.
    """
    return FrameCounts().add(pred, truth).stats(top_k, min_frames)


def partition_shared(reference_combos, eval_combos) -> tuple[set, set]:
    ref, ev = set(reference_combos), set(eval_combos)
    return ev & ref, ev - ref


def _ratio(a: int, b: int) -> float:
    return a / b if b else 0.0


def prf_from_counts(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    p, r = _ratio(tp, tp + fp), _ratio(tp, tp + fn)
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f


def cell_counts(pred, truth) -> tuple[int, int, int]:
    """(TP, FP, FN) over all (frame, pitch) cells of two binary arrays or rolls."""
    if isinstance(pred, PianoRoll):
        _check_grid(pred, truth)
        pred, truth = pred.data, truth.data
    p, t = np.asarray(pred, dtype=bool), np.asarray(truth, dtype=bool)
    if p.shape != t.shape:
        raise ConfigurationError(f"shape mismatch: {p.shape} vs {t.shape}")
    return int((p & t).sum()), int((p & ~t).sum()), int((~p & t).sum())


def framewise_prf(pred, truth) -> tuple[float, float, float]:
    """Micro-averaged precision, recall and f-measure; 0/0 counts as 0."""
    return prf_from_counts(*cell_counts(pred, truth))


# -- reports -------------------------------------------------------------------

CSV_FIELDS = ["pitches", "n_frames", "p_exact", "p_additions", "p_omissions", "shared"]


def stats_to_csv(rows: list[CombinationStats]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for r in rows:
        w.writerow([r.combination.label(), r.n_frames, f"{r.p_exact:.6f}", f"{r.p_additions:.6f}",
                    f"{r.p_omissions:.6f}", "" if r.shared is None else int(r.shared)])
    return buf.getvalue()


def stats_from_csv(text: str) -> list[CombinationStats]:
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        shared = None if rec["shared"] == "" else bool(int(rec["shared"]))
        rows.append(CombinationStats(NoteCombination.from_label(rec["pitches"]), int(rec["n_frames"]),
                                     float(rec["p_exact"]), float(rec["p_additions"]),
                                     float(rec["p_omissions"]), shared))
    return rows


def summary_json(tp: int, fp: int, fn: int, counts: FrameCounts, **extra) -> str:
    p, r, f = prf_from_counts(tp, fp, fn)
    doc = {
        "precision": p, "recall": r, "f_measure": f,
        "tp": tp, "fp": fp, "fn": fn,
        "frames": sum(counts.frames.values()),
        "exact_frames": sum(counts.exact.values()),
        "addition_frames": sum(counts.additions.values()),
        "omission_frames": sum(counts.omissions.values()),
        "combinations": len(counts.frames),
        **extra,
    }
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def aggregate(pairs) -> tuple[tuple[int, int, int], FrameCounts]:
    """Pool cell counts and combination counts over ``(pred, truth)`` roll pairs."""
    tp = fp = fn = 0
    counts = FrameCounts()
    for pred, truth in pairs:
        a, b, c = cell_counts(pred, truth)
        tp, fp, fn = tp + a, fp + b, fn + c
        counts.add(pred, truth)
    return (tp, fp, fn), counts

