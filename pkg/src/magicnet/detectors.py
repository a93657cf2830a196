"""Simulated drift-detection schedules with controlled precision and recall.

A true positive is a detection within the 1000 points after a true drift
(exclusive of the drift point itself, which would be clairvoyant).  Counts
follow the two-step rounding procedure: the number of true positives is
recall times the number of true drifts, rounded; the total number of
detections is that count divided by precision, rounded; the remainder are
false positives placed outside every true-positive window.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TP_WINDOW = 1000


class ScheduleError(ValueError):
    """Raised when a schedule cannot be constructed for the given stream."""


def round_half_up(x: float) -> int:
    # small epsilon so ratios of small integers that land a hair under .5
    # due to binary representation still round up
    return int(math.floor(x + 0.5 + 1e-9))


@dataclass
class DetectionSchedule:
    """Sorted detection timestamps, each tagged 'TP' or 'FP'."""

    detections: list  # [(timestamp, tag)]
    target_precision: float
    target_recall: float
    stream_length: int

    @property
    def times(self) -> list:
        return [t for t, _ in self.detections]

    def __len__(self) -> int:
        return len(self.detections)


def build_schedule(true_drifts, precision: float, recall: float,
                   stream_length: int, seed, min_gap: int = 10) -> DetectionSchedule:
    """Randomly generate detection timestamps matching the target
    precision/recall after rounding.

    Each chosen drift gets one TP uniform in (drift, drift+1000]; false
    positives are uniform over the stream excluding every drift window,
    and keep at least ``min_gap`` points from any other detection.
    """
    if not (0.0 < precision <= 1.0) or not (0.0 < recall <= 1.0):
        raise ScheduleError("precision and recall must lie in (0, 1]")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    drifts = sorted(int(d) for d in true_drifts)
    n_tp = round_half_up(recall * len(drifts))
    total = round_half_up(n_tp / precision) if n_tp else 0
    n_fp = total - n_tp

    detections = []
    if n_tp:
        chosen = sorted(rng.choice(len(drifts), size=n_tp, replace=False))
        for i in chosen:
            d = drifts[i]
            hi = min(TP_WINDOW, stream_length - 1 - d)
            if hi < 1:
                raise ScheduleError(
                    f"no room for a detection after drift at {d} "
                    f"(stream length {stream_length})")
            detections.append((d + int(rng.integers(1, hi + 1)), "TP"))

    if n_fp:
        allowed = np.ones(stream_length, dtype=bool)
        allowed[0] = False
        for d in drifts:
            allowed[d:d + TP_WINDOW + 1] = False
        for t, _ in detections:
            lo, hi = max(0, t - min_gap), min(stream_length, t + min_gap + 1)
            allowed[lo:hi] = False
        for _ in range(n_fp):
            candidates = np.flatnonzero(allowed)
            if candidates.size == 0:
                raise ScheduleError(
                    f"cannot place {n_fp} false positives in a stream of "
                    f"length {stream_length}")
            t = int(candidates[rng.integers(0, candidates.size)])
            detections.append((t, "FP"))
            lo, hi = max(0, t - min_gap), min(stream_length, t + min_gap + 1)
            allowed[lo:hi] = False

    detections.sort()
    return DetectionSchedule(detections=detections, target_precision=precision,
                             target_recall=recall, stream_length=stream_length)


def measure_schedule(schedule: DetectionSchedule, true_drifts) -> tuple[float, float]:
    """Recompute (precision, recall) from the window rule.

    Detections are matched greedily in time order; each true drift absorbs
    at most one true positive.  An empty schedule has precision 1.0 by
    convention; no drifts means recall 1.0.
    """
    drifts = sorted(int(d) for d in true_drifts)
    claimed = [False] * len(drifts)
    tp = 0
    for t, _ in schedule.detections:
        for i, d in enumerate(drifts):
            if not claimed[i] and d < t <= d + TP_WINDOW:
                claimed[i] = True
                tp += 1
                break
    total = len(schedule.detections)
    precision = tp / total if total else 1.0
    recall = tp / len(drifts) if drifts else 1.0
    return precision, recall
