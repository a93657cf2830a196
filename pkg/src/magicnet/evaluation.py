"""Prequential and continual-learning evaluation protocols.

Prequential: every labeled point is scored with the prediction made before
the model trains on it.  Scoring accumulators reset at each detection (the
signal the learner can observe); for detection j, ``start_j`` is the kappa
after the first 50 mini-batches' worth of points and ``end_j`` the kappa
over the whole detection-to-detection segment.  The last points of every
concept are withheld from scoring and training to form per-concept test
sets, and a model checkpoint is taken at each true concept end.

CL evaluation feeds each test set chronologically to each later checkpoint,
inference only.  Checkpoints that carry several stored networks (one per
concept for the mask learner, one per column for progressive columns) race
them prequentially for the first 500 points, then only the leader answers;
the score of checkpoint i on test set j is the kappa of the emitted
predictions over the full test set.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from collections import deque

import numpy as np
from scipy.special import expit as sigmoid

from . import nn
from .checkpoint import ModelCheckpoint
from .detectors import DetectionSchedule
from .learners import pnn_stack_logits
from .metrics import KappaAccumulator
from .streams import Stream, UNLABELED

TEST_TAIL = 2000
START_BATCHES = 50
SELECTION_POINTS = 500
PREDICTION_THRESHOLD = 0.5


class EvaluationError(ValueError):
    pass


@dataclass
class DriftEntry:
    """Scores anchored to one detection."""

    index: int
    detection_time: int
    start_kappa: float | None = None
    start_at: int | None = None
    end_kappa: float | None = None
    end_at: int | None = None


@dataclass
class PrequentialReport:
    entries: list
    start: float
    end: float


@dataclass
class PrequentialResult:
    report: PrequentialReport
    checkpoints: list
    test_sets: list        # [(X, y)] per concept
    trace: list | None = None


def run_prequential(learner, stream: Stream, schedule: DetectionSchedule, *,
                    test_tail: int = TEST_TAIL, start_batches: int = START_BATCHES,
                    collect_trace: bool = False) -> PrequentialResult:
    """Drive one learner over one stream under one detection schedule."""
    total = len(stream)
    if schedule.stream_length != total:
        raise EvaluationError(
            f"schedule built for {schedule.stream_length} points, "
            f"stream has {total}")
    bounds = stream.concept_bounds()
    for a, b in bounds:
        if b - a <= test_tail:
            raise EvaluationError(
                f"concept [{a}, {b}) has {b - a} points, not enough to "
                f"withhold a {test_tail}-point test set")
    withheld = np.zeros(total, dtype=bool)
    for _, b in bounds:
        withheld[b - test_tail:b] = True
    concept_end = {b: i for i, (_, b) in enumerate(bounds)}
    detections = set(schedule.times)
    start_target = start_batches * learner.batch_size

    acc = KappaAccumulator()
    entries: list = []
    current: DriftEntry | None = None
    scored_in_segment = 0
    checkpoints, test_sets = [], []
    trace = [] if collect_trace else None

    X, y = stream.X, stream.y
    for t in range(total):
        if t in detections:
            if current is not None and scored_in_segment > 0:
                current.end_kappa = acc.kappa
                current.end_at = t
            current = DriftEntry(index=len(entries) + 1, detection_time=t)
            entries.append(current)
            learner.on_drift_detected()
            acc.reset()
            scored_in_segment = 0

        prob = learner.predict(X[t])

        if not withheld[t] and y[t] != UNLABELED:
            pred = int(prob >= PREDICTION_THRESHOLD)
            acc.update(pred, int(y[t]))
            scored_in_segment += 1
            if collect_trace:
                trace.append((t, prob, int(y[t]), acc.kappa))
            learner.learn_one(X[t], int(y[t]))
            if (current is not None and current.start_kappa is None
                    and scored_in_segment == start_target):
                current.start_kappa = acc.kappa
                current.start_at = t + 1

        if t + 1 in concept_end:
            idx = concept_end[t + 1]
            checkpoints.append(learner.snapshot(idx + 1))
            a, b = bounds[idx]
            test_sets.append((X[b - test_tail:b].copy(), y[b - test_tail:b].copy()))

    if current is not None and current.end_kappa is None and scored_in_segment > 0:
        current.end_kappa = acc.kappa
        current.end_at = total

    starts = [e.start_kappa for e in entries if e.start_kappa is not None]
    ends = [e.end_kappa for e in entries if e.end_kappa is not None]
    report = PrequentialReport(
        entries=entries,
        start=float(np.mean(starts)) if starts else float("nan"),
        end=float(np.mean(ends)) if ends else float("nan"))
    return PrequentialResult(report=report, checkpoints=checkpoints,
                             test_sets=test_sets, trace=trace)


# --------------------------------------------------------------------------
# Checkpoint inference
# --------------------------------------------------------------------------

_stack_logits = pnn_stack_logits
_gru_logit = nn.forward_logit


class CandidateGroup:
    """All candidate networks stored in one checkpoint, streamed over a
    test set with a shared rolling window.  Pure inference."""

    def __init__(self, ckpt: ModelCheckpoint):
        self.kind = ckpt.kind
        self.window = int(ckpt.meta["window"])
        self.input_dim = int(ckpt.meta["input_dim"])
        self._recent: deque = deque(maxlen=self.window)
        if ckpt.kind == "cgru":
            self._nets = [ckpt.group("net")]
            self.live_index = 0
        elif ckpt.kind == "magic":
            records = ckpt.meta["records"]
            self._nets = []
            for i in range(len(records)):
                grp = ckpt.group(f"rec{i}")
                self._nets.append({k: v for k, v in grp.items() if "/" not in k})
            self.live_index = int(ckpt.meta["live"])
        elif ckpt.kind == "cpnn":
            self._columns = [ckpt.group(f"col{i}")
                             for i in range(len(ckpt.meta["columns"]))]
            self.live_index = len(self._columns) - 1
        else:
            raise EvaluationError(f"unknown checkpoint kind {ckpt.kind!r}")

    @property
    def n_candidates(self) -> int:
        return len(self._columns) if self.kind == "cpnn" else len(self._nets)

    def reset(self) -> None:
        self._recent.clear()

    def _window_seq(self, x) -> np.ndarray:
        self._recent.append(np.asarray(x, dtype=float))
        seq = np.zeros((self.window, self.input_dim))
        got = len(self._recent)
        seq[self.window - got:] = np.asarray(self._recent, dtype=float)
        return seq

    def step(self, x, only: int | None = None) -> list:
        """Advance the window and return per-candidate probabilities.

        With ``only=k`` just candidate k's probability is computed (entries
        for the others are None); the stack variant still runs the columns
        below k that feed it laterally.
        """
        seq = self._window_seq(x)
        out = [None] * self.n_candidates
        if self.kind == "cpnn":
            upto = self.n_candidates if only is None else only + 1
            logits = _stack_logits(seq, self._columns[:upto])
            for k, logit in enumerate(logits):
                out[k] = float(sigmoid(logit))
            if only is not None:
                out = [p if k == only else None for k, p in enumerate(out)]
            return out
        targets = range(self.n_candidates) if only is None else [only]
        for k in targets:
            out[k] = float(sigmoid(_gru_logit(seq, self._nets[k])))
        return out

    def predict_sequence(self, seq, index: int | None = None) -> float:
        """Probability from one candidate (default: the live one) on an
        explicit sequence; does not touch the rolling window."""
        k = self.live_index if index is None else index
        if self.kind == "cpnn":
            return float(sigmoid(_stack_logits(seq, self._columns[:k + 1])[k]))
        return float(sigmoid(_gru_logit(np.asarray(seq, dtype=float), self._nets[k])))


class InferenceModel:
    """Inference-only replay of a checkpoint: the live candidate behind the
    same predict interface the learners expose."""

    def __init__(self, ckpt: ModelCheckpoint):
        self._group = CandidateGroup(ckpt)

    def predict(self, x) -> float:
        probs = self._group.step(x, only=self._group.live_index)
        return probs[self._group.live_index]

    def predict_sequence(self, seq) -> float:
        return self._group.predict_sequence(seq)


def restore(ckpt: ModelCheckpoint) -> InferenceModel:
    return InferenceModel(ckpt)


def score_checkpoint_on_test_set(ckpt: ModelCheckpoint, X, y, *,
                                 selection_points: int = SELECTION_POINTS,
                                 record_scores: list | None = None) -> float:
    """Kappa of one checkpoint over one test set, fed chronologically.

    Checkpoints holding several candidates race them for the first
    ``selection_points`` points: each candidate is scored prequentially on
    its own predictions, the emitted prediction at each point comes from
    the best candidate on the points before it (newest wins ties), and
    after the race only the leader answers.
    """
    group = CandidateGroup(ckpt)
    n = group.n_candidates
    emitted = KappaAccumulator()
    per_candidate = [KappaAccumulator() for _ in range(n)]
    leader = group.live_index
    locked = n == 1
    for t in range(len(X)):
        if locked or t >= selection_points:
            locked = True
            probs = group.step(X[t], only=leader)
        else:
            probs = group.step(X[t])
        if y[t] == UNLABELED:
            continue
        truth = int(y[t])
        emitted.update(int(probs[leader] >= PREDICTION_THRESHOLD), truth)
        if not locked:
            for k in range(n):
                per_candidate[k].update(int(probs[k] >= PREDICTION_THRESHOLD), truth)
            leader = max(range(n), key=lambda k: (per_candidate[k].kappa, k))
    if record_scores is not None:
        record_scores.extend(acc.kappa for acc in per_candidate)
    return emitted.kappa


def run_cl_eval(checkpoints, test_sets, *,
                selection_points: int = SELECTION_POINTS) -> np.ndarray:
    """Lower-triangular score matrix: entry (i, j) is checkpoint i's kappa
    on concept j's test set, for j <= i.  Upper triangle is NaN."""
    if len(checkpoints) != len(test_sets):
        raise EvaluationError(
            f"{len(checkpoints)} checkpoints vs {len(test_sets)} test sets")
    n = len(checkpoints)
    R = np.full((n, n), np.nan)
    for i, ckpt in enumerate(checkpoints):
        for j in range(i + 1):
            X, y = test_sets[j]
            R[i, j] = score_checkpoint_on_test_set(
                ckpt, X, y, selection_points=selection_points)
    return R
