"""Cohen's Kappa (one-shot and incremental) and the continual-learning
score aggregates over a lower-triangular score matrix."""

from __future__ import annotations

import numpy as np


def cohen_kappa(confusion) -> float:
    """Chance-corrected agreement from a 2x2 confusion matrix.

    ``confusion[i][j]`` counts points with prediction i and true label j.
    kappa = (p_o - p_e) / (1 - p_e).  When the expected agreement p_e is 1
    (all mass in a single row and column) kappa is undefined and reported
    as 0 by convention.
    """
    c = np.asarray(confusion, dtype=float)
    if c.shape != (2, 2):
        raise ValueError(f"expected a 2x2 confusion matrix, got {c.shape}")
    total = c.sum()
    if total <= 0:
        raise ValueError("empty confusion matrix")
    p_o = np.trace(c) / total
    pred_marginals = c.sum(axis=1) / total
    true_marginals = c.sum(axis=0) / total
    p_e = float(pred_marginals @ true_marginals)
    if p_e >= 1.0:
        return 0.0
    return float((p_o - p_e) / (1.0 - p_e))


class KappaAccumulator:
    """Incremental 2x2 confusion counts with kappa read-off.

    Used for prequential scoring: update with the prediction made before
    the model trained on the point, then read ``kappa``.
    """

    def __init__(self):
        self._counts = np.zeros((2, 2), dtype=np.int64)

    def update(self, prediction: int, truth: int) -> None:
        self._counts[int(prediction), int(truth)] += 1

    def reset(self) -> None:
        self._counts[:] = 0

    @property
    def total(self) -> int:
        return int(self._counts.sum())

    @property
    def counts(self) -> np.ndarray:
        return self._counts.copy()

    @property
    def kappa(self) -> float:
        if self.total == 0:
            return 0.0
        return cohen_kappa(self._counts)


def _check_lower_triangle(r: np.ndarray) -> np.ndarray:
    r = np.asarray(r, dtype=float)
    if r.ndim != 2 or r.shape[0] != r.shape[1]:
        raise ValueError(f"score matrix must be square, got {r.shape}")
    lower = np.tril(np.ones_like(r, dtype=bool))
    if not np.all(np.isfinite(r[lower])):
        raise ValueError("lower triangle contains non-finite scores")
    return r


def avg_metric(r) -> float:
    """Mean score over the lower triangle: checkpoints i evaluated on all
    concepts j <= i, divided by N(N+1)/2."""
    r = _check_lower_triangle(r)
    n = r.shape[0]
    lower = np.tril(np.ones_like(r, dtype=bool))
    return float(r[lower].sum() / (n * (n + 1) / 2.0))


def bwt_metric(r) -> float:
    """Mean backward transfer: how much checkpoint i's score on an earlier
    concept j < i differs from the score right after learning j.

    Undefined for a single concept; reported as 0 in that case.
    """
    r = _check_lower_triangle(r)
    n = r.shape[0]
    if n < 2:
        return 0.0
    total = 0.0
    strict = np.tril(np.ones_like(r, dtype=bool), k=-1)
    diag = np.diag(r)
    total = (r - diag[None, :])[strict].sum()
    return float(total / (n * (n - 1) / 2.0))


def bwt_defined(r) -> bool:
    r = np.asarray(r)
    return r.shape[0] >= 2
