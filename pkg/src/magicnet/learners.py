"""The streaming learners.

All three share the same online loop: every arriving point is predicted
from the window of the last W feature vectors (zero-padded at cold start);
once its true label arrives it joins a mini-batch, and a full mini-batch is
turned into stride-1 sliding-window sequences (spanning into the previous
batch's tail) and trained for a fixed number of epochs with Adam.

* ContinuousGRU ignores drift detections: it simply keeps adapting.
* MagicNet freezes its weights at a detection and races three options --
  masks trained from random init, masks fine-tuned from the previous
  concept, and a hidden-layer expansion -- committing to the best one by
  prequential kappa after a fixed number of training batches.  Winning
  weights are baked into a new frozen base at the next detection, and every
  completed concept's network is kept in a persistent store.
* ContinuousPNN freezes the current column at a detection and appends a new
  column that reads each item's features concatenated with the previous
  column's hidden state at the same timestep.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit as sigmoid

from . import masking, nn
from .checkpoint import ModelCheckpoint
from .masking import ConceptRecord, FrozenBase, MaskStore
from .metrics import KappaAccumulator

logger = logging.getLogger(__name__)

PREDICTION_THRESHOLD = 0.5

# tie order on equal kappa: cheapest first, expansion last
OPTION_PRIORITY = {"mask_finetune": 0, "mask_random": 1, "expand": 2}


@dataclass
class TrainEvent:
    """What happened when a mini-batch was trained."""

    n_sequences: int
    losses: dict                 # option kind -> per-epoch mean losses
    committed: str | None = None  # option kind if this batch ended an ensemble


def _count_params(tensors) -> int:
    return int(sum(np.asarray(v).size for v in tensors.values()))


def pnn_stack_logits(seq, columns: list) -> list:
    """Per-column logits of a progressive stack on one (W, input) sequence.

    Column k > 0 consumes each item's features concatenated with column
    k-1's hidden state at the same timestep.
    """
    seq = np.asarray(seq, dtype=float)
    logits = []
    lateral = None  # previous column's per-step hidden states
    for k, params in enumerate(columns):
        if k == 0:
            inputs = list(seq)
        else:
            inputs = [np.concatenate([x, h]) for x, h in zip(seq, lateral)]
        lateral = nn.forward_states(inputs, params)
        logits.append(float((params["w"] @ lateral[-1]) + params["b"]))
    return logits


# --------------------------------------------------------------------------
# Trainable network variants
# --------------------------------------------------------------------------

class _DirectNet:
    """Plain fully-learnable GRU + head."""

    kind = "plastic"

    def __init__(self, params: dict, lr: float):
        self.params = params
        self.adam = nn.adam_init(params, lr=lr)
        self.kappa = KappaAccumulator()

    @property
    def hidden_dim(self) -> int:
        return self.params["Uz"].shape[0]

    def predict_proba(self, seq) -> float:
        return float(sigmoid(nn.forward_logit(seq, self.params)))

    def train(self, X3, y, epochs: int) -> list:
        losses = []
        for _ in range(epochs):
            logits, cache = nn.forward_sequence(X3, self.params)
            losses.append(nn.bce_loss(logits, y))
            grads = nn.backward_sequence(cache, y)
            self.params, self.adam = nn.adam_step(self.params, grads, self.adam)
        return losses

    def effective_params(self) -> dict:
        return nn.copy_params(self.params)

    def raw_mask(self):
        return None

    def trainable_count(self) -> int:
        return _count_params(self.params)


class _MaskNet:
    """Frozen base with trainable sigmoid-mask pre-activations."""

    def __init__(self, base: FrozenBase, mask: dict, lr: float, kind: str):
        self.kind = kind
        self.base = base
        self.mask = mask
        self.adam = nn.adam_init(mask, lr=lr)
        self.kappa = KappaAccumulator()
        self._eff = None  # effective weights, recomputed after each update

    @property
    def hidden_dim(self) -> int:
        return self.base.hidden_dim

    def _effective(self) -> dict:
        if self._eff is None:
            self._eff = masking.apply_mask(self.base, self.mask)
        return self._eff

    def predict_proba(self, seq) -> float:
        return float(sigmoid(nn.forward_logit(seq, self._effective())))

    def train(self, X3, y, epochs: int) -> list:
        losses = []
        for _ in range(epochs):
            eff = masking.apply_mask(self.base, self.mask)
            logits, cache = nn.forward_sequence(X3, eff)
            losses.append(nn.bce_loss(logits, y))
            grads = masking.mask_pullback(self.base, self.mask,
                                          nn.backward_sequence(cache, y))
            self.mask, self.adam = nn.adam_step(self.mask, grads, self.adam)
        self._eff = None
        return losses

    def effective_params(self) -> dict:
        return masking.apply_mask(self.base, self.mask)

    def raw_mask(self):
        return masking.init_mask_finetune(self.mask)

    def trainable_count(self) -> int:
        return _count_params(self.mask)


class _ExpandNet:
    """Frozen, masked base plus learnable new hidden units."""

    kind = "expand"

    def __init__(self, ep: masking.ExpandedParams, lr: float):
        self.ep = ep
        trainable = {**ep.mask, **ep.new}
        self.adam = nn.adam_init(trainable, lr=lr)
        self.kappa = KappaAccumulator()
        self._eff = None  # materialized full-size weights for prediction

    @property
    def hidden_dim(self) -> int:
        return self.ep.hidden_dim

    def predict_proba(self, seq) -> float:
        if self._eff is None:
            self._eff = masking.expanded_effective(self.ep)
        return float(sigmoid(nn.forward_logit(seq, self._eff)))

    def train(self, X3, y, epochs: int) -> list:
        losses = []
        for _ in range(epochs):
            logits, cache = masking.expanded_forward(X3, self.ep)
            losses.append(nn.bce_loss(logits, y))
            grads = masking.expanded_backward(cache, y, self.ep)
            trainable = {**self.ep.mask, **self.ep.new}
            trainable, self.adam = nn.adam_step(trainable, grads, self.adam)
            self.ep = masking.ExpandedParams(
                base=self.ep.base,
                mask={k: trainable[k] for k in self.ep.mask},
                new={k: trainable[k] for k in self.ep.new},
                exp_size=self.ep.exp_size)
        self._eff = None
        return losses

    def effective_params(self) -> dict:
        return masking.expanded_effective(self.ep)

    def raw_mask(self):
        return masking.init_mask_finetune(self.ep.mask)

    def trainable_count(self) -> int:
        return _count_params(self.ep.mask) + _count_params(self.ep.new)


# --------------------------------------------------------------------------
# Shared streaming machinery
# --------------------------------------------------------------------------

class _SlidingWindowLearner:
    kind = "base"

    def __init__(self, input_dim: int, *, hidden_size: int = 50, window: int = 10,
                 batch_size: int = 128, epochs: int = 10, lr: float = 0.01,
                 seed: int = 0):
        if window < 1 or batch_size < 1 or epochs < 1:
            raise ValueError("window, batch_size and epochs must be positive")
        self.input_dim = input_dim
        self.hidden_size = hidden_size
        self.window = window
        self.batch_size = batch_size
        self.epochs = epochs
        self.lr = lr
        self.seed = seed
        self._rng = np.random.default_rng(seed)
        self._recent = deque(maxlen=window)
        self._batch_x: list = []
        self._batch_y: list = []
        self._tail: list = []
        self.batches_trained = 0

    # -- prediction ---------------------------------------------------------

    def _padded_window(self) -> np.ndarray:
        seq = np.zeros((self.window, self.input_dim))
        if self._recent:
            got = len(self._recent)
            seq[self.window - got:] = np.asarray(self._recent, dtype=float)
        return seq

    def predict(self, x) -> float:
        """Probability of class 1 for the arriving point; always available,
        cold starts are zero-padded."""
        x = np.asarray(x, dtype=float)
        if x.shape != (self.input_dim,):
            raise ValueError(f"expected feature vector of length {self.input_dim}, "
                             f"got shape {x.shape}")
        self._recent.append(x)
        return self._predict_current(self._padded_window())

    def predict_sequence(self, seq) -> float:
        """Inference on an explicit (window, input) sequence; does not touch
        the rolling window."""
        return self._predict_current(np.asarray(seq, dtype=float))

    # -- training -----------------------------------------------------------

    def learn_one(self, x, y) -> TrainEvent | None:
        """Buffer the labeled point; train exactly when the mini-batch is
        full.  Returns the train event when one fires."""
        self._before_learn(int(y))
        self._batch_x.append(np.asarray(x, dtype=float))
        self._batch_y.append(int(y))
        if len(self._batch_x) < self.batch_size:
            return None
        return self._train_mini_batch()

    def _train_mini_batch(self) -> TrainEvent | None:
        pts = self._tail + self._batch_x
        n_seq = len(pts) - self.window + 1
        event = None
        if n_seq >= 1:
            arr = np.stack(pts)
            swv = np.lib.stride_tricks.sliding_window_view(arr, self.window, axis=0)
            X3 = np.ascontiguousarray(swv.transpose(0, 2, 1))
            start = self.window - 1 - len(self._tail)
            targets = np.asarray(self._batch_y[start:start + n_seq], dtype=float)
            event = self._train_sequences(X3, targets)
            self.batches_trained += 1
        if self.window > 1:
            self._tail = self._batch_x[-(self.window - 1):]
        self._batch_x, self._batch_y = [], []
        return event

    def _flush_partial(self) -> None:
        # points buffered across a detection may straddle the drift
        self._batch_x, self._batch_y = [], []
        self._tail = []

    def _before_learn(self, y: int) -> None:
        pass

    # -- to implement --------------------------------------------------------

    def _predict_current(self, seq) -> float:
        raise NotImplementedError

    def _train_sequences(self, X3, y) -> TrainEvent:
        raise NotImplementedError

    def on_drift_detected(self) -> None:
        raise NotImplementedError

    def snapshot(self, concept_index: int) -> ModelCheckpoint:
        raise NotImplementedError

    def parameter_count(self) -> int:
        raise NotImplementedError

    def _base_meta(self, concept_index: int) -> dict:
        return {
            "concept_index": concept_index,
            "input_dim": self.input_dim,
            "window": self.window,
            "seed": self.seed,
        }


class ContinuousGRU(_SlidingWindowLearner):
    """Continuously trained GRU; adapts through drifts by plain training and
    therefore forgets previous concepts."""

    kind = "cgru"

    def __init__(self, input_dim: int, **kwargs):
        super().__init__(input_dim, **kwargs)
        self._net = _DirectNet(nn.init_params(input_dim, self.hidden_size, self._rng),
                               lr=self.lr)

    def _predict_current(self, seq) -> float:
        return self._net.predict_proba(seq)

    def _train_sequences(self, X3, y) -> TrainEvent:
        losses = self._net.train(X3, y, self.epochs)
        return TrainEvent(n_sequences=len(y), losses={"plastic": losses})

    def on_drift_detected(self) -> None:
        pass  # by design: no drift reaction

    def snapshot(self, concept_index: int) -> ModelCheckpoint:
        meta = self._base_meta(concept_index)
        meta["hidden"] = self._net.hidden_dim
        tensors = {f"net/{k}": v for k, v in self._net.effective_params().items()}
        return ModelCheckpoint(kind=self.kind, meta=meta, tensors=tensors)

    def parameter_count(self) -> int:
        return self._net.trainable_count()


class MagicNet(_SlidingWindowLearner):
    """Masked, adaptively growing continual learner.

    Runs as a plain GRU until the first detection.  Each detection freezes
    the current knowledge, then an ensemble of mask-from-random,
    mask-fine-tuned, and expanded variants trains in parallel for
    ``ensemble_batches`` mini-batches while the best one (by prequential
    kappa since the detection) answers; afterwards only the best survives.
    The surviving option keeps training until the next detection bakes its
    effective weights into the next frozen base and stores the concept's
    network in a persistent record store.
    """

    kind = "magic"

    MODE_PLASTIC = "plastic"
    MODE_ENSEMBLE = "ensemble"
    MODE_COMMITTED = "committed"

    def __init__(self, input_dim: int, *, exp_size: int | None = None,
                 ensemble_batches: int = 30, **kwargs):
        super().__init__(input_dim, **kwargs)
        self.exp_size = exp_size if exp_size is not None else self.hidden_size // 2
        self.ensemble_batches = ensemble_batches
        self._plastic = _DirectNet(nn.init_params(input_dim, self.hidden_size, self._rng),
                                   lr=self.lr)
        self.mode = self.MODE_PLASTIC
        self.base: FrozenBase | None = None
        self.options: list = []
        self._committed = None
        self.store = MaskStore()
        self.batches_since_detection = 0
        self.detections_seen = 0
        self.decisions: list = []   # option kind chosen at each commit
        self._last_probs = None     # per-option probabilities awaiting labels

    # -- option bookkeeping --------------------------------------------------

    def _live_net(self):
        if self.mode == self.MODE_PLASTIC:
            return self._plastic
        if self.mode == self.MODE_COMMITTED:
            return self._committed
        return self._leader()

    def _leader(self):
        return min(self.options,
                   key=lambda op: (-op.kappa.kappa, OPTION_PRIORITY[op.kind]))

    # -- streaming hooks -----------------------------------------------------

    def _predict_current(self, seq) -> float:
        if self.mode != self.MODE_ENSEMBLE:
            return self._live_net().predict_proba(seq)
        probs = [(op, op.predict_proba(seq)) for op in self.options]
        self._last_probs = probs
        leader = self._leader()
        return next(p for op, p in probs if op is leader)

    def _before_learn(self, y: int) -> None:
        # prequential: score every live option with the prediction it made
        # before this label arrived, then let training proceed
        if self.mode == self.MODE_ENSEMBLE and self._last_probs is not None:
            for op, prob in self._last_probs:
                op.kappa.update(int(prob >= PREDICTION_THRESHOLD), y)
        self._last_probs = None

    def _train_sequences(self, X3, y) -> TrainEvent:
        if self.mode != self.MODE_ENSEMBLE:
            net = self._live_net()
            losses = {net.kind: net.train(X3, y, self.epochs)}
            return TrainEvent(n_sequences=len(y), losses=losses)
        losses = {op.kind: op.train(X3, y, self.epochs) for op in self.options}
        self.batches_since_detection += 1
        committed = None
        if self.batches_since_detection >= self.ensemble_batches:
            committed = self._commit().kind
        return TrainEvent(n_sequences=len(y), losses=losses, committed=committed)

    def _commit(self):
        winner = self._leader()
        self.decisions.append(winner.kind)
        self._committed = winner
        self.options = []
        self.mode = self.MODE_COMMITTED
        self._last_probs = None
        return winner

    # -- drift handling ------------------------------------------------------

    def on_drift_detected(self) -> None:
        self.detections_seen += 1
        self._flush_partial()
        concept_index = len(self.store) + 1
        if self.mode == self.MODE_PLASTIC:
            base = FrozenBase.from_params(self._plastic.params)
            self.store.append(ConceptRecord(
                concept_index=concept_index, option="plastic",
                params=base.params, hidden_dim=base.hidden_dim, mask=None))
        else:
            if self.mode == self.MODE_ENSEMBLE:
                # detection arrived mid-ensemble: commit the current leader
                # now, then start over from its composed weights
                winner = self._commit()
            else:
                winner = self._committed
            state = winner.ep if winner.kind == "expand" else winner.mask
            base = masking.compose_winner(self.base, winner.kind, state,
                                          self.store, concept_index)
        self.base = base
        self._spawn_ensemble()

    def _spawn_ensemble(self) -> None:
        base, rng = self.base, self._rng
        random_mask = masking.init_mask_random(base, rng)
        previous = self.store.last_mask()
        if previous is None:
            logger.info("no stored mask to fine-tune from; falling back to random init")
            finetune_mask = masking.init_mask_random(base, rng)
        else:
            prev_mask, prev_hidden = previous
            if prev_hidden != base.hidden_dim:
                prev_mask = masking.extend_mask(prev_mask, prev_hidden, base)
            finetune_mask = masking.init_mask_finetune(prev_mask)
        options = [
            _MaskNet(base, finetune_mask, self.lr, kind="mask_finetune"),
            _MaskNet(base, random_mask, self.lr, kind="mask_random"),
            _ExpandNet(masking.build_expanded(base, self.exp_size, rng), self.lr),
        ]
        self.options = options
        self._committed = None
        self.mode = self.MODE_ENSEMBLE
        self.batches_since_detection = 0
        self._last_probs = None

    # -- snapshots ------------------------------------------------------------

    def snapshot(self, concept_index: int) -> ModelCheckpoint:
        records = list(self.store.records)
        live = self._live_net()
        live_record = ConceptRecord(
            concept_index=len(self.store) + 1,
            option=live.kind,
            params=live.effective_params(),
            hidden_dim=live.hidden_dim,
            mask=live.raw_mask())
        records.append(live_record)
        meta = self._base_meta(concept_index)
        meta["records"] = [
            {"tag": r.option, "hidden": r.hidden_dim, "has_mask": r.mask is not None,
             "concept_index": r.concept_index}
            for r in records]
        meta["live"] = len(records) - 1
        meta["decisions"] = list(self.decisions)
        tensors = {}
        for i, rec in enumerate(records):
            for k, v in rec.params.items():
                tensors[f"rec{i}/{k}"] = v
            if rec.mask is not None:
                for k, v in rec.mask.items():
                    tensors[f"rec{i}/mask/{k}"] = v
        return ModelCheckpoint(kind=self.kind, meta=meta, tensors=tensors)

    def parameter_count(self) -> int:
        live = self._live_net()
        total = live.trainable_count()
        if self.base is not None:
            total += _count_params(self.base.params)
        for rec in self.store.records:
            total += _count_params(rec.params)
            if rec.mask is not None:
                total += _count_params(rec.mask)
        return total


class ContinuousPNN(_SlidingWindowLearner):
    """Progressive columns over the stream: a detection freezes the current
    column and appends a new one whose per-item input is the feature vector
    concatenated with the previous column's hidden state."""

    kind = "cpnn"

    def __init__(self, input_dim: int, **kwargs):
        super().__init__(input_dim, **kwargs)
        self.columns = [_DirectNet(nn.init_params(input_dim, self.hidden_size, self._rng),
                                   lr=self.lr)]

    @property
    def n_columns(self) -> int:
        return len(self.columns)

    # -- stack forward --------------------------------------------------------

    def _hidden_sequence(self, X3, params) -> np.ndarray:
        """All per-step hidden states of one column: (n, W, hidden)."""
        n, steps, _ = X3.shape
        out = np.empty((n, steps, params["Uz"].shape[0]))
        h = np.zeros((n, params["Uz"].shape[0]))
        for t in range(steps):
            h, _ = nn.gru_cell_forward(X3[:, t, :], h, params)
            out[:, t, :] = h
        return out

    def _column_input(self, X3, upto: int) -> np.ndarray:
        """Input tensor for column ``upto``: features, laterally augmented
        with the previous column's same-timestep hidden states."""
        A = X3
        for k in range(upto):
            H3 = self._hidden_sequence(A, self.columns[k].params)
            A = np.concatenate([X3, H3], axis=2)
        return A

    def stack_logits(self, seq) -> list:
        """Per-column logits for one (window, input) sequence."""
        return pnn_stack_logits(seq, [col.params for col in self.columns])

    def forward_sequence(self, seq) -> float:
        """Stack logit: the last column's output."""
        return self.stack_logits(seq)[-1]

    def _predict_current(self, seq) -> float:
        return float(sigmoid(self.forward_sequence(seq)))

    # -- streaming hooks -------------------------------------------------------

    def _train_sequences(self, X3, y) -> TrainEvent:
        A3 = self._column_input(X3, len(self.columns) - 1)
        losses = self.columns[-1].train(A3, y, self.epochs)
        return TrainEvent(n_sequences=len(y), losses={f"column{len(self.columns)}": losses})

    def on_drift_detected(self) -> None:
        self._flush_partial()
        for arr in self.columns[-1].params.values():
            arr.setflags(write=False)
        self.columns.append(_DirectNet(
            nn.init_params(self.input_dim + self.hidden_size, self.hidden_size, self._rng),
            lr=self.lr))

    def snapshot(self, concept_index: int) -> ModelCheckpoint:
        meta = self._base_meta(concept_index)
        meta["columns"] = [{"hidden": col.hidden_dim,
                            "input_dim": col.params["Wz"].shape[1]}
                           for col in self.columns]
        tensors = {}
        for i, col in enumerate(self.columns):
            for k, v in col.effective_params().items():
                tensors[f"col{i}/{k}"] = v
        return ModelCheckpoint(kind=self.kind, meta=meta, tensors=tensors)

    def parameter_count(self) -> int:
        return sum(col.trainable_count() for col in self.columns)


LEARNERS = {
    "cgru": ContinuousGRU,
    "magic": MagicNet,
    "cpnn": ContinuousPNN,
}


def make_learner(kind: str, input_dim: int, **kwargs) -> _SlidingWindowLearner:
    if kind not in LEARNERS:
        raise ValueError(f"unknown learner {kind!r}; expected one of {sorted(LEARNERS)}")
    return LEARNERS[kind](input_dim, **kwargs)
