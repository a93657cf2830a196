import numpy as np
import pytest

from magicnet import evaluation, nn
from magicnet.checkpoint import ModelCheckpoint
from magicnet.detectors import DetectionSchedule, build_schedule
from magicnet.evaluation import (EvaluationError, run_cl_eval, run_prequential,
                                 score_checkpoint_on_test_set)
from magicnet.learners import ContinuousGRU, MagicNet
from magicnet.metrics import KappaAccumulator
from magicnet.streams import Stream, build_srw_configuration, generate_stream


def synthetic_stream(n_concepts=2, length=3000, seed=0):
    cfg = build_srw_configuration(n_concepts, length, seed=seed)
    return generate_stream(cfg)


def perfect_schedule(stream, seed=0):
    return build_schedule(stream.drifts, 1.0, 1.0, len(stream), seed=seed)


def empty_schedule(stream):
    return DetectionSchedule(detections=[], target_precision=1.0,
                             target_recall=1.0, stream_length=len(stream))


def small_learner(cls, stream, seed=3, **extra):
    kw = dict(hidden_size=4, window=3, batch_size=8, epochs=1, lr=0.01, seed=seed)
    kw.update(extra)
    return cls(stream.n_features, **kw)


class FlippingLearner:
    """Deterministic scripted learner: predicts 1 until it has learned an
    odd number of points, then 0, flipping on every learn_one call.  Makes
    the report sensitive to the score-then-train ordering."""

    batch_size = 8

    def __init__(self):
        self.learned = 0

    def predict(self, x):
        return 1.0 if self.learned % 2 == 0 else 0.0

    def learn_one(self, x, y):
        self.learned += 1

    def on_drift_detected(self):
        pass

    def snapshot(self, concept_index):
        return ModelCheckpoint(kind="cgru",
                               meta={"concept_index": concept_index,
                                     "input_dim": 2, "window": 1, "hidden": 1},
                               tensors={})


class TestRunPrequential:
    def test_length_mismatch_raises(self):
        stream = synthetic_stream()
        schedule = DetectionSchedule(detections=[], target_precision=1.0,
                                     target_recall=1.0, stream_length=123)
        learner = small_learner(ContinuousGRU, stream)
        with pytest.raises(EvaluationError, match="schedule built for"):
            run_prequential(learner, stream, schedule)

    def test_concept_shorter_than_test_tail_raises(self):
        stream = synthetic_stream(length=1500)
        learner = small_learner(ContinuousGRU, stream)
        with pytest.raises(EvaluationError, match="withhold"):
            run_prequential(learner, stream, perfect_schedule(stream), test_tail=2000)

    def test_checkpoints_and_test_sets_per_concept(self):
        stream = synthetic_stream(n_concepts=3, length=1200)
        learner = small_learner(ContinuousGRU, stream)
        result = run_prequential(learner, stream, perfect_schedule(stream),
                                 test_tail=300)
        assert len(result.checkpoints) == 3
        assert [ckpt.meta["concept_index"] for ckpt in result.checkpoints] == [1, 2, 3]
        assert all(len(X) == 300 and len(y) == 300 for X, y in result.test_sets)

    def test_withheld_points_not_trained(self):
        stream = synthetic_stream(n_concepts=2, length=1000)
        learner = small_learner(ContinuousGRU, stream)
        run_prequential(learner, stream, empty_schedule(stream), test_tail=200)
        # 2 concepts x 800 scored points, batch size 8, partial batches kept
        assert learner.batches_trained == (2 * 800) // 8

    def test_start_anchored_at_detection_plus_fifty_batches(self):
        stream = synthetic_stream(n_concepts=2, length=3000, seed=4)
        schedule = perfect_schedule(stream, seed=1)
        learner = small_learner(ContinuousGRU, stream)
        result = run_prequential(learner, stream, schedule, test_tail=500)
        (entry,) = result.report.entries
        det = schedule.times[0]
        assert entry.detection_time == det
        assert entry.start_at == det + 50 * learner.batch_size
        assert entry.start_kappa is not None
        assert entry.end_kappa is not None
        assert entry.end_at == len(stream)

    def test_initial_concept_excluded(self):
        stream = synthetic_stream(n_concepts=2, length=3000, seed=5)
        learner = small_learner(ContinuousGRU, stream)
        result = run_prequential(learner, stream, perfect_schedule(stream),
                                 test_tail=500)
        # exactly one detection -> exactly one scored segment
        assert len(result.report.entries) == 1

    def test_identical_reports_for_cgru_and_magic_without_detections(self):
        stream = synthetic_stream(n_concepts=2, length=1200, seed=6)
        schedule = empty_schedule(stream)
        res_a = run_prequential(small_learner(ContinuousGRU, stream, seed=11),
                                stream, schedule, test_tail=300, collect_trace=True)
        res_b = run_prequential(small_learner(MagicNet, stream, seed=11),
                                stream, schedule, test_tail=300, collect_trace=True)
        assert res_a.report.entries == [] and res_b.report.entries == []
        for (ta, pa, la, ka), (tb, pb, lb, kb) in zip(res_a.trace, res_b.trace):
            assert (ta, la) == (tb, lb)
            assert pa == pb  # bit-identical probabilities
            assert ka == kb

    def test_test_then_train_order_is_load_bearing(self):
        # alternating labels scored against a learner that flips its
        # prediction after each training call: test-then-train pairs
        # prediction k with label k, train-then-test would shift by one
        X = np.zeros((64, 2))
        y = np.tile([1, 0], 32).astype(np.int8)
        stream = Stream(X=X, y=y, drifts=[], meta={})
        learner = FlippingLearner()
        result = run_prequential(learner, stream, empty_schedule(stream),
                                 test_tail=16, collect_trace=True)
        predictions = [int(p >= 0.5) for _, p, _, _ in result.trace]
        labels = [lab for _, _, lab, _ in result.trace]
        assert predictions == labels  # perfect under the correct order
        # the shifted pairing would score zero agreement instead
        shifted = [int(FlippingLearner().predict(None))] + predictions[:-1]
        assert sum(p == l for p, l in zip(shifted, labels)) < len(labels) / 2 + 1

    def test_trace_rows_only_for_scored_points(self):
        stream = synthetic_stream(n_concepts=2, length=1000, seed=7)
        learner = small_learner(ContinuousGRU, stream)
        result = run_prequential(learner, stream, empty_schedule(stream),
                                 test_tail=250, collect_trace=True)
        assert len(result.trace) == 2 * 750
        traced_ts = {t for t, _, _, _ in result.trace}
        for _, b in stream.concept_bounds():
            assert b - 1 not in traced_ts


def build_gru_checkpoint(params, window=3, input_dim=2, concept_index=1):
    return ModelCheckpoint(
        kind="cgru",
        meta={"concept_index": concept_index, "input_dim": input_dim,
              "window": window, "hidden": params["Uz"].shape[0]},
        tensors={f"net/{k}": v for k, v in params.items()})


def build_magic_checkpoint(nets, window=3, input_dim=2):
    meta = {"concept_index": len(nets), "input_dim": input_dim, "window": window,
            "records": [{"tag": "plastic", "hidden": p["Uz"].shape[0],
                         "has_mask": False, "concept_index": i + 1}
                        for i, p in enumerate(nets)],
            "live": len(nets) - 1}
    tensors = {}
    for i, p in enumerate(nets):
        for k, v in p.items():
            tensors[f"rec{i}/{k}"] = v
    return ModelCheckpoint(kind="magic", meta=meta, tensors=tensors)


class TestRunClEval:
    def test_single_concept_matrix(self):
        rng = np.random.default_rng(0)
        params = nn.init_params(2, 4, rng)
        ckpt = build_gru_checkpoint(params)
        X = rng.uniform(0, 1, (100, 2))
        y = (X.sum(axis=1) > 1).astype(np.int8)
        R = run_cl_eval([ckpt], [(X, y)])
        assert R.shape == (1, 1)
        assert np.isfinite(R[0, 0])

    def test_cgru_checkpoint_matches_manual_inference(self):
        rng = np.random.default_rng(1)
        params = nn.init_params(2, 4, rng)
        ckpt = build_gru_checkpoint(params, window=3)
        X = rng.uniform(0, 1, (200, 2))
        y = (X[:, 0] > 0.5).astype(np.int8)
        got = score_checkpoint_on_test_set(ckpt, X, y)
        acc = KappaAccumulator()
        window = []
        for t in range(200):
            window.append(X[t])
            seq = np.zeros((3, 2))
            tail = window[-3:]
            seq[3 - len(tail):] = tail
            logit, _ = nn.forward_sequence(seq, params)
            acc.update(int(logit >= 0.0), int(y[t]))
        assert got == pytest.approx(acc.kappa)

    def test_selection_equals_bruteforce_replay(self):
        rng = np.random.default_rng(2)
        nets = [nn.init_params(2, 4, rng) for _ in range(3)]
        ckpt = build_magic_checkpoint(nets)
        X = rng.uniform(0, 1, (800, 2))
        y = (X[:, 1] > 0.5).astype(np.int8)
        got = score_checkpoint_on_test_set(ckpt, X, y, selection_points=500)

        # independent replay with explicit per-candidate bookkeeping
        per = [KappaAccumulator() for _ in nets]
        emitted = KappaAccumulator()
        leader = len(nets) - 1
        window = []
        for t in range(800):
            window.append(X[t])
            seq = np.zeros((3, 2))
            tail = window[-3:]
            seq[3 - len(tail):] = tail
            probs = [1 / (1 + np.exp(-nn.forward_sequence(seq, p)[0])) for p in nets]
            emitted.update(int(probs[leader] >= 0.5), int(y[t]))
            if t < 500:
                for k, p in enumerate(nets):
                    per[k].update(int(probs[k] >= 0.5), int(y[t]))
                leader = max(range(len(nets)), key=lambda k: (per[k].kappa, k))
        assert got == pytest.approx(emitted.kappa)

    def test_pure_inference_leaves_checkpoints_untouched(self):
        rng = np.random.default_rng(3)
        nets = [nn.init_params(2, 4, rng) for _ in range(2)]
        ckpt = build_magic_checkpoint(nets)
        before = {k: v.copy() for k, v in ckpt.tensors.items()}
        X = rng.uniform(0, 1, (600, 2))
        y = (X[:, 0] > 0.5).astype(np.int8)
        run_cl_eval([ckpt], [(X, y)])
        for k in before:
            assert np.array_equal(before[k], ckpt.tensors[k])

    def test_mismatched_lengths_raise(self):
        rng = np.random.default_rng(4)
        ckpt = build_gru_checkpoint(nn.init_params(2, 4, rng))
        with pytest.raises(EvaluationError):
            run_cl_eval([ckpt], [])

    def test_lower_triangle_only(self):
        rng = np.random.default_rng(5)
        ckpts = [build_gru_checkpoint(nn.init_params(2, 4, rng), concept_index=i + 1)
                 for i in range(3)]
        sets = []
        for _ in range(3):
            X = rng.uniform(0, 1, (60, 2))
            sets.append((X, (X[:, 0] > 0.5).astype(np.int8)))
        R = run_cl_eval(ckpts, sets, selection_points=20)
        assert np.all(np.isnan(R[np.triu_indices(3, k=1)]))
        assert np.all(np.isfinite(R[np.tril_indices(3)]))


class TestEndToEndPrequentialPlusCl:
    def test_full_small_run(self):
        stream = synthetic_stream(n_concepts=3, length=900, seed=9)
        learner = small_learner(MagicNet, stream, ensemble_batches=5)
        result = run_prequential(learner, stream, perfect_schedule(stream),
                                 test_tail=200)
        R = run_cl_eval(result.checkpoints, result.test_sets, selection_points=100)
        assert R.shape == (3, 3)
        assert np.all(np.isfinite(R[np.tril_indices(3)]))
