import numpy as np
import pytest

from magicnet import checkpoint as cp
from magicnet.learners import ContinuousGRU, MagicNet


def make_ckpt():
    rng = np.random.default_rng(0)
    tensors = {
        "net/Wz": rng.standard_normal((4, 2)),
        "net/bz": rng.standard_normal(4),
        "net/b": np.array(0.25),
    }
    meta = {"concept_index": 3, "input_dim": 2, "window": 5, "hidden": 4, "seed": 9}
    return cp.ModelCheckpoint(kind="cgru", meta=meta, tensors=tensors)


class TestRoundTrip:
    def test_bit_exact_tensors_and_meta(self, tmp_path):
        ckpt = make_ckpt()
        path = tmp_path / "model.ckpt"
        cp.save_checkpoint(ckpt, path)
        loaded = cp.load_checkpoint(path)
        assert loaded.kind == "cgru"
        assert loaded.meta == ckpt.meta
        assert set(loaded.tensors) == set(ckpt.tensors)
        for k in ckpt.tensors:
            assert loaded.tensors[k].shape == ckpt.tensors[k].shape
            assert np.array_equal(loaded.tensors[k], ckpt.tensors[k])

    def test_loaded_tensors_are_write_locked(self, tmp_path):
        path = tmp_path / "model.ckpt"
        cp.save_checkpoint(make_ckpt(), path)
        loaded = cp.load_checkpoint(path)
        with pytest.raises(ValueError):
            loaded.tensors["net/Wz"][0, 0] = 1.0

    def test_magic_checkpoint_keeps_record_store(self, tmp_path):
        learner = MagicNet(2, hidden_size=4, window=3, batch_size=8, epochs=1, seed=0)
        rng = np.random.default_rng(1)
        for _ in range(16):
            x = rng.uniform(0, 1, 2)
            learner.predict(x)
            learner.learn_one(x, int(x.sum() > 1))
        learner.on_drift_detected()
        ckpt = learner.snapshot(concept_index=2)
        path = tmp_path / "magic.ckpt"
        cp.save_checkpoint(ckpt, path)
        loaded = cp.load_checkpoint(path)
        assert len(loaded.meta["records"]) == 2
        assert loaded.meta["records"][0]["tag"] == "plastic"
        # raw mask pre-activations ride along for mask-bearing records
        rec1 = loaded.group("rec1")
        assert any(k.startswith("mask/") for k in rec1)


class TestErrorKinds:
    def test_version_mismatch(self, tmp_path):
        path = tmp_path / "model.ckpt"
        cp.save_checkpoint(make_ckpt(), path)
        raw = bytearray(path.read_bytes())
        raw[4:8] = (99).to_bytes(4, "little")
        path.write_bytes(bytes(raw))
        with pytest.raises(cp.CheckpointVersionError):
            cp.load_checkpoint(path)

    def test_truncated_file(self, tmp_path):
        path = tmp_path / "model.ckpt"
        cp.save_checkpoint(make_ckpt(), path)
        raw = path.read_bytes()
        path.write_bytes(raw[:len(raw) // 2])
        with pytest.raises(cp.CheckpointTruncatedError):
            cp.load_checkpoint(path)

    def test_corrupt_length_field_is_flagged_not_a_crash(self, tmp_path):
        path = tmp_path / "model.ckpt"
        cp.save_checkpoint(make_ckpt(), path)
        raw = bytearray(path.read_bytes())
        raw[8:16] = (1 << 62).to_bytes(8, "little")  # absurd metadata length
        path.write_bytes(bytes(raw))
        with pytest.raises(cp.CheckpointFormatError):
            cp.load_checkpoint(path)

    def test_wrong_magic(self, tmp_path):
        path = tmp_path / "model.ckpt"
        path.write_bytes(b"JUNKJUNKJUNK")
        with pytest.raises(cp.CheckpointFormatError):
            cp.load_checkpoint(path)

    def test_trailing_garbage(self, tmp_path):
        path = tmp_path / "model.ckpt"
        cp.save_checkpoint(make_ckpt(), path)
        path.write_bytes(path.read_bytes() + b"x")
        with pytest.raises(cp.CheckpointFormatError):
            cp.load_checkpoint(path)
