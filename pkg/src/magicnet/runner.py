"""Reproducible experiment runs binding streams, detector schedules,
learners and both evaluations together.

One run = one JSON config + a list of seeds.  Per seed it builds the
configuration and stream, simulates the detector, drives the prequential
loop, runs CL evaluation over the per-concept checkpoints, and writes
machine-readable result files (full float precision) plus a manifest.
Reruns with the same config and seed produce byte-identical result files;
completed seeds are skipped on resume.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import save_checkpoint
from .detectors import build_schedule
from .evaluation import run_cl_eval, run_prequential
from .learners import LEARNERS, make_learner
from .metrics import avg_metric, bwt_defined, bwt_metric
from .streams import (ConfigurationError, RealSeries, Stream, build_real_configuration,
                      build_srw_configuration, concat_series, dump_stream,
                      generate_real_stream, generate_stream, ingest_csv, load_stream,
                      temporal_augment)

MANIFEST_VERSION = 1

HYPERPARAM_DEFAULTS = {
    "batch_size": 128,
    "epochs": 10,
    "lr": 0.01,
    "window": 10,
    "ensemble_batches": 30,
    "augment_order": 0,
    # hidden defaults to 50 for synthetic sources, 25 for CSV sources;
    # exp_size defaults to half the hidden size
    "hidden": None,
    "exp_size": None,
}


@dataclass
class ExperimentConfig:
    source: object                    # "srw" | {"csv": [...], ...}
    learner: str
    n_concepts: int
    concept_length: int | None
    detector: dict
    seeds: list
    hyperparams: dict = field(default_factory=dict)
    workers: int = 1
    out: str | None = None
    trace: bool = False
    dump_streams: bool = False

    def __post_init__(self):
        self.validate()
        hp = dict(HYPERPARAM_DEFAULTS)
        hp.update(self.hyperparams)
        if hp["hidden"] is None:
            hp["hidden"] = 50 if self.source_kind == "srw" else 25
        if hp["exp_size"] is None:
            hp["exp_size"] = hp["hidden"] // 2
        self.hyperparams = hp

    @property
    def source_kind(self) -> str:
        return self.source if isinstance(self.source, str) else "csv"

    def validate(self) -> None:
        if self.learner not in LEARNERS:
            raise ConfigurationError(
                f"learner: unknown value {self.learner!r}; "
                f"allowed: {sorted(LEARNERS)}")
        if isinstance(self.source, str):
            if self.source != "srw":
                raise ConfigurationError(
                    f"source: unknown value {self.source!r}; allowed: 'srw' "
                    f"or an object with a 'csv' key")
            if not self.concept_length:
                raise ConfigurationError("concept_length: required for srw sources")
        elif isinstance(self.source, dict):
            for key in ("csv", "features", "target", "k"):
                if key not in self.source:
                    raise ConfigurationError(f"source.{key}: required for csv sources")
        else:
            raise ConfigurationError("source: must be 'srw' or a csv object")
        if self.n_concepts < 1:
            raise ConfigurationError("n_concepts: must be >= 1")
        if not self.seeds:
            raise ConfigurationError("seeds: need at least one seed")
        det = self.detector or {}
        for key in ("precision", "recall"):
            v = det.get(key)
            if not isinstance(v, (int, float)) or not (0.0 < v <= 1.0):
                raise ConfigurationError(
                    f"detector.{key}: must be a number in (0, 1], got {v!r}")
        unknown = set(self.hyperparams) - set(HYPERPARAM_DEFAULTS)
        if unknown:
            raise ConfigurationError(
                f"hyperparams: unknown keys {sorted(unknown)}; "
                f"allowed: {sorted(HYPERPARAM_DEFAULTS)}")

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}: not valid JSON: {exc}") from None
        known = {"source", "learner", "n_concepts", "concept_length", "detector",
                 "seeds", "hyperparams", "workers", "out", "trace", "dump_streams"}
        unknown = set(raw) - known
        if unknown:
            raise ConfigurationError(
                f"{path}: unknown config keys {sorted(unknown)}; allowed: {sorted(known)}")
        for key in ("source", "learner", "n_concepts", "detector", "seeds"):
            if key not in raw:
                raise ConfigurationError(f"{path}: missing required key {key!r}")
        raw.setdefault("concept_length", None)
        return cls(**raw)

    def echo(self) -> dict:
        return {
            "source": self.source,
            "learner": self.learner,
            "n_concepts": self.n_concepts,
            "concept_length": self.concept_length,
            "detector": self.detector,
            "seeds": list(self.seeds),
            "hyperparams": dict(self.hyperparams),
            "workers": self.workers,
            "trace": self.trace,
            "dump_streams": self.dump_streams,
        }


def _fmt(value) -> str:
    if value is None:
        return "nan"
    return repr(float(value))


def _write_csv(path: Path, header: list, rows: list) -> None:
    lines = [",".join(header)]
    lines += [",".join(str(c) for c in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")


def _prepare_series(config: ExperimentConfig):
    """Ingest CSV sources once; returns (series, per_file_lengths) or None."""
    if config.source_kind != "csv":
        return None
    src = config.source
    paths = src["csv"]
    if isinstance(paths, (str, Path)):
        paths = [paths]
    parts = [ingest_csv(p, src["features"], src["target"],
                        missing_tokens=tuple(src.get("missing_tokens", ("",))),
                        tumbling=src.get("tumbling"))
             for p in paths]
    lengths = [len(p) for p in parts]
    return concat_series(parts), lengths


def _build_stream(config: ExperimentConfig, seed: int, prepared, rng) -> Stream:
    if config.source_kind == "srw":
        cfg = build_srw_configuration(config.n_concepts, config.concept_length,
                                      seed=rng)
        stream = generate_stream(cfg, rng=rng)
    else:
        series, lengths = prepared
        source_lengths = lengths if len(lengths) > 1 else len(series)
        cfg = build_real_configuration(source_lengths, config.n_concepts,
                                       k=config.source["k"], seed=rng,
                                       concept_length=config.concept_length)
        stream = generate_real_stream(cfg, series)
    stream.meta["seed"] = seed
    order = config.hyperparams["augment_order"]
    if order:
        stream = temporal_augment(stream, order)
    return stream


def _make_learner(config: ExperimentConfig, input_dim: int, learner_seed: int):
    hp = config.hyperparams
    kwargs = dict(hidden_size=hp["hidden"], window=hp["window"],
                  batch_size=hp["batch_size"], epochs=hp["epochs"],
                  lr=hp["lr"], seed=learner_seed)
    if config.learner == "magic":
        kwargs["exp_size"] = hp["exp_size"]
        kwargs["ensemble_batches"] = hp["ensemble_batches"]
    return make_learner(config.learner, input_dim, **kwargs)


def _seed_children(seed: int):
    stream_ss, schedule_ss, learner_ss = np.random.SeedSequence(seed).spawn(3)
    learner_seed = int(learner_ss.generate_state(1)[0])
    return (np.random.default_rng(stream_ss), np.random.default_rng(schedule_ss),
            learner_seed)


def run_seed(config: ExperimentConfig, seed: int, out_dir, prepared=None,
             stream: Stream | None = None) -> dict:
    """One seed end to end; returns the manifest entry.  ``stream`` short-
    circuits generation (used by replay)."""
    out = Path(out_dir)
    started = time.perf_counter()
    stream_rng, schedule_rng, learner_seed = _seed_children(seed)
    if stream is None:
        stream = _build_stream(config, seed, prepared, stream_rng)
    schedule = build_schedule(stream.drifts, config.detector["precision"],
                              config.detector["recall"], len(stream),
                              seed=schedule_rng,
                              min_gap=config.hyperparams["window"])
    learner = _make_learner(config, stream.n_features, learner_seed)
    result = run_prequential(learner, stream, schedule, collect_trace=config.trace)
    R = run_cl_eval(result.checkpoints, result.test_sets)

    config_id = f"{config.source_kind}-s{seed}"
    _write_csv(out / f"prequential_seed{seed}.csv",
               ["configuration_id", "learner", "drift_index", "start_kappa", "end_kappa"],
               [[config_id, config.learner, e.index, _fmt(e.start_kappa), _fmt(e.end_kappa)]
                for e in result.report.entries])
    cl_rows = []
    n = R.shape[0]
    for i in range(n):
        for j in range(i + 1):
            cl_rows.append([config_id, config.learner, i + 1, j + 1, _fmt(R[i, j])])
    _write_csv(out / f"cl_seed{seed}.csv",
               ["configuration_id", "learner", "i", "j", "R"], cl_rows)
    if config.trace:
        _write_csv(out / f"trace_seed{seed}.csv",
                   ["t", "prediction", "label", "running_kappa"],
                   [[t, _fmt(p), label, _fmt(k)] for t, p, label, k in result.trace])
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    ckpt_files = []
    for idx, ckpt in enumerate(result.checkpoints, start=1):
        path = ckpt_dir / f"seed{seed}_concept{idx}.ckpt"
        save_checkpoint(ckpt, path)
        ckpt_files.append(path.name)
    if config.dump_streams:
        dump_dir = out / "dumps"
        dump_dir.mkdir(exist_ok=True)
        dump_stream(stream, dump_dir / f"seed{seed}_stream.csv")
    # summary last: its presence marks the seed as complete for resume
    _write_csv(out / f"summary_seed{seed}.csv",
               ["configuration_id", "learner", "avg", "bwt", "bwt_defined",
                "start", "end"],
               [[config_id, config.learner, _fmt(avg_metric(R)), _fmt(bwt_metric(R)),
                 int(bwt_defined(R)), _fmt(result.report.start), _fmt(result.report.end)]])
    return {
        "seed": seed,
        "schedule": [[t, tag] for t, tag in schedule.detections],
        "checkpoints": ckpt_files,
        "wall_time_s": time.perf_counter() - started,
        "stream_length": len(stream),
        "n_detections": len(schedule),
    }


def _seed_worker(config_dict: dict, seed: int, out_dir: str) -> dict:
    config = ExperimentConfig(**config_dict)
    prepared = _prepare_series(config)
    return run_seed(config, seed, out_dir, prepared=prepared)


def run(config: ExperimentConfig, out_dir=None) -> Path:
    """Run every seed of a config; skip seeds whose summary file already
    exists.  Returns the output directory."""
    out = Path(out_dir if out_dir is not None else (config.out or "runs"))
    out.mkdir(parents=True, exist_ok=True)
    pending = [s for s in config.seeds
               if not (out / f"summary_seed{s}.csv").exists()]
    skipped = [s for s in config.seeds if s not in pending]
    entries = []
    if pending:
        if config.workers > 1:
            args = {k: v for k, v in config.echo().items()}
            args["out"] = str(out)
            with ProcessPoolExecutor(max_workers=config.workers) as pool:
                futures = [pool.submit(_seed_worker, args, s, str(out)) for s in pending]
                entries = [f.result() for f in futures]
        else:
            prepared = _prepare_series(config)
            entries = [run_seed(config, s, out, prepared=prepared) for s in pending]
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "package_version": __version__,
        "config": config.echo(),
        "completed_seeds": sorted(set(skipped) | {e["seed"] for e in entries}),
        "skipped_existing": skipped,
        "runs": entries,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return out


def replay(config: ExperimentConfig, dump_path, out_dir) -> Path:
    """Re-run the pipeline on a dumped stream instead of generating one.

    The dump's metadata carries the seed it was generated with, so the
    schedule and learner are rebuilt identically and the results match an
    in-process run of the same seed byte for byte.
    """
    stream = load_stream(dump_path)
    seed = stream.meta.get("seed")
    if seed is None:
        raise ConfigurationError(
            f"{dump_path}: stream dump metadata carries no seed; cannot replay")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entry = run_seed(config, int(seed), out, stream=stream)
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "package_version": __version__,
        "config": config.echo(),
        "replayed_from": str(dump_path),
        "runs": [entry],
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return out
