"""Streaming continual learning with a masked, selectively expanding
online GRU, plus the stream generators, simulated drift detectors, and
prequential / continual-learning evaluation harness around it."""

__version__ = "0.1.0"

from .checkpoint import (CheckpointError, CheckpointFormatError,
                         CheckpointTruncatedError, CheckpointVersionError,
                         ModelCheckpoint, load_checkpoint, save_checkpoint)
from .detectors import DetectionSchedule, build_schedule, measure_schedule
from .evaluation import (CandidateGroup, InferenceModel, PrequentialResult,
                         restore, run_cl_eval, run_prequential,
                         score_checkpoint_on_test_set)
from .learners import (LEARNERS, ContinuousGRU, ContinuousPNN, MagicNet,
                       TrainEvent, make_learner)
from .masking import (ConceptRecord, ExpandedParams, FrozenBase, MaskStore,
                      apply_mask, build_expanded, compose_winner,
                      expanded_effective, expanded_forward, init_mask_finetune,
                      init_mask_random)
from .metrics import (KappaAccumulator, avg_metric, bwt_defined, bwt_metric,
                      cohen_kappa)
from .runner import ExperimentConfig, replay, run, run_seed
from .streams import (BoundaryFunction, ConfigurationError, LabelFunction,
                      RealSeries, Stream, StreamConfiguration, StreamDataError,
                      build_real_configuration, build_srw_configuration,
                      dump_stream, generate_stream, ingest_csv, label_real,
                      load_stream, sample_boundary_pool, temporal_augment)
