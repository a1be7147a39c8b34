"""Waveform source separation lab.

Length-preserving encoder-decoder separators with structural variants
(skip-path convolutions, concat blocks), random-weight regimes (U/J/L),
multi-stage refinement, identity-loss training, and projection-SDR
evaluation with a random-encoder proxy correlation study.
"""

__version__ = "0.1.0"

from .specs import ArchitectureSpec, FreezeSpec, MultiResSpec, ResPathSpec, model_name
from .model import Separator, build_separator, count_parameters, decimate, upsample_linear
from .variants import apply_res_path, build_multires_separator
from .freeze import FreezePartition, apply_freeze, verify_frozen
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint, snapshot
from .data import (
    DatasetSplit,
    Track,
    augment,
    export_dataset,
    load_dataset,
    sample_snippet,
    synth_dataset,
)
from .training import (
    EarlyStoppingSchedule,
    TrainConfig,
    TrainState,
    identity_loss,
    mse_loss,
    progressive_forward,
    progressive_loss,
    total_loss,
    train,
)
from .evaluation import (
    CorrelationReport,
    EvalReport,
    aggregate_stats,
    correlation_report,
    evaluate_model,
    sdr,
    segment_sdr,
    separate_track,
)

__all__ = [
    "ArchitectureSpec",
    "Checkpoint",
    "CorrelationReport",
    "DatasetSplit",
    "EarlyStoppingSchedule",
    "EvalReport",
    "FreezePartition",
    "FreezeSpec",
    "MultiResSpec",
    "ResPathSpec",
    "Separator",
    "Track",
    "TrainConfig",
    "TrainState",
    "aggregate_stats",
    "apply_freeze",
    "apply_res_path",
    "augment",
    "build_multires_separator",
    "build_separator",
    "correlation_report",
    "count_parameters",
    "decimate",
    "evaluate_model",
    "export_dataset",
    "identity_loss",
    "load_checkpoint",
    "load_dataset",
    "model_name",
    "mse_loss",
    "progressive_forward",
    "progressive_loss",
    "sample_snippet",
    "save_checkpoint",
    "sdr",
    "segment_sdr",
    "separate_track",
    "snapshot",
    "synth_dataset",
    "total_loss",
    "train",
    "upsample_linear",
    "verify_frozen",
]
