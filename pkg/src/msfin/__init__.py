"""Risk-anticipation model over dashcam-style feature sequences.

The package covers the full loop: a small reverse-mode tensor engine
(:mod:`msfin.tensor`), attention blocks (:mod:`msfin.attention`), multi-scale
temporal pooling (:mod:`msfin.pooling`), the model itself (:mod:`msfin.model`),
time-weighted losses (:mod:`msfin.losses`), anticipation metrics
(:mod:`msfin.metrics`), a synthetic scenario generator
(:mod:`msfin.scenarios`), a binary dataset container (:mod:`msfin.dataio`),
and a training/evaluation CLI (:mod:`msfin.cli`, installed as ``msfin``).
"""

from .dataio import SequenceRecord, load_dataset, read_record, write_dataset
from .errors import (
    CheckpointError,
    ConfigError,
    ContractError,
    DataError,
    MetricUndefinedError,
    MsfinError,
    NumericalAbortError,
)
from .losses import LossConfig, SequenceTarget, decay_weight, sequence_loss
from .metrics import (
    EvalReport,
    VideoPrediction,
    average_precision,
    at_recall,
    evaluate,
    mtta,
    tta,
)
from .model import (
    MsFINConfig,
    MsFINParams,
    RiskSeries,
    forward,
    forward_probs,
    init_msfin_params,
    load_checkpoint,
    save_checkpoint,
)
from .optim import AdamW, OptimizerConfig
from .pooling import MultiScaleConfig, msm_forward, window_sizes_from_fps
from .scenarios import GeneratedDataset, ScenarioSpec, generate_dataset, generate_scenario
from .tensor import Tensor, finite_diff_check
from .train import RunConfig, TrainingLog, run_ablation, stratified_split, train_run

__version__ = "0.1.0"

__all__ = [
    "AdamW",
    "CheckpointError",
    "ConfigError",
    "ContractError",
    "DataError",
    "EvalReport",
    "GeneratedDataset",
    "LossConfig",
    "MetricUndefinedError",
    "MsFINConfig",
    "MsFINParams",
    "MsfinError",
    "MultiScaleConfig",
    "NumericalAbortError",
    "OptimizerConfig",
    "RiskSeries",
    "RunConfig",
    "ScenarioSpec",
    "SequenceRecord",
    "SequenceTarget",
    "Tensor",
    "TrainingLog",
    "VideoPrediction",
    "at_recall",
    "average_precision",
    "decay_weight",
    "evaluate",
    "finite_diff_check",
    "forward",
    "forward_probs",
    "generate_dataset",
    "generate_scenario",
    "init_msfin_params",
    "load_checkpoint",
    "load_dataset",
    "mtta",
    "msm_forward",
    "read_record",
    "run_ablation",
    "save_checkpoint",
    "sequence_loss",
    "stratified_split",
    "train_run",
    "tta",
    "window_sizes_from_fps",
    "write_dataset",
    "__version__",
]
