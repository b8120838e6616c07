"""Joint fungal growth-stage classification and growth-time regression.

The package covers the full desk-scale pipeline: a deterministic
procedural dataset generator, compact image/text encoders fused by
element-wise summation, a classification head plus a transformer-based
time regression head, the multitask training loop, and an evaluation
harness with report and figure export. See the `fungaltime` CLI for the
end-to-end workflow.
"""

from .config import (
    EncoderConfig,
    GenConfig,
    ModelConfig,
    PipelineConfig,
    TrainConfig,
    STAGE_NAMES,
    load_pipeline_config,
)
from .encoders import NEUTRAL_PROMPT, Vocabulary, build_vocabulary, fuse, tokenize
from .errors import ConfigError, DataError, FungalTimeError, InputError, ShapeError
from .evaluation import EvalReport, confusion_matrix, evaluate, per_stage_mae, render_report
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .model import StageTimeEstimator, StageTimeNet, net_from_checkpoint
from .synthgen import (
    Sample,
    StageParams,
    describe_sample,
    generate_dataset,
    growth_params_from_time,
    read_manifest,
    render_stage_image,
)
from .training import (
    LossBreakdown,
    TimeScale,
    classification_loss,
    denormalize_time,
    fit,
    normalize_time,
    time_loss,
    total_loss,
)

__version__ = "0.1.0"

__all__ = [
    "EncoderConfig",
    "GenConfig",
    "ModelConfig",
    "PipelineConfig",
    "TrainConfig",
    "STAGE_NAMES",
    "load_pipeline_config",
    "NEUTRAL_PROMPT",
    "Vocabulary",
    "build_vocabulary",
    "fuse",
    "tokenize",
    "ConfigError",
    "DataError",
    "FungalTimeError",
    "InputError",
    "ShapeError",
    "EvalReport",
    "confusion_matrix",
    "evaluate",
    "per_stage_mae",
    "render_report",
    "Checkpoint",
    "load_checkpoint",
    "save_checkpoint",
    "StageTimeEstimator",
    "StageTimeNet",
    "net_from_checkpoint",
    "Sample",
    "StageParams",
    "describe_sample",
    "generate_dataset",
    "growth_params_from_time",
    "read_manifest",
    "render_stage_image",
    "LossBreakdown",
    "TimeScale",
    "classification_loss",
    "denormalize_time",
    "fit",
    "normalize_time",
    "time_loss",
    "total_loss",
]
