"""Hybrid CNN-encoder / Transformer-decoder segmentation library.

Self-contained: a numpy-backed reverse-mode autodiff engine (with an optional
compiled kernel extension), the segmentation model, surface-distance metrics,
dataset tooling, an Adam training harness and a CLI (`cts`).
"""

from .backend import KERNEL_BACKEND
from .errors import ConfigurationError, CtsError, DataError, InsufficientDataError, UsageError
from .gradcheck import GradcheckReport, gradcheck
from .loss import LossConfig, combined_loss
from .metrics import EvalReport, assd, boundary, compare_reports, dice, evaluate
from .model import (
    LevelDims,
    ModelConfig,
    SegModel,
    count_params,
    derive_dims,
    patch_flatten,
    patch_unflatten,
    sdpa,
)
from .rng import RngState
from .runconfig import RunConfig, parse_run_config, render_run_config
from .tensor import Tape, Tensor, backward
from .train import Adam, TrainRecord, evaluate_checkpoint, train
from .wsrt import wsrt

__version__ = "0.1.0"

__all__ = [
    "KERNEL_BACKEND",
    "ConfigurationError",
    "CtsError",
    "DataError",
    "InsufficientDataError",
    "UsageError",
    "GradcheckReport",
    "gradcheck",
    "LossConfig",
    "combined_loss",
    "EvalReport",
    "assd",
    "boundary",
    "compare_reports",
    "dice",
    "evaluate",
    "LevelDims",
    "ModelConfig",
    "SegModel",
    "count_params",
    "derive_dims",
    "patch_flatten",
    "patch_unflatten",
    "sdpa",
    "RngState",
    "RunConfig",
    "parse_run_config",
    "render_run_config",
    "Tape",
    "Tensor",
    "backward",
    "Adam",
    "TrainRecord",
    "evaluate_checkpoint",
    "train",
    "wsrt",
    "__version__",
]
