"""Run configuration: the union of model, loss and trainer settings.

Backed by a `key = value` text file (# comments allowed); command-line flags
override file values which override defaults. Every field has a default
except the dataset/output paths. parse(render(config)) == config.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

from .errors import ConfigurationError
from .kvconfig import parse_kv_lines, render_kv
from .loss import LossConfig
from .model import ModelConfig

__all__ = ["RunConfig", "parse_run_config", "render_run_config"]


@dataclass
class RunConfig:
    # model
    input_size: int = 224
    in_channels: int = 3
    classes: int = 2
    levels: int = 3
    blocks: int = 3
    base_channels: int = 64
    downsample: int = 8
    head_dim: Optional[int] = None
    dropout: float = 0.1
    use_skip: bool = True
    use_dsl: bool = True
    scale_by_head_dim: bool = False
    skip_kernel: int = 3
    # loss
    alpha: float = 0.5
    beta: float = 0.5
    dice_smooth: float = 1.0
    mask_empty: bool = False
    mask_ce: bool = False
    # trainer
    epochs: int = 50
    batch: int = 8
    lr: float = 1e-4
    seed: int = 0
    parallel: bool = False
    # paths (no defaults that point anywhere)
    data: str = ""
    out: str = ""

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            width=self.input_size,
            height=self.input_size,
            in_channels=self.in_channels,
            classes=self.classes,
            levels=self.levels,
            blocks=self.blocks,
            base_channels=self.base_channels,
            downsample=self.downsample,
            head_dim=self.head_dim,
            dropout=self.dropout,
            alpha=self.alpha,
            beta=self.beta,
            use_skip_connections=self.use_skip,
            use_dsl=self.use_dsl,
            scale_by_head_dim=self.scale_by_head_dim,
            skip_kernel=self.skip_kernel,
        )

    def loss_config(self) -> LossConfig:
        return LossConfig(
            alpha=self.alpha,
            beta=self.beta,
            smooth=self.dice_smooth,
            mask_empty_classes=self.mask_empty,
            mask_ce_channels=self.mask_ce,
        )


def render_run_config(config: RunConfig) -> str:
    return render_kv(config)


def parse_run_config(text_or_path: Union[str, Path], overrides: Optional[dict] = None) -> RunConfig:
    """Parse config text (or a file path) and apply non-None overrides."""
    if isinstance(text_or_path, Path):
        if not text_or_path.exists():
            raise ConfigurationError(f"config file not found: {text_or_path}")
        text = text_or_path.read_text()
    else:
        text = text_or_path
    kwargs = parse_kv_lines(RunConfig, text.splitlines())
    if overrides:
        kwargs.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**kwargs)
