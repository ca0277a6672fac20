"""Combined cross-entropy + soft-Dice segmentation loss.

loss = alpha * CE + beta * Dice. CE is the mean over all pixels of the
negative log-probability at the target class. The Dice term forms one
overlap ratio per (sample, class) from softmax probabilities against the
one-hot target, smoothed by `smooth` in numerator and denominator, and
averages the complements. With mask_empty_classes, (sample, class) entries
whose ground truth is empty are dropped from that average; CE by default
still runs over all pixels (pixels of absent classes simply never occur as
targets). The alternative reading, where empty classes are also removed
from the CE softmax normalisation per sample, sits behind mask_ce_channels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import DataError
from .tensor import Tensor

__all__ = ["LossConfig", "combined_loss", "one_hot"]


@dataclass
class LossConfig:
    alpha: float = 0.5
    beta: float = 0.5
    smooth: float = 1.0
    mask_empty_classes: bool = False
    mask_ce_channels: bool = False  # alternative masking variant (off by default)

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.alpha + self.beta == 0:
            raise DataError(f"loss weights must be non-negative with alpha + beta > 0, got {self.alpha}, {self.beta}")


def one_hot(target: np.ndarray, classes: int, dtype=np.float32) -> np.ndarray:
    """(N, H, W) int labels -> (N, H, W, classes) one-hot."""
    eye = np.eye(classes, dtype=dtype)
    return eye[target]


def _check_targets(target: np.ndarray, classes: int) -> None:
    bad = (target < 0) | (target >= classes)
    if bad.any():
        n, y, x = np.argwhere(bad)[0]
        raise DataError(
            f"target label {int(target[n, y, x])} out of range [0, {classes}) at sample {int(n)}, pixel ({int(y)}, {int(x)})"
        )


def combined_loss(logits: Tensor, target: np.ndarray, cfg: LossConfig) -> Tensor:
    n, classes, h, w = logits.shape
    target = np.asarray(target)
    if target.shape != (n, h, w):
        raise DataError(f"target shape {target.shape} does not match logits {logits.shape}")
    _check_targets(target, classes)

    per_pixel = T.transpose(logits, (0, 2, 3, 1))  # (N, H, W, C)
    hot = Tensor(one_hot(target, classes, dtype=logits.dtype.type))
    gsum_pre = hot.data.sum(axis=(1, 2))  # pixels per (sample, class)

    ce_input = per_pixel
    if cfg.mask_empty_classes and cfg.mask_ce_channels:
        # remove empty classes from the per-sample softmax normalisation;
        # exp(-1e9 + logit) underflows to an exact zero
        offset = np.where(gsum_pre > 0, 0.0, -1e9).astype(logits.dtype.type)
        ce_input = per_pixel + Tensor(offset[:, None, None, :])
    log_p = T.log_softmax_lastdim(ce_input)
    ce = -(log_p * hot).sum() * (1.0 / float(n * h * w))

    probs = T.softmax_lastdim(per_pixel)
    inter = (probs * hot).sum(axis=(1, 2))          # (N, C)
    psum = probs.sum(axis=(1, 2))                   # (N, C)
    s = float(cfg.smooth)
    ratio = (2.0 * inter + s) / (psum + Tensor(gsum_pre + s))
    if cfg.mask_empty_classes:
        counted = (gsum_pre > 0).astype(gsum_pre.dtype)
    else:
        counted = np.ones_like(gsum_pre)
    k = counted.sum()
    dice_mean = (ratio * Tensor(counted)).sum() * (1.0 / float(k))
    dice_loss = 1.0 - dice_mean

    return cfg.alpha * ce + cfg.beta * dice_loss
