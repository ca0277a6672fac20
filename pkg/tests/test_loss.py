"""Combined loss contract: cross-entropy plus per-(sample, class) soft Dice."""

import math

import numpy as np
import pytest

from convtransseg.errors import DataError
from convtransseg.loss import LossConfig, combined_loss, one_hot
from convtransseg.rng import RngState
from convtransseg.tensor import Tape, Tensor, backward


def loss_oracle(logits, target, alpha, beta, smooth, mask_empty):
    """Scalar-arithmetic evaluation of the loss definition."""
    n, c, h, w = logits.shape
    ce_total = 0.0
    for ni in range(n):
        for y in range(h):
            for x in range(w):
                z = logits[ni, :, y, x].astype(np.float64)
                z = z - z.max()
                logp = z - math.log(np.exp(z).sum())
                ce_total += -logp[target[ni, y, x]]
    ce = ce_total / (n * h * w)

    dice_terms = []
    for ni in range(n):
        probs = np.zeros((c, h, w))
        for y in range(h):
            for x in range(w):
                z = logits[ni, :, y, x].astype(np.float64)
                e = np.exp(z - z.max())
                probs[:, y, x] = e / e.sum()
        for ci in range(c):
            g = (target[ni] == ci).astype(np.float64)
            if mask_empty and g.sum() == 0:
                continue
            inter = (probs[ci] * g).sum()
            dice_terms.append((2 * inter + smooth) / (probs[ci].sum() + g.sum() + smooth))
    dice_loss = 1.0 - sum(dice_terms) / len(dice_terms)
    return alpha * ce + beta * dice_loss


def test_saturated_correct_prediction_near_zero():
    rng = RngState(1)
    target = rng.integers(0, 2, (2, 4, 4))
    logits = np.where(one_hot(target, 2).transpose(0, 3, 1, 2) > 0, 10.0, -10.0).astype(np.float32)
    loss = combined_loss(Tensor(logits), target, LossConfig())
    assert loss.item() <= 1e-3


def test_uniform_binary_logits_give_ln2_ce():
    target = RngState(2).integers(0, 2, (1, 8, 8))
    logits = Tensor(np.zeros((1, 2, 8, 8), dtype=np.float32))
    loss = combined_loss(logits, target, LossConfig(alpha=1.0, beta=0.0))
    assert abs(loss.item() - math.log(2.0)) < 1e-6


def test_2x2_instance_matches_hand_oracle():
    logits = np.array(
        [[[[0.5, -1.0], [2.0, 0.0]],
          [[-0.5, 1.5], [0.0, 1.0]]]], dtype=np.float32)
    target = np.array([[[0, 1], [1, 0]]])
    got = combined_loss(Tensor(logits), target, LossConfig(alpha=0.5, beta=0.5, smooth=1.0)).item()
    expected = loss_oracle(logits, target, 0.5, 0.5, 1.0, mask_empty=False)
    assert abs(got - expected) < 1e-6


@pytest.mark.parametrize("mask_empty", [False, True])
def test_random_instances_match_oracle(mask_empty):
    rng = RngState(3)
    for _ in range(5):
        logits = rng.normal((2, 3, 4, 4), dtype=np.float32)
        target = rng.integers(0, 3, (2, 4, 4))
        got = combined_loss(
            Tensor(logits), target, LossConfig(alpha=0.4, beta=0.6, smooth=1.0, mask_empty_classes=mask_empty)
        ).item()
        expected = loss_oracle(logits, target, 0.4, 0.6, 1.0, mask_empty)
        assert abs(got - expected) < 1e-5


def test_mask_empty_changes_dice_only():
    rng = RngState(4)
    logits = rng.normal((1, 4, 4, 4), dtype=np.float32)
    target = np.zeros((1, 4, 4), dtype=np.int64)  # classes 1..3 all empty
    ce_only = combined_loss(Tensor(logits), target, LossConfig(alpha=1.0, beta=0.0, mask_empty_classes=True)).item()
    ce_only_unmasked = combined_loss(Tensor(logits), target, LossConfig(alpha=1.0, beta=0.0)).item()
    assert ce_only == pytest.approx(ce_only_unmasked, abs=0)  # CE ignores masking
    both = combined_loss(Tensor(logits), target, LossConfig(mask_empty_classes=True)).item()
    both_unmasked = combined_loss(Tensor(logits), target, LossConfig()).item()
    assert both != both_unmasked  # the Dice class-mean sees it


def test_mask_ce_channels_variant():
    rng = RngState(6)
    logits = rng.normal((2, 4, 4, 4), dtype=np.float32)
    target = rng.integers(0, 2, (2, 4, 4))  # classes 2 and 3 empty everywhere
    base = LossConfig(alpha=1.0, beta=0.0, mask_empty_classes=True)
    variant = LossConfig(alpha=1.0, beta=0.0, mask_empty_classes=True, mask_ce_channels=True)
    ce_all = combined_loss(Tensor(logits), target, base).item()
    ce_masked = combined_loss(Tensor(logits), target, variant).item()
    # oracle: renormalise the softmax over the two present classes only
    n, c, h, w = logits.shape
    total = 0.0
    for ni in range(n):
        for y in range(h):
            for x in range(w):
                z = logits[ni, :2, y, x].astype(np.float64)
                z = z - z.max()
                total += -(z - math.log(np.exp(z).sum()))[target[ni, y, x]]
    expected = total / (n * h * w)
    assert ce_masked == pytest.approx(expected, abs=1e-6)
    # dropping channels from the normalisation can only shrink the CE
    assert ce_masked <= ce_all

    # with no empty classes the two variants coincide
    full_target = rng.integers(0, 4, (2, 4, 4))
    full_target[0, 0, :4] = [0, 1, 2, 3]
    full_target[1, 0, :4] = [0, 1, 2, 3]
    a = combined_loss(Tensor(logits), full_target, base).item()
    b = combined_loss(Tensor(logits), full_target, variant).item()
    assert a == b


def test_out_of_range_target_names_sample_and_pixel():
    logits = Tensor(np.zeros((2, 2, 3, 3), dtype=np.float32))
    target = np.zeros((2, 3, 3), dtype=np.int64)
    target[1, 2, 0] = 5
    with pytest.raises(DataError, match=r"label 5.*sample 1, pixel \(2, 0\)"):
        combined_loss(logits, target, LossConfig())


def test_loss_differentiable_end_to_end():
    rng = RngState(5)
    logits = Tensor(rng.normal((2, 3, 4, 4), dtype=np.float32), requires_grad=True)
    target = rng.integers(0, 3, (2, 4, 4))
    with Tape() as tape:
        loss = combined_loss(logits, target, LossConfig())
    backward(loss, tape)
    assert logits.grad is not None and np.all(np.isfinite(logits.grad))


def test_invalid_weights_rejected():
    with pytest.raises(DataError):
        LossConfig(alpha=0.0, beta=0.0)
    with pytest.raises(DataError):
        LossConfig(alpha=-1.0, beta=1.0)
