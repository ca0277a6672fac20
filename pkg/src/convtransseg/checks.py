"""Standard gradient-check suite over every op and the composite blocks.

Everything runs in double precision. Inputs for kinked ops (relu, pooling)
are sampled away from the kink; composite checks retry with a fresh seed if
an interior kink is hit, keeping the best attempt.
"""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from . import tensor as T
from .gradcheck import GradcheckReport, gradcheck
from .model import (
    FeedForward,
    ModelConfig,
    MultiHeadAttention,
    ResConv,
    SegModel,
    TransBlock,
)
from .rng import RngState
from .tensor import Tensor

__all__ = ["run_standard_checks", "check_model", "TINY_MODEL_CONFIG"]

TINY_MODEL_CONFIG = ModelConfig(
    width=16,
    height=16,
    in_channels=1,
    classes=2,
    levels=3,
    blocks=1,
    base_channels=8,
    downsample=2,
    dropout=0.0,
)


def _away_from_zero(rng: RngState, shape, margin: float = 0.2) -> np.ndarray:
    signs = np.where(rng.uniform(shape) < 0.5, -1.0, 1.0)
    return signs * rng.uniform(shape, margin, 1.0)


def _distinct(rng: RngState, shape) -> np.ndarray:
    base = rng.normal(shape)
    return base + np.arange(base.size).reshape(shape) * 1e-3


def _module_inputs(module, x: Tensor) -> dict[str, Tensor]:
    inputs = {"x": x}
    inputs.update({name: p for name, p in module.named_parameters()})
    return inputs


def _retrying(
    name: str,
    build: Callable[[int], tuple[Callable, dict[str, Tensor]]],
    tolerance: float,
    max_entries: Optional[int] = None,
    tries: int = 3,
) -> GradcheckReport:
    best: Optional[GradcheckReport] = None
    for attempt in range(tries):
        fn, inputs = build(attempt)
        report = gradcheck(fn, inputs, tolerance=tolerance, max_entries=max_entries,
                           rng=RngState(1234 + attempt))
        if best is None or report.max_rel_err < best.max_rel_err:
            best = report
        if report.passed:
            break
    return best


def run_standard_checks(max_entries: int = 5) -> list[tuple[str, GradcheckReport]]:
    """(name, report) for every tensor op and each composite block."""
    rng = RngState(7)
    results: list[tuple[str, GradcheckReport]] = []

    def check(name, fn, inputs, tol=1e-6, entries=None):
        results.append((name, gradcheck(fn, inputs, tolerance=tol, max_entries=entries, rng=rng.spawn(name))))

    x = Tensor(rng.normal((3, 4)), requires_grad=True)
    y = Tensor(rng.normal((3, 4)), requires_grad=True)
    check("add", T.add, {"a": x, "b": y})
    check("mul", T.mul, {"a": x, "b": y})
    check("div", T.div, {"a": x, "b": Tensor(_away_from_zero(rng, (3, 4)), requires_grad=True)})
    check("matmul", T.matmul, {
        "a": Tensor(rng.normal((2, 3, 4)), requires_grad=True),
        "b": Tensor(rng.normal((2, 4, 5)), requires_grad=True),
    })
    check("exp", T.exp, {"x": Tensor(rng.normal((3, 4)), requires_grad=True)})
    check("log", T.log, {"x": Tensor(rng.uniform((3, 4), 0.5, 2.0), requires_grad=True)})
    check("relu", T.relu, {"x": Tensor(_away_from_zero(rng, (4, 5)), requires_grad=True)})
    check("softmax_lastdim", T.softmax_lastdim, {"x": Tensor(rng.normal((3, 6)), requires_grad=True)})
    check("log_softmax_lastdim", T.log_softmax_lastdim, {"x": Tensor(rng.normal((3, 6)), requires_grad=True)})
    check("sum", lambda a: T.tsum(a, axis=1), {"x": Tensor(rng.normal((3, 4)), requires_grad=True)})
    check("reshape", lambda a: T.reshape(a, (4, 6)), {"x": Tensor(rng.normal((2, 3, 4)), requires_grad=True)})
    check("transpose", lambda a: T.transpose(a, (2, 0, 1)), {"x": Tensor(rng.normal((2, 3, 4)), requires_grad=True)})

    check(
        "linear",
        T.linear,
        {
            "x": Tensor(rng.normal((3, 4)), requires_grad=True),
            "w": Tensor(rng.normal((4, 5)), requires_grad=True),
            "b": Tensor(rng.normal((5,)), requires_grad=True),
        },
        tol=1e-6,
    )
    check(
        "conv2d_3x3_pad1",
        lambda x, w, b: T.conv2d(x, w, b, 1),
        {
            "x": Tensor(rng.normal((2, 3, 5, 5)), requires_grad=True),
            "w": Tensor(rng.normal((4, 3, 3, 3)) * 0.4, requires_grad=True),
            "b": Tensor(rng.normal((4,)), requires_grad=True),
        },
        tol=1e-5,
    )
    check(
        "conv2d_1x1",
        lambda x, w, b: T.conv2d(x, w, b, 0),
        {
            "x": Tensor(rng.normal((2, 3, 4, 4)), requires_grad=True),
            "w": Tensor(rng.normal((2, 3, 1, 1)), requires_grad=True),
            "b": Tensor(rng.normal((2,)), requires_grad=True),
        },
        tol=1e-5,
    )
    check("max_pool2", T.max_pool2, {"x": Tensor(_distinct(rng, (2, 2, 4, 4)), requires_grad=True)}, tol=1e-5)
    check(
        "batch_norm2d",
        lambda x, g, b: T.batch_norm2d(
            x, g, b, np.zeros(3, dtype=np.float64), np.ones(3, dtype=np.float64), training=True
        ),
        {
            "x": Tensor(rng.normal((2, 3, 4, 4)), requires_grad=True),
            "gamma": Tensor(rng.uniform((3,), 0.5, 1.5), requires_grad=True),
            "beta": Tensor(rng.normal((3,)), requires_grad=True),
        },
        tol=1e-5,
    )
    check(
        "layer_norm",
        T.layer_norm,
        {
            "x": Tensor(rng.normal((3, 4, 6)), requires_grad=True),
            "gamma": Tensor(rng.uniform((6,), 0.5, 1.5), requires_grad=True),
            "beta": Tensor(rng.normal((6,)), requires_grad=True),
        },
        tol=1e-5,
    )

    def dropout_fixed(x):
        return T.dropout(x, 0.3, training=True, rng=RngState(99))

    check("dropout", dropout_fixed, {"x": Tensor(rng.normal((4, 5)), requires_grad=True)}, tol=1e-6)

    # composite blocks (retry if an interior kink is sampled)
    def build_resconv(attempt):
        block = ResConv(2, 4, skip_kernel=3, rng=RngState(40 + attempt)).astype(np.float64)
        x = Tensor(RngState(50 + attempt).normal((2, 2, 4, 4)), requires_grad=True)
        return (lambda *args: block(x)), _module_inputs(block, x)

    results.append(("resconv", _retrying("resconv", build_resconv, 1e-4)))

    def build_mha(attempt):
        mha = MultiHeadAttention(8, 4, scale_by_head_dim=False, rng=RngState(60 + attempt)).astype(np.float64)
        x = Tensor(RngState(70 + attempt).normal((2, 5, 8)), requires_grad=True)
        return (lambda *args: mha(x)), _module_inputs(mha, x)

    results.append(("mha", _retrying("mha", build_mha, 1e-4)))

    def build_ffn(attempt):
        ffn = FeedForward(6, 2, 0.0, RngState(80 + attempt)).astype(np.float64)
        x = Tensor(RngState(90 + attempt).normal((2, 4, 6)), requires_grad=True)
        return (lambda *args: ffn(x)), _module_inputs(ffn, x)

    results.append(("ffn", _retrying("ffn", build_ffn, 1e-4)))

    def build_block(attempt):
        block = TransBlock(8, 4, 2, 0.0, False, RngState(100 + attempt)).astype(np.float64)
        x = Tensor(RngState(110 + attempt).normal((1, 4, 8)), requires_grad=True)
        return (lambda *args: block(x)), _module_inputs(block, x)

    results.append(("trans_block", _retrying("trans_block", build_block, 1e-4)))

    results.append(("tiny_model", check_model(max_entries=max_entries)))
    return results


def check_model(config: ModelConfig = TINY_MODEL_CONFIG, max_entries: int = 5) -> GradcheckReport:
    """Finite-difference check of the full model, sampling coordinates per tensor."""

    def build(attempt):
        model = SegModel(config, seed=200 + attempt).astype(np.float64)
        model.train()
        x = Tensor(
            RngState(300 + attempt).uniform((1, config.in_channels, config.height, config.width)),
            requires_grad=True,
        )
        return (lambda *args: model(x)), _module_inputs(model, x)

    return _retrying("tiny_model", build, 1e-4, max_entries=max_entries)
