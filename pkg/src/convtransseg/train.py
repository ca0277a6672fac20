"""Adam optimisation and the training/evaluation harness.

Training shuffles mini-batches under a seeded stream, keeps the last partial
batch, and saves a checkpoint whenever the epoch-end validation loss (eval
mode: dropout off, batch-norm running statistics) improves. With a fixed
seed and parallelism disabled the whole run is deterministic.
"""

from __future__ import annotations

import contextlib
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .data import Sample, resize
from .errors import ConfigurationError, DataError, UsageError
from .loss import LossConfig, combined_loss
from .metrics import EvalReport, evaluate
from .model import ModelConfig, SegModel
from .rng import RngState
from .tensor import Tape, Tensor, backward

__all__ = ["Adam", "TrainRecord", "train", "evaluate_checkpoint", "predict_labels", "parallel_guard"]


def parallel_guard(enabled: bool):
    """Limit BLAS pools to one thread unless parallelism was requested."""
    if enabled:
        return contextlib.nullcontext()
    try:
        from threadpoolctl import threadpool_limits

        return threadpool_limits(limits=1)
    except ImportError:  # pragma: no cover
        return contextlib.nullcontext()


class Adam:
    """Standard Adam with bias correction."""

    def __init__(self, named_params, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(named_params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for _, p in self.params]
        self.v = [np.zeros_like(p.data) for _, p in self.params]

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for (name, p), m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                raise UsageError(f"adam step with missing gradient for parameter {name!r}")
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)
            p.data -= update.astype(p.data.dtype, copy=False)


@dataclass
class TrainRecord:
    epoch: int
    train_loss: float
    val_loss: float
    checkpoint: str
    seconds: float


def records_to_csv(records: Sequence[TrainRecord], path: Union[str, Path]) -> None:
    lines = ["epoch,train_loss,val_loss,ckpt,seconds"]
    lines += [f"{r.epoch},{r.train_loss!r},{r.val_loss!r},{r.checkpoint},{r.seconds!r}" for r in records]
    Path(path).write_text("\n".join(lines) + "\n")


def _stack_batch(samples: Sequence[Sample]) -> tuple[Tensor, np.ndarray]:
    images = np.stack([s.image for s in samples]).astype(np.float32)
    masks = np.stack([s.mask for s in samples])
    return Tensor(images), masks


def prepare_samples(samples: Sequence[Sample], config: ModelConfig) -> list[Sample]:
    """Validate channel count and resize anything that does not match W x H."""
    out = []
    for s in samples:
        if s.image.shape[0] != config.in_channels:
            raise ConfigurationError(
                f"sample {s.id}: {s.image.shape[0]} channels but model expects {config.in_channels}"
            )
        if s.image.shape[1:] != (config.height, config.width):
            s = resize(s, config.width, config.height)
        out.append(s)
    return out


def _epoch_val_loss(model: SegModel, val: Sequence[Sample], loss_cfg: LossConfig, batch_size: int) -> float:
    was_training = model.training
    model.eval()
    total = 0.0
    count = 0
    for start in range(0, len(val), batch_size):
        chunk = val[start : start + batch_size]
        x, target = _stack_batch(chunk)
        logits = model(x)
        loss = combined_loss(logits, target, loss_cfg)
        total += loss.item() * len(chunk)
        count += len(chunk)
    if was_training:
        model.train()
    return total / count


def train(
    model: SegModel,
    train_samples: Sequence[Sample],
    val_samples: Sequence[Sample],
    loss_cfg: LossConfig,
    epochs: int,
    batch_size: int,
    lr: float,
    seed: int,
    out_dir: Union[str, Path],
    parallel: bool = False,
    log=None,
) -> tuple[list[TrainRecord], Optional[str]]:
    """Returns the per-epoch records and the path of the best checkpoint."""
    if not train_samples or not val_samples:
        raise DataError("training needs non-empty train and val splits")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_samples = prepare_samples(train_samples, model.config)
    val_samples = prepare_samples(val_samples, model.config)

    shuffle_rng = RngState(seed).spawn("batches")
    adam = Adam(model.named_parameters(), lr=lr)
    best_val = float("inf")
    best_path: Optional[str] = None
    records: list[TrainRecord] = []

    with parallel_guard(parallel):
        model.train()
        for epoch in range(epochs):
            t0 = time.perf_counter()
            order = shuffle_rng.permutation(len(train_samples))
            epoch_loss = 0.0
            seen = 0
            for bi, start in enumerate(range(0, len(order), batch_size)):
                chunk = [train_samples[i] for i in order[start : start + batch_size]]
                x, target = _stack_batch(chunk)
                with Tape() as tape:
                    logits = model(x)
                    loss = combined_loss(logits, target, loss_cfg)
                loss_val = loss.item()
                if not np.isfinite(loss_val):
                    raise DataError(f"non-finite loss at epoch {epoch}, batch {bi}")
                backward(loss, tape)
                adam.step()
                model.zero_grad()
                epoch_loss += loss_val * len(chunk)
                seen += len(chunk)
            val_loss = _epoch_val_loss(model, val_samples, loss_cfg, batch_size)
            ckpt = ""
            if val_loss < best_val:
                best_val = val_loss
                ckpt = str(out_dir / "best.ckpt")
                save_checkpoint(ckpt, model, epoch=epoch, val_loss=val_loss, seed=seed)
                best_path = ckpt
            rec = TrainRecord(
                epoch=epoch,
                train_loss=epoch_loss / seen,
                val_loss=val_loss,
                checkpoint=ckpt,
                seconds=time.perf_counter() - t0,
            )
            records.append(rec)
            if log is not None:
                log(f"epoch {epoch}: train_loss={rec.train_loss:.5f} val_loss={rec.val_loss:.5f}"
                    + (" (saved)" if ckpt else ""))
    return records, best_path


def predict_labels(model: SegModel, samples: Sequence[Sample], batch_size: int = 8) -> list[np.ndarray]:
    """Eval-mode forward + per-pixel argmax label maps."""
    model.eval()
    out = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        x, _ = _stack_batch(chunk)
        logits = model(x)
        out.extend(np.argmax(logits.data, axis=1).astype(np.int32))
    return out


def evaluate_checkpoint(
    ckpt_path: Union[str, Path],
    samples: Sequence[Sample],
    loss_cfg: LossConfig,
    batch_size: int = 8,
    parallel: bool = False,
) -> tuple[EvalReport, float]:
    """Evaluate a saved checkpoint on samples; returns (report, mean loss)."""
    model, meta = load_checkpoint(ckpt_path)
    if not samples:
        raise DataError("no samples to evaluate")
    channels = samples[0].image.shape[0]
    labels_max = max(int(s.mask.max(initial=0)) for s in samples)
    if channels != model.config.in_channels:
        raise ConfigurationError(
            f"checkpoint expects {model.config.in_channels} channels, dataset has {channels}"
        )
    if labels_max >= model.config.classes:
        raise ConfigurationError(
            f"dataset labels reach {labels_max} but checkpoint has {model.config.classes} classes"
        )
    samples = prepare_samples(samples, model.config)
    with parallel_guard(parallel):
        loss = _epoch_val_loss(model, samples, loss_cfg, batch_size)
        preds = predict_labels(model, samples, batch_size)
    report = evaluate(
        preds,
        [s.mask for s in samples],
        model.config.classes,
        mask_empty=loss_cfg.mask_empty_classes,
        image_ids=[s.id for s in samples],
    )
    return report, loss
