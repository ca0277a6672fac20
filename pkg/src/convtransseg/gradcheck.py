"""Finite-difference verification of analytic gradients.

The harness perturbs each input coordinate by h = step * max(1, |x|) and
compares central differences against the gradients produced by the tape.
Errors are reported as max over coordinates of |a - n| / max(1, |a|, |n|),
so the figure is relative for large gradients and absolute for small ones.

Inputs must be float64; single precision drowns the differences in rounding
noise. Ops with kinks (relu, max pooling) are checked on inputs sampled away
from the kink; composite checks retry with fresh inputs when a kink happens
to be hit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import UsageError
from .rng import RngState
from .tensor import Tape, Tensor, backward

__all__ = ["GradcheckEntry", "GradcheckReport", "gradcheck"]


@dataclass
class GradcheckEntry:
    name: str
    max_rel_err: float
    checked: int
    passed: bool


@dataclass
class GradcheckReport:
    tolerance: float
    entries: list[GradcheckEntry] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    @property
    def max_rel_err(self) -> float:
        return max((e.max_rel_err for e in self.entries), default=0.0)

    def __str__(self) -> str:
        lines = [
            f"  {'PASS' if e.passed else 'FAIL'} {e.name}: max_rel_err={e.max_rel_err:.3e} ({e.checked} coords)"
            for e in self.entries
        ]
        return "\n".join(lines)


def _scalar_loss(fn: Callable, inputs: Sequence[Tensor], proj: np.ndarray) -> float:
    out = fn(*inputs)
    return float((out.data * proj).sum())


def gradcheck(
    fn: Callable[..., Tensor],
    inputs: dict[str, Tensor],
    tolerance: float = 1e-4,
    step: float = 1e-4,
    max_entries: Optional[int] = None,
    rng: Optional[RngState] = None,
) -> GradcheckReport:
    """Check d(sum(fn(inputs) * R))/d(input) against central differences.

    R is a fixed random projection so every output coordinate contributes.
    ``max_entries`` caps the number of coordinates perturbed per input
    (sampled deterministically); None checks all of them.
    """
    rng = rng or RngState(0)
    names = list(inputs.keys())
    tensors = [inputs[k] for k in names]
    for k, t in inputs.items():
        if t.dtype != np.float64:
            raise UsageError(f"gradcheck input '{k}' must be float64, got {t.dtype}")
        t.zero_grad()

    with Tape() as tape:
        out = fn(*tensors)
    proj = rng.normal(out.shape)
    with Tape() as tape:
        full = fn(*tensors)
        loss = (full * Tensor(proj)).sum()
    backward(loss, tape)

    report = GradcheckReport(tolerance=tolerance)
    for k, t in zip(names, tensors):
        if not t.requires_grad:
            continue
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        n_coords = flat.size
        if max_entries is not None and n_coords > max_entries:
            coords = rng.permutation(n_coords)[:max_entries]
        else:
            coords = np.arange(n_coords)
        worst = 0.0
        a_flat = analytic.reshape(-1)
        for j in coords:
            old = flat[j]
            h = step * max(1.0, abs(old))
            flat[j] = old + h
            f_plus = _scalar_loss(fn, tensors, proj)
            flat[j] = old - h
            f_minus = _scalar_loss(fn, tensors, proj)
            flat[j] = old
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = a_flat[j]
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            if err > worst:
                worst = err
        report.entries.append(
            GradcheckEntry(name=k, max_rel_err=worst, checked=len(coords), passed=worst <= tolerance)
        )
    return report
