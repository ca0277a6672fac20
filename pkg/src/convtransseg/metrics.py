"""Segmentation evaluation: Dice overlap and average symmetric surface distance.

Boundaries use 4-connectivity (a foreground pixel is boundary if any
4-neighbour is background or outside the image); distances are pixel-centre
Euclidean. The production ASSD path uses an exact Euclidean distance
transform, which equals the all-pairs minimum by construction.

Conventions for degenerate masks: dice of two empty masks is 1.0; assd of
two empty masks is NaN (undefined, excluded from aggregates); assd with
exactly one empty mask is the image diagonal, flagged as a penalty entry.
Class 0 is background and never evaluated as a foreground class.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from scipy import ndimage

from .errors import DataError
from .wsrt import wsrt

__all__ = [
    "dice",
    "boundary",
    "assd",
    "EvalEntry",
    "EvalReport",
    "evaluate",
    "compare_reports",
]


def _check_extents(pred: np.ndarray, gt: np.ndarray) -> None:
    if pred.shape != gt.shape or pred.ndim != 2:
        raise DataError(f"mask extents differ: {pred.shape} vs {gt.shape}")


def dice(pred: np.ndarray, gt: np.ndarray) -> float:
    """2|P & G| / (|P| + |G|); 1.0 when both masks are empty."""
    _check_extents(pred, gt)
    pred = pred.astype(bool)
    gt = gt.astype(bool)
    p = int(pred.sum())
    g = int(gt.sum())
    if p + g == 0:
        return 1.0
    return 2.0 * int(np.logical_and(pred, gt).sum()) / (p + g)


def boundary(mask: np.ndarray) -> np.ndarray:
    """Boolean map of foreground pixels with a background/out-of-image 4-neighbour."""
    mask = np.asarray(mask, dtype=bool)
    padded = np.pad(mask, 1, constant_values=False)
    interior = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return mask & ~interior


def assd(pred: np.ndarray, gt: np.ndarray) -> float:
    """Average symmetric surface distance in pixels (see module conventions)."""
    _check_extents(pred, gt)
    bp = boundary(pred)
    bg = boundary(gt)
    np_count = int(bp.sum())
    ng_count = int(bg.sum())
    if np_count == 0 and ng_count == 0:
        return math.nan
    if np_count == 0 or ng_count == 0:
        h, w = pred.shape
        return math.hypot(h, w)
    # EDT gives each pixel its distance to the nearest True pixel of the other set
    d_to_gt = ndimage.distance_transform_edt(~bg)
    d_to_pred = ndimage.distance_transform_edt(~bp)
    total = float(d_to_gt[bp].sum() + d_to_pred[bg].sum())
    return total / (np_count + ng_count)


@dataclass
class EvalEntry:
    image_id: str
    cls: int
    dc: float
    assd: float          # NaN when undefined
    assd_penalty: bool   # True when one mask was empty (diagonal fallback)


@dataclass
class EvalReport:
    classes: int
    mask_empty: bool
    entries: list[EvalEntry] = field(default_factory=list)

    # -- aggregates (always recomputed from the entries) --------------------

    def _select(self, cls: Optional[int]) -> list[EvalEntry]:
        return [e for e in self.entries if cls is None or e.cls == cls]

    @staticmethod
    def _mean_std(values: Sequence[float]) -> tuple[float, float]:
        if not values:
            return math.nan, math.nan
        arr = np.asarray(values, dtype=np.float64)
        return float(arr.mean()), float(arr.std())

    def dc_stats(self, cls: Optional[int] = None) -> tuple[float, float]:
        return self._mean_std([e.dc for e in self._select(cls)])

    def assd_stats(self, cls: Optional[int] = None) -> tuple[float, float]:
        return self._mean_std([e.assd for e in self._select(cls) if not math.isnan(e.assd)])

    def penalty_count(self, cls: Optional[int] = None) -> int:
        return sum(1 for e in self._select(cls) if e.assd_penalty)

    def foreground_classes(self) -> list[int]:
        return sorted({e.cls for e in self.entries})

    # -- CSV interchange -----------------------------------------------------

    def to_csv(self, dest: Union[str, Path, io.TextIOBase]) -> None:
        if isinstance(dest, (str, Path)):
            with open(dest, "w", newline="") as f:
                self.to_csv(f)
            return
        w = csv.writer(dest)
        w.writerow(["image_id", "class", "dc", "assd", "assd_defined"])
        for e in self.entries:
            w.writerow(
                [e.image_id, e.cls, repr(e.dc), "" if math.isnan(e.assd) else repr(e.assd),
                 0 if math.isnan(e.assd) else 1]
            )
        dest.write(f"# report classes={self.classes} mask_empty={int(self.mask_empty)}\n")
        for e in self.entries:
            if e.assd_penalty:
                dest.write(f"# penalty {e.image_id} {e.cls}\n")
        scopes: list[tuple[str, Optional[int]]] = [(str(c), c) for c in self.foreground_classes()]
        scopes.append(("overall", None))
        for label, cls in scopes:
            dm, ds = self.dc_stats(cls)
            am, asd = self.assd_stats(cls)
            n = len(self._select(cls))
            dest.write(
                f"# agg class={label} n={n} dc_mean={dm!r} dc_std={ds!r} "
                f"assd_mean={am!r} assd_std={asd!r} penalties={self.penalty_count(cls)}\n"
            )

    @classmethod
    def from_csv(cls, src: Union[str, Path, io.TextIOBase]) -> "EvalReport":
        if isinstance(src, (str, Path)):
            with open(src, "r", newline="") as f:
                return cls.from_csv(f)
        entries = []
        classes = 0
        mask_empty = False
        penalties: set[tuple[str, int]] = set()
        footer: dict[str, dict[str, str]] = {}
        for line in src:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                parts = line[1:].split()
                if parts and parts[0] == "report":
                    kv = dict(p.split("=") for p in parts[1:])
                    classes = int(kv["classes"])
                    mask_empty = bool(int(kv["mask_empty"]))
                elif parts and parts[0] == "penalty":
                    penalties.add((parts[1], int(parts[2])))
                elif parts and parts[0] == "agg":
                    kv = dict(p.split("=") for p in parts[1:])
                    footer[kv["class"]] = {k: v for k, v in kv.items() if k != "class"}
                continue
            row = next(csv.reader([line]))
            if row[0] == "image_id":
                continue
            image_id, c, dc_s, assd_s, defined = row
            assd_v = float(assd_s) if defined == "1" else math.nan
            entries.append(EvalEntry(image_id, int(c), float(dc_s), assd_v, False))
        for e in entries:
            e.assd_penalty = (e.image_id, e.cls) in penalties
        report = cls(classes=classes, mask_empty=mask_empty, entries=entries)
        report._verify_footer(footer)
        return report

    def _verify_footer(self, footer: dict[str, dict[str, str]]) -> None:
        for label, kv in footer.items():
            cls = None if label == "overall" else int(label)
            dm, _ = self.dc_stats(cls)
            stored = float(kv["dc_mean"])
            if not (math.isnan(dm) and math.isnan(stored)) and dm != stored:
                raise DataError(f"csv footer aggregate for class {label} does not match rows")


def evaluate(
    preds: Sequence[np.ndarray],
    gts: Sequence[np.ndarray],
    classes: int,
    mask_empty: bool = False,
    image_ids: Optional[Sequence[str]] = None,
) -> EvalReport:
    """Per class c >= 1: binarise both maps at c, compute dice and assd.

    With mask_empty, (image, class) pairs whose ground truth is empty are
    skipped entirely (no row, no aggregate contribution).
    """
    if len(preds) != len(gts):
        raise DataError(f"prediction and ground-truth counts differ: {len(preds)} vs {len(gts)}")
    ids = list(image_ids) if image_ids is not None else [f"img{i:04d}" for i in range(len(preds))]
    report = EvalReport(classes=classes, mask_empty=mask_empty)
    for img_id, pred, gt in zip(ids, preds, gts):
        pred = np.asarray(pred)
        gt = np.asarray(gt)
        _check_extents(pred, gt)
        for arr, name in ((pred, "prediction"), (gt, "ground truth")):
            if arr.max(initial=0) >= classes:
                raise DataError(f"{name} for {img_id} contains label {int(arr.max())} >= classes {classes}")
        for c in range(1, classes):
            gm = gt == c
            if mask_empty and not gm.any():
                continue
            pm = pred == c
            d = dice(pm, gm)
            a = assd(pm, gm)
            penalty = (pm.any() != gm.any())
            report.entries.append(EvalEntry(img_id, c, d, a, penalty))
    return report


def compare_reports(a: EvalReport, b: EvalReport) -> dict[str, dict[str, float]]:
    """Per-class and overall two-sided WSRT p-values between paired reports.

    Pairs on (image_id, class); dc uses all shared pairs, assd only pairs
    defined on both sides.
    """
    index_a = {(e.image_id, e.cls): e for e in a.entries}
    index_b = {(e.image_id, e.cls): e for e in b.entries}
    shared = sorted(set(index_a) & set(index_b))
    if not shared:
        raise DataError("reports share no (image, class) entries")
    out: dict[str, dict[str, float]] = {}
    scopes: list[tuple[str, Optional[int]]] = [
        (str(c), c) for c in sorted({cls for _, cls in shared})
    ]
    scopes.append(("overall", None))
    for label, cls in scopes:
        keys = [k for k in shared if cls is None or k[1] == cls]
        dc_a = [index_a[k].dc for k in keys]
        dc_b = [index_b[k].dc for k in keys]
        assd_pairs = [
            (index_a[k].assd, index_b[k].assd)
            for k in keys
            if not math.isnan(index_a[k].assd) and not math.isnan(index_b[k].assd)
        ]
        entry: dict[str, float] = {"n": float(len(keys))}
        entry["p_dc"] = wsrt(dc_a, dc_b)
        if assd_pairs:
            entry["p_assd"] = wsrt([p[0] for p in assd_pairs], [p[1] for p in assd_pairs])
        out[label] = entry
    return out
