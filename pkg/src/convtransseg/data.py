"""Dataset ingestion, deterministic splits, resizing, synthetic generation.

On-disk layout: 8-bit PNGs (mask label = pixel value) plus a plain-text
manifest. Header line `cts-manifest v1 classes=<K> channels=<C>`, then one
`<train|val|test>\t<image>\t<mask>` entry per line, paths relative to the
manifest. CTS-T1 files are accepted as an alternative image container for
non-8-bit sources (detected by magic).

Resize semantics (pinned for reproducibility): source coordinate
u = (i + 0.5) * S / T - 0.5. Images interpolate bilinearly with clamped
neighbours; masks take the nearest source pixel, floor(u + 0.5), which can
never invent a label absent from the source.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Union

import numpy as np
from PIL import Image

from .errors import DataError
from .rng import RngState
from . import tensor_io

__all__ = [
    "Sample",
    "ManifestEntry",
    "DatasetManifest",
    "load_dataset",
    "load_manifest",
    "split",
    "resize",
    "synth_generate",
]

MANIFEST_NAME = "manifest.txt"
SPLITS = ("train", "val", "test")


@dataclass
class Sample:
    image: np.ndarray  # (C, H, W) float32 in [0, 1]
    mask: np.ndarray   # (H, W) integer labels
    id: str


@dataclass
class ManifestEntry:
    split: str
    image: str
    mask: str


@dataclass
class DatasetManifest:
    root: Path
    classes: int
    channels: int
    entries: list[ManifestEntry]

    def ids(self, split_name: str) -> list[str]:
        return [e.image for e in self.entries if e.split == split_name]

    def save(self, path: Union[str, Path, None] = None) -> Path:
        path = Path(path) if path is not None else self.root / MANIFEST_NAME
        lines = [f"cts-manifest v1 classes={self.classes} channels={self.channels}"]
        lines += [f"{e.split}\t{e.image}\t{e.mask}" for e in self.entries]
        path.write_text("\n".join(lines) + "\n")
        return path


def load_manifest(path: Union[str, Path]) -> DatasetManifest:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    lines = path.read_text().splitlines()
    if not lines or not lines[0].startswith("cts-manifest v1"):
        raise DataError(f"{path}: not a cts-manifest v1 file")
    header = dict(tok.split("=") for tok in lines[0].split()[2:])
    entries = []
    for ln in lines[1:]:
        if not ln.strip():
            continue
        parts = ln.split("\t")
        if len(parts) != 3 or parts[0] not in SPLITS:
            raise DataError(f"{path}: malformed manifest line: {ln!r}")
        entries.append(ManifestEntry(parts[0], parts[1], parts[2]))
    return DatasetManifest(
        root=path.parent, classes=int(header["classes"]), channels=int(header["channels"]), entries=entries
    )


def _read_image(path: Path, channels: int) -> np.ndarray:
    if not path.exists():
        raise DataError(f"missing image file: {path}")
    with open(path, "rb") as f:
        if f.read(len(tensor_io.MAGIC)) == tensor_io.MAGIC:
            arr = tensor_io.read_tensor(path)
            if arr.ndim == 2:
                arr = arr[None]
            return arr.astype(np.float32)
    img = Image.open(path)
    if channels == 1:
        img = img.convert("L")
        arr = np.asarray(img, dtype=np.float32)[None]
    else:
        img = img.convert("RGB")
        arr = np.asarray(img, dtype=np.float32).transpose(2, 0, 1)
    return arr / 255.0


def _read_mask(path: Path, classes: int, entry_name: str) -> np.ndarray:
    if not path.exists():
        raise DataError(f"missing mask file: {path}")
    arr = np.asarray(Image.open(path).convert("L"), dtype=np.int32)
    if arr.max(initial=0) >= classes:
        raise DataError(
            f"mask {entry_name} contains label {int(arr.max())} >= classes {classes}"
        )
    return arr


def load_dataset(manifest: DatasetManifest, split_name: Union[str, None] = None) -> list[Sample]:
    samples = []
    for e in manifest.entries:
        if split_name is not None and e.split != split_name:
            continue
        image = _read_image(manifest.root / e.image, manifest.channels)
        mask = _read_mask(manifest.root / e.mask, manifest.classes, e.mask)
        if image.shape[1:] != mask.shape:
            raise DataError(
                f"entry {e.image}: image extent {image.shape[1:]} != mask extent {mask.shape}"
            )
        samples.append(Sample(image=image, mask=mask, id=Path(e.image).stem))
    return samples


def split(ids: Sequence[str], seed: int) -> dict[str, str]:
    """Deterministic 70/10/20 partition; returns id -> split name."""
    ids = list(ids)
    n = len(ids)
    if n < 10:
        raise DataError(f"need at least 10 ids to split, got {n}")
    perm = RngState(seed).spawn("split").permutation(n)
    n_train = (7 * n) // 10
    n_val = n // 10
    out = {}
    for rank, idx in enumerate(perm):
        if rank < n_train:
            s = "train"
        elif rank < n_train + n_val:
            s = "val"
        else:
            s = "test"
        out[ids[idx]] = s
    return out


def _source_coords(target: int, source: int) -> np.ndarray:
    return (np.arange(target, dtype=np.float64) + 0.5) * (source / target) - 0.5


def _resize_bilinear(img: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    c, h, w = img.shape
    uy = _source_coords(out_h, h)
    ux = _source_coords(out_w, w)
    y0 = np.clip(np.floor(uy).astype(np.int64), 0, h - 1)
    x0 = np.clip(np.floor(ux).astype(np.int64), 0, w - 1)
    y1 = np.clip(y0 + 1, 0, h - 1)
    x1 = np.clip(x0 + 1, 0, w - 1)
    wy = np.clip(uy - y0, 0.0, 1.0)[None, :, None]
    wx = np.clip(ux - x0, 0.0, 1.0)[None, None, :]
    top = img[:, y0][:, :, x0] * (1 - wx) + img[:, y0][:, :, x1] * wx
    bot = img[:, y1][:, :, x0] * (1 - wx) + img[:, y1][:, :, x1] * wx
    return (top * (1 - wy) + bot * wy).astype(img.dtype)


def _resize_nearest(mask: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    h, w = mask.shape
    iy = np.clip(np.floor(_source_coords(out_h, h) + 0.5).astype(np.int64), 0, h - 1)
    ix = np.clip(np.floor(_source_coords(out_w, w) + 0.5).astype(np.int64), 0, w - 1)
    return mask[iy][:, ix]


def resize(sample: Sample, target_w: int, target_h: int) -> Sample:
    """Bilinear image resize, nearest-neighbour (label-preserving) mask resize."""
    return Sample(
        image=_resize_bilinear(sample.image, target_w, target_h),
        mask=_resize_nearest(sample.mask, target_w, target_h),
        id=sample.id,
    )


# ---------------------------------------------------------------------------
# synthetic data


def _ellipse_mask(size: int, cy: float, cx: float, ry: float, rx: float, theta: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    dy = yy - cy
    dx = xx - cx
    ct, st = np.cos(theta), np.sin(theta)
    u = dx * ct + dy * st
    v = -dx * st + dy * ct
    return (u / rx) ** 2 + (v / ry) ** 2 <= 1.0


def _ring_mask(size: int, cy: float, cx: float, ry: float, rx: float, theta: float, thickness: float) -> np.ndarray:
    outer = _ellipse_mask(size, cy, cx, ry, rx, theta)
    inner = _ellipse_mask(size, cy, cx, max(ry - thickness, 1.0), max(rx - thickness, 1.0), theta)
    return outer & ~inner


def _textured_background(size: int, rng: RngState) -> np.ndarray:
    base = rng.uniform((size, size), 0.25, 0.45)
    # a couple of low-frequency waves so the background is not iid noise
    yy, xx = np.mgrid[0:size, 0:size] / size
    for _ in range(2):
        fy, fx = rng.uniform((), 1.0, 4.0), rng.uniform((), 1.0, 4.0)
        phase = rng.uniform((), 0.0, 2 * np.pi)
        base += 0.05 * np.sin(2 * np.pi * (fy * yy + fx * xx) + phase)
    return base


def synth_generate(
    out_dir: Union[str, Path],
    count: int,
    size: int,
    classes: int,
    seed: int,
    tensor_images: bool = False,
) -> DatasetManifest:
    """Filled ellipses (one per foreground class) on textured noise, plus
    intensity-matched ring distractors that shape alone can reject.

    Masks are rasterised from the same geometry as the images, so they match
    exactly. Files and splits are deterministic under the seed. With
    tensor_images the images are written as raw CTS-T1 float tensors instead
    of quantised PNGs (masks stay PNG either way).
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if classes < 2:
        raise DataError(f"need at least 2 classes, got {classes}")
    rng = RngState(seed).spawn("synth")
    entries = []
    assignment = split([f"{i:05d}" for i in range(count)], seed)
    for i in range(count):
        stem = f"{i:05d}"
        img = _textured_background(size, rng)
        mask = np.zeros((size, size), dtype=np.uint8)
        occupied = np.zeros((size, size), dtype=bool)
        for c in range(1, classes):
            for _attempt in range(50):
                ry = float(rng.uniform((), size * 0.10, size * 0.22))
                rx = float(rng.uniform((), size * 0.10, size * 0.22))
                cy = float(rng.uniform((), ry + 2, size - ry - 2))
                cx = float(rng.uniform((), rx + 2, size - rx - 2))
                theta = float(rng.uniform((), 0.0, np.pi))
                m = _ellipse_mask(size, cy, cx, ry, rx, theta)
                if not (m & occupied).any():
                    break
            level = 0.62 + 0.08 * c
            img[m] = level + 0.04 * (rng.uniform((size, size)) - 0.5)[m]
            mask[m] = c
            occupied |= m
        n_rings = int(rng.integers(1, 4))
        for _ in range(n_rings):
            ry = float(rng.uniform((), size * 0.08, size * 0.20))
            rx = float(rng.uniform((), size * 0.08, size * 0.20))
            cy = float(rng.uniform((), ry + 1, size - ry - 1))
            cx = float(rng.uniform((), rx + 1, size - rx - 1))
            theta = float(rng.uniform((), 0.0, np.pi))
            ring_cls = int(rng.integers(1, classes))
            ring = _ring_mask(size, cy, cx, ry, rx, theta, float(rng.uniform((), 1.5, 3.0)))
            ring &= ~occupied
            level = 0.62 + 0.08 * ring_cls
            img[ring] = level + 0.04 * (rng.uniform((size, size)) - 0.5)[ring]
        if tensor_images:
            image_name = f"{stem}.ct1"
            tensor_io.write_tensor(
                out_dir / image_name, np.clip(img, 0.0, 1.0).astype(np.float32)[None]
            )
        else:
            image_name = f"{stem}.png"
            img8 = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
            Image.fromarray(img8, mode="L").save(out_dir / image_name)
        Image.fromarray(mask, mode="L").save(out_dir / f"{stem}_mask.png")
        entries.append(ManifestEntry(assignment[stem], image_name, f"{stem}_mask.png"))
    manifest = DatasetManifest(root=out_dir, classes=classes, channels=1, entries=entries)
    manifest.save()
    return manifest
