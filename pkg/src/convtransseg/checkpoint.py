"""Checkpoint format CTS-CKPT1.

Layout: one header line `CTSCKPT1 <manifest_bytes>\n`, a UTF-8 text manifest,
then concatenated CTS-T1 tensor records. The manifest has three sections:
[config] echoes the model configuration as key = value lines, [meta] holds
epoch / val_loss / seed, and [tensors] maps each parameter or buffer path to
`<offset> <d0,d1,...>` with offsets relative to the start of the binary blob.
Save followed by load restores every tensor bit-exactly.
"""

from __future__ import annotations

import dataclasses
import io
from pathlib import Path
from typing import Union

import numpy as np

from .errors import DataError
from .kvconfig import parse_kv_lines, render_kv
from .model import ModelConfig, SegModel
from . import tensor_io

HEADER = b"CTSCKPT1"

__all__ = ["save_checkpoint", "load_checkpoint", "CheckpointMeta"]


@dataclasses.dataclass
class CheckpointMeta:
    epoch: int
    val_loss: float
    seed: int


def _named_tensors(model: SegModel) -> list[tuple[str, np.ndarray]]:
    named = [(name, p.data) for name, p in model.named_parameters()]
    named += [(name, b) for name, b in model.named_buffers()]
    return named


def save_checkpoint(
    path: Union[str, Path],
    model: SegModel,
    epoch: int,
    val_loss: float,
    seed: int,
) -> None:
    named = _named_tensors(model)
    blob = io.BytesIO()
    table = []
    for name, arr in named:
        offset = blob.tell()
        tensor_io.write_tensor(blob, np.ascontiguousarray(arr, dtype=np.float32))
        table.append((name, offset, arr.shape))

    manifest = ["[config]", render_kv(model.config).rstrip("\n"), "[meta]"]
    manifest.append(f"epoch = {int(epoch)}")
    manifest.append(f"val_loss = {float(val_loss)!r}")
    manifest.append(f"seed = {int(seed)}")
    manifest.append("[tensors]")
    for name, offset, shape in table:
        manifest.append(f"{name} {offset} {','.join(str(s) for s in shape)}")
    text = ("\n".join(manifest) + "\n").encode("utf-8")

    with open(path, "wb") as f:
        f.write(HEADER + b" " + str(len(text)).encode() + b"\n")
        f.write(text)
        f.write(blob.getvalue())


def load_checkpoint(path: Union[str, Path]) -> tuple[SegModel, CheckpointMeta]:
    path = Path(path)
    with open(path, "rb") as f:
        header = f.readline()
        if not header.startswith(HEADER + b" "):
            raise DataError(f"{path}: not a CTS-CKPT1 file")
        manifest_len = int(header.split()[1])
        text = f.read(manifest_len).decode("utf-8")
        blob = f.read()

    sections: dict[str, list[str]] = {}
    current = None
    for line in text.splitlines():
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1]
            sections[current] = []
        elif current is not None:
            sections[current].append(line)
    for required in ("config", "meta", "tensors"):
        if required not in sections:
            raise DataError(f"{path}: checkpoint manifest missing [{required}] section")

    config = ModelConfig(**parse_kv_lines(ModelConfig, sections["config"]))
    meta_kv = dict(
        (k.strip(), v.strip())
        for k, v in (ln.split("=", 1) for ln in sections["meta"] if ln.strip())
    )
    meta = CheckpointMeta(
        epoch=int(meta_kv["epoch"]), val_loss=float(meta_kv["val_loss"]), seed=int(meta_kv["seed"])
    )

    model = SegModel(config, seed=meta.seed)
    lookup = dict(_named_tensors(model))
    seen = set()
    for line in sections["tensors"]:
        if not line.strip():
            continue
        name, offset_s, shape_s = line.split()
        if name not in lookup:
            raise DataError(f"{path}: checkpoint tensor {name!r} not present in model")
        arr = tensor_io.read_tensor(io.BytesIO(blob[int(offset_s):]))
        shape = tuple(int(s) for s in shape_s.split(",")) if shape_s else ()
        if arr.shape != shape or lookup[name].shape != shape:
            raise DataError(f"{path}: tensor {name} shape {arr.shape} does not match {lookup[name].shape}")
        lookup[name][...] = arr
        seen.add(name)
    missing = set(lookup) - seen
    if missing:
        raise DataError(f"{path}: checkpoint missing tensors: {sorted(missing)[:3]} ...")
    return model, meta
