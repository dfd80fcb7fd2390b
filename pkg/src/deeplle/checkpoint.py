"""Binary checkpoint container.

Layout (all integers little-endian)::

    magic      4 bytes   b"DLLE"
    version    uint32    currently 1
    hlen       uint32    length of the JSON header in bytes
    header     hlen bytes, UTF-8 JSON:
                 {"arch": {...ArchConfig fields...},
                  "seed": int,
                  "tensors": [{"name": str, "shape": [int, ...]}, ...],
                  "meta": {...}}
    payload    for each entry of "tensors", in order: prod(shape) float32
               values, little-endian, row-major

Model parameters use their ``ModelState`` names; the node latent codes of a
fitted model, when present, are stored under the name ``"codes"``.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .engine import Tensor
from .model import ArchConfig, ModelState, build_model

MAGIC = b"DLLE"
VERSION = 1
_LE_F32 = np.dtype("<f4")


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, model: ModelState, codes=None, meta: dict | None = None) -> Path:
    tensors = [(name, p.data) for name, p in model.params.items()]
    if codes is not None:
        tensors.append(("codes", np.asarray(codes)))
    header = {
        "arch": model.arch.to_dict(),
        "seed": int(model.seed),
        "tensors": [{"name": n, "shape": list(a.shape)} for n, a in tensors],
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(blob)))
        fh.write(blob)
        for _, arr in tensors:
            fh.write(np.ascontiguousarray(arr, dtype=_LE_F32).tobytes())
    return path


def load_checkpoint(path):
    """Returns ``(model, codes, meta)``; ``codes`` is None if the file has none."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    arch = ArchConfig.from_dict(header["arch"])
    model = build_model(arch, header["seed"])
    offset = 12 + hlen
    codes = None
    seen = set()
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape))
        if offset + 4 * count > len(raw):
            raise CheckpointError(f"{path}: truncated payload at tensor {entry['name']!r}")
        arr = np.frombuffer(raw, dtype=_LE_F32, count=count, offset=offset).reshape(shape).astype(np.float32)
        offset += 4 * count
        if entry["name"] == "codes":
            codes = arr
        elif entry["name"] in model.params:
            if model.params[entry["name"]].shape != shape:
                raise CheckpointError(f"{path}: tensor {entry['name']!r} has shape {shape}, arch expects "
                                      f"{model.params[entry['name']].shape}")
            model.params[entry["name"]] = Tensor(arr, requires_grad=True)
            seen.add(entry["name"])
        else:
            raise CheckpointError(f"{path}: unknown tensor {entry['name']!r}")
    missing = sorted(set(model.params) - seen)
    if missing:
        raise CheckpointError(f"{path}: missing tensors {missing}")
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    return model, codes, header.get("meta", {})
