"""Versioned binary checkpoints for parameter vectors, curves and planes.

Layout (all integers little-endian)::

    offset  size  field
    0       4     magic b"CXBM"
    4       4     format version (u32)
    8       1     kind tag (1 params, 2 curve, 3 planar)
    9       1     flags (bit 0: endpoints frozen)
    10      2     number of stored vectors (u16)
    12      8     parameters per vector (u64)
    20      8     scalar slot (f64; the planar scale s, else 0)
    28      4     manifest length in bytes (u32)
    32      ...   manifest: UTF-8 JSON with the model spec and tensor layout
    ...           payload: vectors back to back as little-endian f64
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .curve import CurveModel
from .models import Layout, ModelSpec, ParamVector
from .planar import PlanarModel

__all__ = ["CheckpointError", "Checkpoint", "save_checkpoint", "load_checkpoint", "HEADER_SIZE", "FORMAT_VERSION"]

MAGIC = b"CXBM"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sIBBHQdI")
HEADER_SIZE = HEADER.size
KINDS = {"params": 1, "curve": 2, "planar": 3}
KIND_NAMES = {v: k for k, v in KINDS.items()}

Payload = Union[ParamVector, CurveModel, PlanarModel]


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    kind: str
    spec: ModelSpec
    model: Payload


def _vectors(obj: Payload) -> tuple[str, list[ParamVector], float, int]:
    if isinstance(obj, ParamVector):
        return "params", [obj], 0.0, 0
    if isinstance(obj, CurveModel):
        return "curve", [obj.theta0, obj.theta_b, obj.theta1], 0.0, int(obj.endpoints_frozen)
    if isinstance(obj, PlanarModel):
        return "planar", [obj.w0, obj.w1, obj.w2], obj.s, 0
    raise TypeError(f"cannot checkpoint {type(obj).__name__}")


def save_checkpoint(path, obj: Payload, spec: ModelSpec) -> Path:
    kind, vecs, scalar, flags = _vectors(obj)
    layout = vecs[0].layout
    manifest = json.dumps({"spec": spec.to_dict(), "layout": layout.to_list()}, sort_keys=True).encode()
    header = HEADER.pack(MAGIC, FORMAT_VERSION, KINDS[kind], flags, len(vecs), layout.size, scalar, len(manifest))
    payload = b"".join(v.values.astype("<f8").tobytes() for v in vecs)
    path = Path(path)
    path.write_bytes(header + manifest + payload)
    return path


def load_checkpoint(path, kind: str | None = None) -> Checkpoint:
    raw = Path(path).read_bytes()
    if len(raw) < HEADER_SIZE:
        raise CheckpointError(f"{path}: truncated header at byte offset {len(raw)}")
    magic, version, tag, flags, nvec, nparam, scalar, mlen = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r} at byte offset 0")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    if tag not in KIND_NAMES:
        raise CheckpointError(f"{path}: unknown kind tag {tag}")
    found = KIND_NAMES[tag]
    if kind is not None and kind != found:
        raise CheckpointError(f"{path}: holds a {found} checkpoint, expected {kind}")
    end = HEADER_SIZE + mlen
    if len(raw) < end:
        raise CheckpointError(f"{path}: truncated manifest at byte offset {len(raw)} (need {end})")
    manifest = json.loads(raw[HEADER_SIZE:end].decode())
    spec = ModelSpec.from_dict(manifest["spec"])
    layout = Layout.from_list(manifest["layout"])
    if layout.size != nparam:
        raise CheckpointError(f"{path}: manifest describes {layout.size} params, header says {nparam}")
    need = end + 8 * nparam * nvec
    if len(raw) < need:
        raise CheckpointError(f"{path}: truncated payload at byte offset {len(raw)} (need {need})")
    if len(raw) > need:
        raise CheckpointError(f"{path}: {len(raw) - need} trailing bytes after offset {need}")
    vecs = [
        ParamVector(np.frombuffer(raw, "<f8", nparam, end + 8 * nparam * i).astype(np.float64), layout)
        for i in range(nvec)
    ]
    if found == "params":
        model: Payload = vecs[0]
    elif found == "curve":
        model = CurveModel(*vecs, endpoints_frozen=bool(flags & 1))
    else:
        model = PlanarModel(*vecs, s=scalar)
    return Checkpoint(found, spec, model)
