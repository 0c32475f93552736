"""Datasets: IDX files, synthetic Gaussian blobs, normalization, augmentation."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

__all__ = [
    "Dataset",
    "IDXError",
    "NormStats",
    "load_idx",
    "write_idx",
    "synth_blobs",
    "normalize",
    "denormalize",
    "augment",
]


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}


@dataclass(frozen=True, eq=False)
class Dataset:
    """Samples ``x`` of shape (n, features) or (n, C, H, W) with integer labels ``y``."""

    x: np.ndarray
    y: np.ndarray
    num_classes: int
    stats: NormStats | None = field(default=None)

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.int64)
        if x.shape[0] != y.shape[0]:
            raise ValueError(f"{x.shape[0]} samples but {y.shape[0]} labels")
        if y.size and (y.min() < 0 or y.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return self.y.size

    @property
    def is_image(self) -> bool:
        return self.x.ndim == 4

    @cached_property
    def _class_indices(self) -> tuple[np.ndarray, ...]:
        return tuple(np.flatnonzero(self.y == c) for c in range(self.num_classes))

    def class_indices(self) -> tuple[np.ndarray, ...]:
        return self._class_indices

    def subset(self, idx) -> "Dataset":
        return Dataset(self.x[idx], self.y[idx], self.num_classes, self.stats)


# -- IDX ------------------------------------------------------------------

IDX_DTYPES = {0x08: ">u1", 0x09: ">i1", 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}


class IDXError(ValueError):
    pass


def _read_idx(path: Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise IDXError(f"{path}: truncated header at offset {len(raw)}")
    zero, code, ndim = raw[0:2], raw[2], raw[3]
    if zero != b"\x00\x00" or code not in IDX_DTYPES:
        raise IDXError(f"{path}: bad magic {raw[:4].hex()} at offset 0")
    end = 4 + 4 * ndim
    if len(raw) < end:
        raise IDXError(f"{path}: truncated dimension block at offset {len(raw)} (need {end})")
    dims = struct.unpack(f">{ndim}I", raw[4:end])
    dt = np.dtype(IDX_DTYPES[code])
    need = int(np.prod(dims)) * dt.itemsize
    if len(raw) - end < need:
        raise IDXError(f"{path}: truncated payload at offset {len(raw)} (need {end + need})")
    return np.frombuffer(raw, dtype=dt, count=int(np.prod(dims)), offset=end).reshape(dims)


def write_idx(path, array: np.ndarray) -> None:
    array = np.asarray(array)
    code = {np.dtype(v).newbyteorder("="): k for k, v in IDX_DTYPES.items()}[array.dtype.newbyteorder("=")]
    header = bytes([0, 0, code, array.ndim]) + struct.pack(f">{array.ndim}I", *array.shape)
    Path(path).write_bytes(header + array.astype(IDX_DTYPES[code]).tobytes())


def load_idx(images_path, labels_path, num_classes: int | None = None) -> Dataset:
    """Read an image/label IDX pair; unsigned-byte pixels are scaled to [0, 1].

    Rank-3 image files (n, H, W) get a singleton channel axis.
    """
    images = _read_idx(images_path)
    labels = _read_idx(labels_path)
    if labels.ndim != 1:
        raise IDXError(f"{labels_path}: labels must be rank 1, got {labels.shape}")
    x = images.astype(np.float64)
    if images.dtype == np.uint8:
        x /= 255.0
    if x.ndim == 3:
        x = x[:, None]
    y = labels.astype(np.int64)
    k = num_classes if num_classes is not None else (int(y.max()) + 1 if y.size else 0)
    return Dataset(x, y, k)


# -- synthetic ------------------------------------------------------------


def blob_centers(num_classes: int, dims: int, separation: float = 1.0) -> np.ndarray:
    """Class k sits at +-separation on axis k mod dims; falls back to fixed random directions past 2*dims classes."""
    if num_classes <= 2 * dims:
        centers = np.zeros((num_classes, dims))
        for k in range(num_classes):
            centers[k, k % dims] = separation if k < dims else -separation
        return centers
    d = np.random.default_rng(0).normal(size=(num_classes, dims))
    return separation * d / np.linalg.norm(d, axis=1, keepdims=True)


def synth_blobs(
    num_classes: int,
    dims: int,
    samples_per_class: int,
    spread: float | Sequence,
    seed: int,
    separation: float = 1.0,
    centers: np.ndarray | None = None,
) -> Dataset:
    """Gaussian clusters around :func:`blob_centers` (or explicit ``centers``, shape (classes, dims)).

    ``spread`` is the within-class std and broadcasts to (classes, dims):
    a scalar, a per-dimension vector, or a per-class column ``[[s0], [s1], ...]``.
    """
    if num_classes < 2:
        raise ValueError("need at least 2 classes")
    rng = np.random.default_rng(seed)
    if centers is None:
        centers = blob_centers(num_classes, dims, separation)
    else:
        centers = np.asarray(centers, dtype=np.float64)
        if centers.shape != (num_classes, dims):
            raise ValueError(f"centers must have shape {(num_classes, dims)}, got {centers.shape}")
    spread = np.broadcast_to(np.asarray(spread, dtype=np.float64), (num_classes, dims))
    y = np.repeat(np.arange(num_classes), samples_per_class)
    x = centers[y] + rng.normal(size=(y.size, dims)) * spread[y]
    return Dataset(x, y, num_classes)


# -- normalization ---------------------------------------------------------


def _channel_axes(x: np.ndarray) -> tuple[int, ...]:
    return (0, 2, 3) if x.ndim == 4 else (0,)


def _broadcast_stats(x: np.ndarray, v: np.ndarray) -> np.ndarray:
    return v.reshape(1, -1, 1, 1) if x.ndim == 4 else v.reshape(1, -1)


def normalize(dataset: Dataset, stats: NormStats | None = None) -> Dataset:
    """Per-channel standardization; computes stats from ``dataset`` unless given (e.g. train stats for a test set)."""
    if len(dataset) == 0:
        raise ValueError("cannot normalize an empty dataset")
    x = dataset.x
    if stats is None:
        axes = _channel_axes(x)
        stats = NormStats(x.mean(axis=axes), x.std(axis=axes))
    if np.any(stats.std == 0):
        bad = np.flatnonzero(stats.std == 0).tolist()
        raise ValueError(f"zero standard deviation in channel(s) {bad}")
    xn = (x - _broadcast_stats(x, stats.mean)) / _broadcast_stats(x, stats.std)
    return Dataset(xn, dataset.y, dataset.num_classes, stats)


def denormalize(x: np.ndarray, stats: NormStats) -> np.ndarray:
    return x * _broadcast_stats(x, stats.std) + _broadcast_stats(x, stats.mean)


# -- augmentation ---------------------------------------------------------


def augment(x: np.ndarray, rng: np.random.Generator, flip_prob: float = 0.5, pad: int = 4) -> np.ndarray:
    """Random horizontal flip, then zero-pad by ``pad`` and crop back at a random offset."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4:
        raise ValueError(f"augment expects (n, C, H, W), got {x.shape}")
    n, _, h, w = x.shape
    out = x.copy()
    if flip_prob > 0:
        flips = rng.random(n) < flip_prob
        out[flips] = out[flips, :, :, ::-1]
    if pad > 0:
        padded = np.pad(out, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        oy = rng.integers(0, 2 * pad + 1, size=n)
        ox = rng.integers(0, 2 * pad + 1, size=n)
        for i in range(n):
            out[i] = padded[i, :, oy[i] : oy[i] + h, ox[i] : ox[i] + w]
    return out
