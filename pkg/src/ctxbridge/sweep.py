"""Evaluate trained curves and planes over a grid of contexts; CSV in and out.

Curve sweeps use the columns ``t,key,accuracy,n`` where ``key`` is
``overall`` or ``class_<k>``. Planar grids use ``t1,t2,accuracy,n_eval``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .context import (
    CorruptionSpec,
    RiskProfile,
    ShiftSpec,
    corrupt,
    favored_class,
    sample_contextual_batch,
)
from .curve import CurveModel, sample_model
from .data import Dataset
from .models import Network
from .planar import GRID, PlanarModel, planar_eval_grid

__all__ = [
    "SweepResult",
    "GridResult",
    "SWEEP_COLUMNS",
    "GRID_COLUMNS",
    "default_t_grid",
    "eval_sweep",
    "eval_curve",
    "eval_planar",
    "read_csv",
]

SWEEP_COLUMNS = ("t", "key", "accuracy", "n")
GRID_COLUMNS = ("t1", "t2", "accuracy", "n_eval")


def default_t_grid(points: int = 21) -> np.ndarray:
    return np.round(np.linspace(0.0, 1.0, points), 10)


def _fmt(v: float) -> str:
    return repr(float(v))


@dataclass
class SweepResult:
    rows: list[tuple[float, str, float, int]]
    metadata: dict = field(default_factory=dict)

    def accuracy(self, t: float, key: str = "overall") -> float:
        for rt, rk, acc, _ in self.rows:
            if rk == key and abs(rt - t) < 1e-12:
                return acc
        raise KeyError((t, key))

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(SWEEP_COLUMNS)
            for t, key, acc, n in self.rows:
                w.writerow([_fmt(t), key, _fmt(acc), n])
        path.with_suffix(".meta.json").write_text(json.dumps(self.metadata, indent=2, sort_keys=True) + "\n")
        return path


@dataclass
class GridResult:
    grid: np.ndarray
    accuracy: np.ndarray
    n_eval: int
    metadata: dict = field(default_factory=dict)

    @property
    def mean(self) -> float:
        return float(self.accuracy.mean())

    def write_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(GRID_COLUMNS)
            for i, t1 in enumerate(self.grid):
                for j, t2 in enumerate(self.grid):
                    w.writerow([_fmt(t1), _fmt(t2), _fmt(self.accuracy[i, j]), self.n_eval])
        path.with_suffix(".meta.json").write_text(json.dumps(self.metadata, indent=2, sort_keys=True) + "\n")
        return path


def _rows_for(t: float, pred: np.ndarray, y: np.ndarray, num_classes: int) -> list[tuple]:
    rows = [(float(t), "overall", float((pred == y).mean()), int(y.size))]
    for k in range(num_classes):
        sel = y == k
        if sel.any():
            rows.append((float(t), f"class_{k}", float((pred[sel] == k).mean()), int(sel.sum())))
    return rows


def eval_curve(
    curve: CurveModel,
    net: Network,
    test: Dataset,
    context=None,
    grid: Sequence[float] | None = None,
    seed: int = 0,
) -> SweepResult:
    """Per-class and overall accuracy of the model sampled at each t.

    The evaluation set is matched to the context at t: corrupted at severity
    t for a :class:`CorruptionSpec`, resampled (with replacement) from
    P(Y|t) for a :class:`ShiftSpec`, and left untouched otherwise.
    """
    grid = default_t_grid() if grid is None else np.asarray(grid, dtype=np.float64)
    rows: list[tuple] = []
    meta: dict = {"version": __version__, "grid": [float(t) for t in grid], "seed": int(seed)}
    if isinstance(context, RiskProfile):
        meta["context"] = "risk"
        meta["favored_class"] = {_fmt(t): favored_class(t, context.num_classes) for t in grid}
    elif isinstance(context, CorruptionSpec):
        meta["context"] = f"corruption:{context.corruption}:gamma={context.gamma}"
    elif isinstance(context, ShiftSpec):
        meta["context"] = "shift"
        meta["eval_set"] = "test set resampled with replacement from normalized P(Y|t)"
    else:
        meta["context"] = "none"
    for i, t in enumerate(grid):
        x, y = test.x, test.y
        if isinstance(context, CorruptionSpec):
            x = corrupt(x, t, context, np.random.default_rng(np.random.SeedSequence([int(seed), i, 0])))
        elif isinstance(context, ShiftSpec):
            x, y = resample_by_prior(test, t, context, np.random.default_rng(np.random.SeedSequence([int(seed), i, 1])))
        pred = net.predict(sample_model(curve, t), x)
        rows.extend(_rows_for(t, pred, y, test.num_classes))
    return SweepResult(rows, meta)


def resample_by_prior(test: Dataset, t: float, spec: ShiftSpec, rng: np.random.Generator, size: int | None = None):
    """Test samples drawn with replacement so the label frequencies follow P(Y|t)."""
    return sample_contextual_batch(test, t, spec, len(test) if size is None else size, rng)


def eval_planar(
    model: PlanarModel,
    net: Network,
    test: Dataset,
    corruptions: tuple[CorruptionSpec, CorruptionSpec],
    seed: int = 0,
    grid: Sequence[float] = GRID,
) -> GridResult:
    grid = np.asarray(grid, dtype=np.float64)
    acc = planar_eval_grid(model, net, test, corruptions[0], corruptions[1], seed=seed, grid=grid)
    meta = {
        "version": __version__,
        "seed": int(seed),
        "corruptions": [f"{c.corruption}:gamma={c.gamma}" for c in corruptions],
        "mean_accuracy": float(acc.mean()),
    }
    return GridResult(grid, acc, len(test), meta)


def eval_sweep(checkpoint, net: Network, test: Dataset, context=None, grid=None, seed: int = 0):
    """Dispatch on the checkpoint kind: curves take a single context, planes a pair of corruptions."""
    model = getattr(checkpoint, "model", checkpoint)
    if isinstance(model, CurveModel):
        if isinstance(context, tuple):
            raise ValueError("a curve checkpoint takes a single context, not a corruption pair")
        return eval_curve(model, net, test, context, grid, seed)
    if isinstance(model, PlanarModel):
        if not (isinstance(context, tuple) and len(context) == 2 and all(isinstance(c, CorruptionSpec) for c in context)):
            raise ValueError("a planar checkpoint needs a pair of corruption contexts")
        return eval_planar(model, net, test, context, seed, GRID if grid is None else grid)
    raise ValueError(f"cannot sweep a {type(model).__name__}; expected a curve or planar checkpoint")


def read_csv(path) -> tuple[tuple[str, ...], list[dict]]:
    """Parse a sweep or grid CSV, validating it against one of the two schemas."""
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = tuple(next(reader))
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        rows = list(reader)
    if header == SWEEP_COLUMNS:
        conv = (float, str, float, int)
    elif header == GRID_COLUMNS:
        conv = (float, float, float, int)
    else:
        raise ValueError(f"{path}: header {header} matches neither {SWEEP_COLUMNS} nor {GRID_COLUMNS}")
    out = []
    for lineno, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        rec = {h: f(v) for h, f, v in zip(header, conv, row)}
        if not 0.0 <= rec["accuracy"] <= 1.0:
            raise ValueError(f"{path}:{lineno}: accuracy {rec['accuracy']} outside [0, 1]")
        if rec[header[3]] <= 0:
            raise ValueError(f"{path}:{lineno}: sample count must be positive")
        out.append(rec)
    return header, out
