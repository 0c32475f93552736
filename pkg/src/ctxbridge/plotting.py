"""SVG figures rendered from sweep / grid CSVs. Pure views: no computation beyond grouping."""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import numpy as np
from matplotlib.backends.backend_svg import FigureCanvasSVG
from matplotlib.figure import Figure

from .sweep import GRID_COLUMNS, SWEEP_COLUMNS, read_csv

__all__ = ["emit_plots", "SERIES_GID_PREFIX"]

SERIES_GID_PREFIX = "series-"

_RC = {
    "svg.hashsalt": "ctxbridge",
    "svg.fonttype": "path",
    "font.size": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
}


def _save(fig: Figure, path: Path) -> Path:
    FigureCanvasSVG(fig)
    fig.savefig(path, format="svg", metadata={"Date": None})
    return path


def _family(key: str) -> str:
    return "per_class" if key.startswith("class_") else key


def _line_charts(rows: list[dict], out_dir: Path, stem: str) -> list[Path]:
    series: dict[str, dict[str, list]] = defaultdict(lambda: defaultdict(list))
    for r in rows:
        series[_family(r["key"])][r["key"]].append((r["t"], r["accuracy"]))
    paths = []
    for family in sorted(series):
        fig = Figure(figsize=(5.0, 3.2))
        ax = fig.add_subplot(111)
        keys = sorted(series[family], key=lambda k: (len(k), k))
        for key in keys:
            pts = sorted(series[family][key])
            ax.plot([p[0] for p in pts], [p[1] for p in pts], label=key, gid=SERIES_GID_PREFIX + key, lw=1.5)
        ax.set_xlabel("context t")
        ax.set_ylabel("accuracy")
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1.02)
        ax.set_title(family.replace("_", " "))
        if len(keys) > 1:
            ax.legend(fontsize=7, ncol=2, frameon=False)
        fig.tight_layout()
        paths.append(_save(fig, out_dir / f"{stem}_{family}.svg"))
    return paths


def _heatmap(rows: list[dict], out_dir: Path, stem: str) -> list[Path]:
    t1s = sorted({r["t1"] for r in rows})
    t2s = sorted({r["t2"] for r in rows})
    acc = np.full((len(t1s), len(t2s)), np.nan)
    for r in rows:
        acc[t1s.index(r["t1"]), t2s.index(r["t2"])] = r["accuracy"]
    fig = Figure(figsize=(4.4, 3.8))
    ax = fig.add_subplot(111)
    mesh = ax.pcolormesh(
        np.arange(len(t2s) + 1), np.arange(len(t1s) + 1), acc, vmin=0, vmax=1, cmap="viridis", gid="grid-accuracy"
    )
    ax.invert_yaxis()
    ax.set_xticks(np.arange(len(t2s)) + 0.5, [f"{t:g}" for t in t2s], fontsize=6)
    ax.set_yticks(np.arange(len(t1s)) + 0.5, [f"{t:g}" for t in t1s], fontsize=6)
    ax.set_xlabel("t2 (second corruption)")
    ax.set_ylabel("t1 (first corruption)")
    ax.grid(False)
    fig.colorbar(mesh, ax=ax, label="accuracy")
    fig.tight_layout()
    return [_save(fig, out_dir / f"{stem}_grid.svg")]


def emit_plots(csv_path, out_dir=None) -> list[Path]:
    """Render one SVG per metric family (sweep CSV) or one heatmap (grid CSV)."""
    csv_path = Path(csv_path)
    header, rows = read_csv(csv_path)
    if not rows:
        raise ValueError(f"{csv_path}: no result rows to plot")
    out_dir = Path(out_dir) if out_dir is not None else csv_path.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    with matplotlib.rc_context(_RC):
        if header == SWEEP_COLUMNS:
            return _line_charts(rows, out_dir, csv_path.stem)
        assert header == GRID_COLUMNS
        return _heatmap(rows, out_dir, csv_path.stem)
