"""Run one experiment from a config and write its artifacts.

Every run directory gets ``config.json`` (the fully resolved config; rerun
it to reproduce the run), checkpoints (``*.ckpt``), ``history.csv`` and,
where applicable, result CSVs with ``.meta.json`` sidecars and SVG figures.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import ExperimentConfig, config_hash
from .context import CorruptionSpec, RiskProfile, ShiftSpec
from .curve import CurveModel, midpoint_curve
from .data import Dataset, load_idx, normalize, synth_blobs
from .models import Network, ParamVector
from .planar import PlanarModel, planar_train
from .plotting import emit_plots
from .sweep import GridResult, SweepResult, eval_sweep
from .training import OptimizerState, pretrain_endpoint, train_bmc

__all__ = ["OUTPUT_ROOT_ENV", "RunResult", "load_data", "run_experiment", "output_dir_for", "context_for"]

log = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "CTXBRIDGE_OUTPUT_ROOT"


@dataclass
class Splits:
    train: Dataset
    val: Dataset
    test: Dataset


@dataclass
class RunResult:
    out_dir: Path
    files: list[Path] = field(default_factory=list)
    sweep: SweepResult | None = None
    baseline: SweepResult | None = None
    grid: GridResult | None = None
    base_grid: GridResult | None = None
    model: object = None


def output_dir_for(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.output_dir)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not out.is_absolute():
        out = Path(root) / out
    return out


def load_data(cfg: ExperimentConfig) -> Splits:
    d = cfg.data
    if d.source == "blobs":
        def blobs(n, seed):
            return synth_blobs(d.classes, d.dims, n, d.spread, seed, d.separation, d.centers)

        train = blobs(d.samples_per_class, cfg.seed)
        val = blobs(d.test_samples_per_class, cfg.seed + 7919)
        test = blobs(d.test_samples_per_class, cfg.seed + 15887)
    else:
        full = load_idx(d.train_images, d.train_labels)
        test = load_idx(d.test_images, d.test_labels, full.num_classes)
        order = np.random.default_rng(cfg.seed).permutation(len(full))
        n_val = max(1, int(round(d.val_fraction * len(full))))
        train, val = full.subset(np.sort(order[n_val:])), full.subset(np.sort(order[:n_val]))
    if d.normalize:
        # normalize first: corruption is always applied to normalized inputs
        train = normalize(train)
        val = normalize(val, train.stats)
        test = normalize(test, train.stats)
    return Splits(train, val, test)


def context_for(cfg: ExperimentConfig, num_classes: int, kind: str | None = None):
    kind = kind or {"bmc-risk": "risk", "bmc-longtail": "longtail", "bmc-shift": "shift"}.get(cfg.experiment, "none")
    c = cfg.context
    if kind == "risk":
        return RiskProfile(c.beta, num_classes)
    if kind == "longtail":
        return CorruptionSpec(c.corruption, c.gamma)
    if kind == "shift":
        return ShiftSpec(num_classes)
    if kind == "planar":
        return tuple(cc.spec(stream=i + 1) for i, cc in enumerate(c.corruptions))
    return None


def _write_history(path: Path, rows: list[dict]) -> Path:
    cols = list(rows[0]) if rows else ["epoch", "loss"]
    for r in rows:
        cols += [k for k in r if k not in cols]
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, cols, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    return path


def _stamp(result, cfg: ExperimentConfig):
    result.metadata["config_hash"] = config_hash(cfg)
    return result


def _pretrain(cfg, net, splits, out, res, name="endpoint") -> ParamVector:
    history: list[dict] = []
    params = pretrain_endpoint(net, splits.train, cfg.pretrain.train_config(cfg.seed), history=history)
    res.files.append(save_checkpoint(out / f"{name}.ckpt", params, net.spec))
    res.files.append(_write_history(out / f"{name}_history.csv", history))
    return params


def _run_bmc(cfg, net, splits, out, res):
    if cfg.endpoint_init == "pretrained":
        start = _pretrain(cfg, net, splits, out, res)
    else:
        start = net.init_params(cfg.seed)
    # both endpoints start at the same mode and drift apart only if they float
    curve = midpoint_curve(start, start, cfg.endpoints_frozen)
    context = context_for(cfg, splits.train.num_classes)
    curve, history = train_bmc(curve, net, splits.train, context, cfg.bmc.train_config(cfg.seed))
    res.files.append(save_checkpoint(out / "curve.ckpt", curve, net.spec))
    res.files.append(_write_history(out / "history.csv", history))
    grid = cfg.eval.t_grid()
    eval_seed = cfg.seed + cfg.eval.seed_offset
    res.sweep = _stamp(eval_sweep(curve, net, splits.test, context, grid, eval_seed), cfg)
    res.files.append(res.sweep.write_csv(out / "sweep.csv"))
    if isinstance(context, (CorruptionSpec, ShiftSpec)):
        # the starting single model, read under the same contexts
        fixed = CurveModel(start, start, start)
        res.baseline = _stamp(eval_sweep(fixed, net, splits.test, context, grid, eval_seed), cfg)
        res.baseline.metadata["model"] = "single endpoint model (context-agnostic baseline)"
        res.files.append(res.baseline.write_csv(out / "baseline_sweep.csv"))
    res.model = curve


def _run_planar(cfg, net, splits, out, res):
    base = _pretrain(cfg, net, splits, out, res, name="base")
    corruptions = context_for(cfg, splits.train.num_classes, "planar")
    p = cfg.planar
    opt = OptimizerState(p.lr, p.momentum, p.weight_decay, p.nesterov)
    model, history = planar_train(
        PlanarModel.from_base(base),
        net,
        splits.train,
        splits.val,
        corruptions,
        opt,
        cfg.seed,
        patience=p.patience,
        max_epochs=p.max_epochs,
        batch_size=p.batch_size,
        steps_per_epoch=p.steps_per_epoch,
        points=p.points_per_step,
    )
    res.files.append(save_checkpoint(out / "planar.ckpt", model, net.spec))
    res.files.append(_write_history(out / "history.csv", history))
    eval_seed = cfg.seed + cfg.eval.seed_offset
    res.grid = _stamp(eval_sweep(model, net, splits.test, corruptions, seed=eval_seed), cfg)
    res.files.append(res.grid.write_csv(out / "grid.csv"))
    res.base_grid = _stamp(eval_sweep(PlanarModel.from_base(base), net, splits.test, corruptions, seed=eval_seed), cfg)
    res.base_grid.metadata["model"] = "base model trained on clean data"
    res.files.append(res.base_grid.write_csv(out / "base_grid.csv"))
    res.model = model


def _run_eval(cfg, splits, out, res):
    ckpt = load_checkpoint(cfg.checkpoint)
    net = Network(ckpt.spec)
    kind = "planar" if ckpt.kind == "planar" else cfg.context.kind
    context = context_for(cfg, splits.test.num_classes, kind)
    result = _stamp(
        eval_sweep(ckpt, net, splits.test, context, cfg.eval.t_grid(), cfg.seed + cfg.eval.seed_offset),
        cfg,
    )
    name = "grid.csv" if ckpt.kind == "planar" else "sweep.csv"
    res.files.append(result.write_csv(out / name))
    if ckpt.kind == "planar":
        res.grid = result
    else:
        res.sweep = result


def run_experiment(cfg: ExperimentConfig, plots: bool = True) -> RunResult:
    out = output_dir_for(cfg)
    out.mkdir(parents=True, exist_ok=True)
    failed = out / "FAILED"
    failed.unlink(missing_ok=True)
    res = RunResult(out)
    (out / "config.json").write_text(json.dumps(cfg.resolved(), indent=2, sort_keys=True) + "\n")
    res.files.append(out / "config.json")
    log.info("running %s -> %s", cfg.experiment, out)
    try:
        splits = load_data(cfg)
        if cfg.experiment == "eval-sweep":
            _run_eval(cfg, splits, out, res)
        else:
            net = Network(cfg.model.spec())
            if cfg.experiment == "pretrain":
                res.model = _pretrain(cfg, net, splits, out, res)
            elif cfg.experiment == "planar":
                _run_planar(cfg, net, splits, out, res)
            else:
                _run_bmc(cfg, net, splits, out, res)
        if plots:
            for f in list(res.files):
                if f.suffix == ".csv" and f.stem in ("sweep", "baseline_sweep", "grid", "base_grid"):
                    res.files.extend(emit_plots(f, out))
    except Exception as exc:
        failed.write_text(f"{type(exc).__name__}: {exc}\n")
        raise
    return res
