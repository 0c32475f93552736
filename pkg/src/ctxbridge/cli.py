"""Command line entry point.

    ctxbridge run CONFIG.json
    ctxbridge eval CHECKPOINT --context {risk,longtail,shift,none} [--grid 21 | --grid 0,0.5,1]
    ctxbridge plot RESULT.csv

Exit codes: 0 ok, 1 runtime failure, 2 invalid config or arguments.
Relative output directories resolve against ``$CTXBRIDGE_OUTPUT_ROOT`` when set.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_config, parse_config
from .plotting import emit_plots
from .runner import run_experiment

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2

log = logging.getLogger("ctxbridge")


def _grid(text: str) -> dict:
    if "," in text:
        return {"grid": [float(v) for v in text.split(",")]}
    return {"grid_points": int(text)}


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    res = run_experiment(cfg, plots=not args.no_plots)
    for f in res.files:
        print(f)
    return EXIT_OK


def _cmd_eval(args) -> int:
    ckpt = Path(args.checkpoint)
    cfg_path = Path(args.config) if args.config else ckpt.parent / "config.json"
    if not cfg_path.exists():
        raise ConfigError(f"no config at {cfg_path}; pass --config to describe the evaluation data", ["--config"])
    base = json.loads(cfg_path.read_text())
    base.update(experiment="eval-sweep", checkpoint=str(ckpt), output_dir=args.out or str(ckpt.parent / "eval"))
    ctx = dict(base.get("context", {}))
    ctx["kind"] = args.context
    for key in ("beta", "gamma", "corruption"):
        if getattr(args, key) is not None:
            ctx[key] = getattr(args, key)
    base["context"] = ctx
    if args.grid:
        try:
            base["eval"] = {**base.get("eval", {}), "grid": None, **_grid(args.grid)}
        except ValueError:
            raise ConfigError(f"--grid: cannot parse {args.grid!r}", ["--grid"]) from None
    if args.seed is not None:
        base["seed"] = args.seed
    res = run_experiment(parse_config(base), plots=not args.no_plots)
    for f in res.files:
        print(f)
    return EXIT_OK


def _cmd_plot(args) -> int:
    for f in emit_plots(args.csv, args.out):
        print(f)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ctxbridge", description="Context-adaptive weight-space curves and planes.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("--no-plots", action="store_true")
    r.set_defaults(fn=_cmd_run)

    e = sub.add_parser("eval", help="sweep a curve or planar checkpoint over a context grid")
    e.add_argument("checkpoint")
    e.add_argument("--context", choices=["risk", "longtail", "shift", "none"], default="none")
    e.add_argument("--grid", help="number of evenly spaced points, or a comma-separated list of t values")
    e.add_argument("--config", help="config describing the data (default: config.json next to the checkpoint)")
    e.add_argument("--out", help="output directory (default: <checkpoint dir>/eval)")
    e.add_argument("--beta", type=float)
    e.add_argument("--gamma", type=float)
    e.add_argument("--corruption", choices=["gaussian-noise", "contrast"])
    e.add_argument("--seed", type=int)
    e.add_argument("--no-plots", action="store_true")
    e.set_defaults(fn=_cmd_eval)

    pl = sub.add_parser("plot", help="render SVG figures from a result CSV")
    pl.add_argument("csv")
    pl.add_argument("--out")
    pl.set_defaults(fn=_cmd_plot)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any runtime failure maps to exit 1
        log.debug("run failed", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
