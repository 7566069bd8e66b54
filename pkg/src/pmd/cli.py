"""Command-line front end: ``infer run | validate | summarize``.

The output directory comes from ``--out``, else the ``INFER_OUT_DIR``
environment variable, else the config's ``[output] dir``.  No other setting
can be overridden from the environment.

Failures print a one-line JSON error object to stderr and exit non-zero:
2 for configuration or input problems, 1 for failures during a run.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .config import load_config
from .exceptions import ConfigError, InvalidDataError, PMDError

OUT_ENV = "INFER_OUT_DIR"


def _error(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    return code


def cmd_run(args) -> int:
    from .runner import run_experiment, run_repeated

    cfg = load_config(args.config)
    out = args.out or os.environ.get(OUT_ENV) or None
    if args.repeat == 1:
        summaries = [run_experiment(cfg, out)]
    else:
        summaries = run_repeated(cfg, args.repeat, out, workers=args.workers)
    for s in summaries:
        final = ", ".join(f"{k}={v:.4g}" for k, v in s["final"].items() if k in ("tv", "kl", "accuracy", "map_accuracy"))
        print(f"{s['algorithm']} seed={s['seed']} {final} ({s['wall_clock_seconds']:.1f}s)")
    return 0


def cmd_validate(args) -> int:
    from .runner import validate_experiment

    cfg = load_config(args.config)
    model, train, test, alg = validate_experiment(cfg)
    held = f", {test.size} held out" if test is not None else ""
    print(
        f"ok: {cfg.model_kind} (d={model.dim}), {train.size} rows{held}, "
        f"{cfg.algorithm.name} for {alg.iterations} iterations"
    )
    return 0


def cmd_summarize(args) -> int:
    from .runner import summarize

    result = summarize(args.dir, figures=not args.no_figures)
    for name, group in result.items():
        meds = ", ".join(f"{k}={v:.4g}" for k, v in group["median"].items())
        print(f"{name} ({len(group['seeds'])} seeds): {meds}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="infer", description="Particle mirror descent experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment config")
    run.add_argument("config")
    run.add_argument("--repeat", type=int, default=1, help="number of seeds, run concurrently")
    run.add_argument("--out", default=None, help=f"output directory (overrides ${OUT_ENV} and [output] dir)")
    run.add_argument("--workers", type=int, default=None, help="worker processes for --repeat")
    run.set_defaults(func=cmd_run)

    val = sub.add_parser("validate", help="check a config and its data without running")
    val.add_argument("config")
    val.set_defaults(func=cmd_validate)

    summ = sub.add_parser("summarize", help="aggregate per-seed medians under a directory")
    summ.add_argument("dir")
    summ.add_argument("--no-figures", action="store_true")
    summ.set_defaults(func=cmd_summarize)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InvalidDataError) as exc:
        return _error(type(exc).__name__, str(exc), 2)
    except (FileNotFoundError, OSError) as exc:
        return _error(type(exc).__name__, str(exc), 2)
    except (PMDError, ArithmeticError, ValueError) as exc:
        return _error(type(exc).__name__, str(exc), 1)


if __name__ == "__main__":
    sys.exit(main())
