"""``loopqed <experiment> --config <path> [--seed S] [--samples N] [--slices M] [--out DIR]``.

Exit codes: 0 success, 1 numeric failure or failed check, 2 usage or config error.
The worker count is read from LOOPQED_WORKERS.
"""

from __future__ import annotations

import argparse
import sys

from .config import EXPERIMENTS, ConfigError, load_config
from .estimators import NumericFailure, worker_count
from .experiments import execute, write_outputs


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="loopqed", description="Run a loopqed experiment.")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", required=True, help="INI configuration file")
    p.add_argument("--seed", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--slices", type=int)
    p.add_argument("--out", help="output directory (overrides [run] out)")
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.experiment)
        cfg = cfg.with_overrides(seed=args.seed, samples=args.samples, slices=args.slices, out_dir=args.out)
        worker_count()
    except ConfigError as exc:
        print(f"loopqed: config error: {exc}", file=sys.stderr)
        return 2
    try:
        result = execute(cfg)
    except NumericFailure as exc:
        print(f"loopqed: numeric failure: {exc}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(f"loopqed: config error: {exc}", file=sys.stderr)
        return 2
    try:
        csv_path, json_path = write_outputs(result, cfg, cfg.out_dir)
    except OSError as exc:
        print(f"loopqed: cannot write outputs: {exc}", file=sys.stderr)
        return 1
    status = "all checks passed" if result.passed else "some checks FAILED"
    print(f"{cfg.experiment}: {status}; wrote {csv_path} and {json_path}")
    return 0 if result.passed else 1


if __name__ == "__main__":
    sys.exit(main())
