"""Command line entry point: ``tubeflow <suite> --config FILE [--seed N] [--out DIR] [--threads N]``.

Exit codes: 0 all checks pass, 1 a check failed, 2 configuration error,
3 numerical failure (solver stall, sampler refusal, underflow).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .config import SUITES, ConfigError, parse_config, suite_names

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tubeflow", description="Thin-tube Brownian motion verification suites.")
    p.add_argument("suite", choices=SUITES + ("all",))
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--seed", type=int, default=None, help="overrides run.seed")
    p.add_argument("--out", type=Path, default=None, help="overrides run.out")
    p.add_argument("--threads", type=int, default=None, help="BLAS threads (falls back to TUBEFLOW_THREADS)")
    p.add_argument("-q", "--quiet", action="store_true")
    return p


def _set_threads(n: int | None) -> None:
    if n is None:
        env = os.environ.get("TUBEFLOW_THREADS")
        n = int(env) if env else None
    if n is not None:
        if n < 1:
            raise ConfigError("threads must be positive")
        for var in _THREAD_VARS:
            os.environ[var] = str(n)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(name)s: %(message)s")
    try:
        _set_threads(args.threads)
        cfg = parse_config(args.config.read_text(encoding="utf-8"))
        changes = {}
        if args.seed is not None:
            changes["run.seed"] = args.seed
        if args.out is not None:
            changes["run.out"] = str(args.out)
        cfg = cfg.updated(changes) if changes else cfg
    except (ConfigError, OSError, ValueError) as exc:
        print(f"tubeflow: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    # imported late so thread settings reach the BLAS runtime
    from .report import dump_json, run_suite
    from .sampler import AcceptanceError, EstimateRefused
    from .spectral import ConvergenceError

    out = Path(cfg["run.out"])
    records = []
    try:
        for name in suite_names(cfg, args.suite):
            records.append(run_suite(cfg, name, out))
    except (ConvergenceError, AcceptanceError, EstimateRefused, FloatingPointError) as exc:
        print(f"tubeflow: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    if len(records) > 1:
        dump_json(out / "report.json", {"config_hash": cfg.hash(), "suites": [r.to_json() for r in records]})
    failed = [c.name for r in records for c in r.checks if c.status == "fail"]
    for r in records:
        for c in r.checks:
            print(f"{r.suite:13s} {c.status.upper():4s} {c.name} slack={c.slack:.3g}")
    if failed:
        print(f"tubeflow: {len(failed)} check(s) failed", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
