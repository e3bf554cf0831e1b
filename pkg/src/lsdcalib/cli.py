"""Command line front end: ``lsdcalib {simulate,run,curves,compare}``."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import bench
from .errors import ConfigError, SingularityError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERIC = 4

log = logging.getLogger("lsdcalib")


def _config(args) -> bench.BenchConfig:
    cfg = bench.load_config(args.config) if args.config else bench.BenchConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    cfg.validate()
    return cfg


def _out_dir(args, cfg, sub: str) -> Path:
    return Path(args.out) if args.out else Path(cfg.output_dir) / sub


def cmd_simulate(args) -> int:
    cfg = _config(args)
    path = bench.cmd_simulate(cfg, _out_dir(args, cfg, "dataset"))
    print(f"wrote {cfg.num_samples} samples, manifest {path}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _config(args)
    dataset = Path(args.dataset) if args.dataset else Path(cfg.output_dir) / "dataset"
    if args.jobs < 1:
        raise ConfigError("--jobs must be >= 1")
    out = _out_dir(args, cfg, "run")
    report = bench.cmd_run(
        cfg, dataset, out, jobs=args.jobs, buffering=not args.no_buffering,
        timing=args.timing, dump_maps=args.dump_maps,
    )  # fmt: skip
    sys.stdout.write(report.to_text())
    print(f"results in {out}")
    return EXIT_OK


def cmd_curves(args) -> int:
    out = bench.cmd_curves(args.run_dir, args.out)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_compare(args) -> int:
    sys.stdout.write(bench.cmd_compare(args.run_dirs, args.out))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lsdcalib", description="Iterative extrinsic calibration benchmark")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="INI benchmark configuration (defaults built in)")
        sp.add_argument("--seed", type=int, help="override the configured seed")
        sp.add_argument("--out", help="output directory")

    sp = sub.add_parser("simulate", help="generate scenes and perturbations")
    common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("run", help="run every method on a dataset")
    common(sp)
    sp.add_argument("--dataset", help="dataset directory written by 'simulate'")
    sp.add_argument("--jobs", type=int, default=1, help="worker processes")
    sp.add_argument("--no-buffering", action="store_true", help="rebuild the surrogate context on every call")
    sp.add_argument("--timing", action="store_true", help="add wall-clock columns to efficiency.csv")
    sp.add_argument("--dump-maps", type=int, default=0, metavar="N", help="write PGM projection maps for the first N samples")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("curves", help="per-step error curves of a run as CSV")
    sp.add_argument("run_dir")
    sp.add_argument("--out", help="CSV path (default <run_dir>/curves.csv)")
    sp.set_defaults(func=cmd_curves)

    sp = sub.add_parser("compare", help="side-by-side table of several runs")
    sp.add_argument("run_dirs", nargs="+")
    sp.add_argument("--out", help="also write the table as CSV")
    sp.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except (SingularityError, np.linalg.LinAlgError, FloatingPointError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
