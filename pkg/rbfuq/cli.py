"""
Batch command line: ``rbfuq <command> [options]``.

Exit codes are 0 on success, 2 for usage and configuration errors, and the stage's code (3 to 9) when a pipeline
stage fails.
"""

import argparse
import json
import logging
import sys

from .config import load_config
from .errors import ConfigError, MeshError, MeshMismatch, StageError
from .pipeline import (
    STAGE_EXIT_CODES,
    build_mesh,
    check_refinement,
    compare,
    evaluate_scenario,
    run_accelerated_pipeline,
    run_collocation_baseline,
    run_screening,
)

__all__ = ("main", "build_parser")

log = logging.getLogger(__name__)

EXIT_USAGE = 2


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="Pipeline config file (defaults are used if omitted)")
    common.add_argument("--out", default=None, help="Output directory (overrides run.output_dir)")
    common.add_argument("--workers", type=int, default=None, help="Worker threads (overrides run.workers)")
    common.add_argument(
        "--seed", type=int, default=None, help="Leading Halton points to skip (overrides evaluation.skip)"
    )
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="Log debug messages")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="Only log warnings and errors")

    p = argparse.ArgumentParser(prog="rbfuq", description="Statistics of stochastic PDE solutions.")
    sub = p.add_subparsers(dest="command", required=True)

    meta = sub.add_parser("run-meta", parents=[common], help="Screening, accelerated metamodel and its statistics")
    meta.add_argument(
        "--reuse", metavar="DIR", default=None, help="Re-evaluate the metamodel persisted in DIR without solving"
    )
    sub.add_parser("run-colloc", parents=[common], help="Sparse-grid collocation baseline")
    sub.add_parser("screen", parents=[common], help="Parameter screening only")
    sub.add_parser("mesh-info", parents=[common], help="Print a summary of the configured mesh")

    cmp = sub.add_parser("compare", parents=[common], help="Nodal differences between the fields of two runs")
    cmp.add_argument("run", help="Run directory to test")
    cmp.add_argument("reference", help="Reference run directory")
    cmp.add_argument(
        "--finer", metavar="DIR", default=None, help="A finer reference; warns if RUN is further from it"
    )
    return p


def _configure_logging(args):
    level = logging.INFO
    if args.verbose:
        level = logging.DEBUG
    elif args.quiet:
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def _load(args):
    overrides = {}
    if args.out is not None:
        overrides["run.output_dir"] = args.out
    if args.workers is not None:
        overrides["run.workers"] = args.workers
    if args.seed is not None:
        overrides["evaluation.skip"] = args.seed
    return load_config(args.config, overrides=overrides)


def _summary(report):
    log.info(
        "%s run: %d solves, retained %s, SVD rank %s, outputs in %s",
        report.kind,
        report.total_solves,
        report.retained,
        report.svd_rank,
        report.config["run.output_dir"],
    )


def _compare(args, config) -> int:
    try:
        diffs = compare(args.run, args.reference, config["run.output_dir"])
        if args.finer is not None:
            check_refinement(args.run, args.reference, args.finer)
    except (MeshMismatch, MeshError, OSError, ValueError) as e:
        log.error("compare failed: %s", e)
        return STAGE_EXIT_CODES["compare"]
    print(json.dumps({name: d.summary() for name, d in diffs.items()}, indent=2, sort_keys=True))
    return 0


def run(argv=None) -> int:
    """Runs one command and returns its exit code."""
    args = build_parser().parse_args(argv)
    _configure_logging(args)
    try:
        config = _load(args)
    except ConfigError as e:
        log.error("Invalid configuration: %s", e)
        return EXIT_USAGE

    try:
        if args.command == "run-meta":
            if args.reuse is not None:
                report = evaluate_scenario(args.reuse, config)
            else:
                report = run_accelerated_pipeline(config)
            _summary(report)
        elif args.command == "run-colloc":
            _summary(run_collocation_baseline(config))
        elif args.command == "screen":
            _summary(run_screening(config))
        elif args.command == "mesh-info":
            try:
                mesh = build_mesh(config)
            except (MeshError, ValueError) as e:
                raise StageError("mesh", STAGE_EXIT_CODES["mesh"], e) from e
            print(json.dumps(mesh.describe(), indent=2))
        elif args.command == "compare":
            return _compare(args, config)
    except StageError as e:
        log.error("%s", e)
        return e.exit_code
    return 0


def main():
    sys.exit(run())
