import argparse
import logging
import os
import sys
from typing import List, Optional, Sequence

import numpy as np

from ... import config
from ...bootstrap import build_plan, resolved_config
from ...errors import CATEGORY_CONFIG, CATEGORY_IO, CATEGORY_NUMERIC, ConfigError, EstimationError
from ...usecases.bench import BENCH_DIMENSIONS, run_bench
from ...usecases.checks import run_checks
from ...usecases.experiment import run_experiment
from ...usecases.fisher import crb_trace, monte_carlo_delta
from ..storage.experiment_dir import ExperimentDirectory, experiment_dir_name

logger = logging.getLogger(__name__)

# Exit codes
EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_IO = 4

_EXIT_CODES = {CATEGORY_CONFIG: EXIT_CONFIG, CATEGORY_NUMERIC: EXIT_NUMERIC, CATEGORY_IO: EXIT_IO}

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

FISHER_REPORT_FILE = "fisher.txt"
BENCH_FLOOR_DIMENSION = 10


def configure_logging(verbosity: int = 0, level_name: str = config.LOG_LEVEL) -> None:
    level = getattr(logging, level_name, logging.WARNING)
    if verbosity == 1:
        level = min(level, logging.INFO)
    elif verbosity >= 2:
        level = logging.DEBUG
    logging.basicConfig(level=level, format=LOG_FORMAT, force=True)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--verbose", "-v", action="count", default=0, help="-v for INFO, -vv for DEBUG")

    experiment = argparse.ArgumentParser(add_help=False)
    experiment.add_argument("--config", required=True, help="experiment YAML file")
    experiment.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
        help="override a config value (repeatable; values are YAML)",
    )
    experiment.add_argument("--out", default=config.RESULTS_DIR, help="parent directory for results")
    experiment.add_argument("--seed", type=int, default=None, help="master seed (overrides experiment.seed)")
    experiment.add_argument("--threads", default=config.THREADS, help="worker threads or 'auto'")

    parser = argparse.ArgumentParser(
        prog="censored-estimator",
        description="Online two-step estimation for censored regression: experiments and diagnostics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", parents=[common, experiment], help="run a Monte Carlo experiment and write curves")
    run.add_argument(
        "--snapshots", action="store_true",
        help="also write the replication-0 estimator state at every grid point (snapshots.bin)",
    )
    sub.add_parser("fisher", parents=[common, experiment], help="Monte Carlo information matrix and C-R bound")
    sub.add_parser("check", parents=[common], help="run the invariant suite")
    bench = sub.add_parser("bench", parents=[common], help="per-step update throughput")
    bench.add_argument("--steps", type=int, default=config.BENCH_STEPS, help="timed batched steps per dimension")
    bench.add_argument("--floor", type=float, default=config.BENCH_FLOOR, help="minimum updates/s at m=10 (0 = report only)")
    return parser


def _load(args):
    overrides: List[str] = list(args.overrides)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError(f"--seed must be non-negative, got {args.seed}")
        overrides.append(f"experiment.seed={args.seed}")
    cfg = config.load_experiment_config(args.config, overrides)
    plan = build_plan(cfg)
    resolved = resolved_config(cfg, plan)
    out_dir = os.path.join(args.out, experiment_dir_name(config.config_hash(resolved), plan.seed))
    sink = ExperimentDirectory(out_dir)
    sink.write_config(resolved)
    return plan, sink


def cmd_run(args) -> int:
    plan, sink = _load(args)
    bundle = run_experiment(
        plan, threads=config.parse_threads(args.threads), sink=sink, snapshots=args.snapshots
    )
    print(sink.path)
    logger.info("efficiency at n=%d: %s", plan.horizon, bundle.report.get("efficiency.alg1"))
    return EXIT_OK


def cmd_fisher(args) -> int:
    plan, sink = _load(args)
    estimate = monte_carlo_delta(plan, threads=config.parse_threads(args.threads))
    report = {"horizon": estimate.n, "replications": estimate.replications}
    total = 0.0
    for j, (delta, stderr) in enumerate(zip(estimate.delta, estimate.stderr)):
        sink.write_matrix(f"delta_col{j}.csv", delta)
        sink.write_matrix(f"delta_stderr_col{j}.csv", stderr)
        try:
            bound = estimate.n * float(crb_trace(delta))
        except EstimationError as exc:
            logger.warning("column %d: %s", j, exc)
            bound = float("nan")
        report[f"crb.col{j}"] = bound
        total += bound
        report[f"stderr.max_rel.col{j}"] = float(np.max(stderr) / max(np.max(np.abs(delta)), 1e-300))
    report["crb.total"] = total
    sink.write_report(FISHER_REPORT_FILE, report)
    print(sink.path)
    return EXIT_OK


def cmd_check(args) -> int:
    report = run_checks()
    for line in report.summary_lines():
        print(line)
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def cmd_bench(args) -> int:
    results = run_bench(args.steps, BENCH_DIMENSIONS)
    status = EXIT_OK
    for result in results:
        print(
            f"m={result.m}\tsteps={result.steps}\tcolumns={result.columns}\t"
            f"{result.updates_per_second:.0f} updates/s"
        )
        if args.floor > 0 and result.m == BENCH_FLOOR_DIMENSION and result.updates_per_second < args.floor:
            print(f"below the floor of {args.floor:.0f} updates/s at m={result.m}", file=sys.stderr)
            status = EXIT_CHECK_FAILED
    return status


_COMMANDS = {"run": cmd_run, "fisher": cmd_fisher, "check": cmd_check, "bench": cmd_bench}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose)
    try:
        return _COMMANDS[args.command](args)
    except EstimationError as exc:
        print(f"error [{exc.category}]: {exc}", file=sys.stderr)
        return _EXIT_CODES.get(exc.category, EXIT_NUMERIC)
