"""Monte Carlo replication runner and curve reduction."""
import logging
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..domain.kernel import observe
from ..domain.states import Snapshot, Step1State, Step2State
from ..errors import (
    ConfigError,
    ExperimentFailedError,
    MatrixConditioningError,
    ReplicationError,
    StepError,
)
from ..ports.sink_port import ResultSinkPort
from .baselines import nls_baseline
from .estimator import TwoStepEstimator, run_stream
from .fisher import (
    FisherAccumulator,
    accumulate_block,
    crb_trace,
    normality_diagnostic,
    r1_ratio,
)
from .plan import (
    BASELINE_NLS,
    BASELINE_STEP1,
    ExperimentPlan,
    draw_true_theta,
    map_replications,
    replication_rng,
    resolve_threads,
    snapshot_grid,
)

logger = logging.getLogger(__name__)

MAX_FAILURE_FRACTION = 0.01
CHUNK_PER_THREAD = 4

EST_ALG1 = "alg1"
EST_STEP1 = "step1"
EST_NLS = "nls"

CURVES_FILE = "curves.csv"
REPORT_FILE = "report.txt"
DELTA_FILE = "delta.csv"
SNAPSHOTS_FILE = "snapshots.bin"


def estimator_names(plan: ExperimentPlan) -> Tuple[str, ...]:
    names = [EST_ALG1]
    if BASELINE_STEP1 in plan.baselines:
        names.append(EST_STEP1)
    if BASELINE_NLS in plan.baselines:
        names.append(EST_NLS)
    return tuple(names)


@dataclass(frozen=True, eq=False)
class ReplicationResult:
    """One trajectory: squared errors (summed over output columns) at every grid point."""

    grid: np.ndarray
    errors: Dict[str, np.ndarray]  # estimator -> (G,)
    lambda_sums: np.ndarray  # (G, p, m, m)
    final_errors: Dict[str, np.ndarray]  # estimator -> (p, m) signed error at the horizon
    nls_unconverged: int = 0
    degraded_gain: bool = False
    snapshots: Tuple[Snapshot, ...] = ()  # estimator state at every grid point, when kept


def _squared_error(theta_true: np.ndarray, estimate: np.ndarray) -> float:
    # estimate is stored (p, m), the truth (m, p)
    diff = theta_true.T - estimate
    return float(np.sum(diff * diff))


def run_replication(
    plan: ExperimentPlan,
    rep_index: int,
    theta: Optional[np.ndarray] = None,
    grid: Optional[np.ndarray] = None,
    keep_snapshots: bool = False,
) -> ReplicationResult:
    """One trajectory of the two-step estimator (and the enabled baselines) on all output columns."""
    theta = draw_true_theta(plan) if theta is None else theta
    grid = snapshot_grid(plan.horizon, plan.points_per_decade) if grid is None else grid
    names = estimator_names(plan)
    started = time.perf_counter()
    traj = plan.generator.generate(
        theta, plan.horizon, plan.schedule, plan.noise, replication_rng(plan.seed, rep_index)
    )
    est = TwoStepEstimator(plan.estimator, batch_shape=(plan.p,))
    acc = FisherAccumulator.zeros(plan.m, (plan.p,))
    errors = {name: np.empty(len(grid)) for name in names}
    lambda_sums = np.empty((len(grid), plan.p, plan.m, plan.m))
    nls_theta = np.tile(plan.estimator.theta0[:, None], (1, plan.p))
    nls_unconverged = 0
    finals: Dict[str, np.ndarray] = {}
    snapshots: List[Snapshot] = []

    try:
        for g, k_target in enumerate(grid):
            while est.k < k_target:
                k = est.k
                th = plan.schedule.at(k)
                est.update(traj.phis[k], observe(traj.ys[k], th), th)
            acc = accumulate_block(acc, traj.phis[acc.n : k_target], theta, plan.schedule, plan.noise)
            lambda_sums[g] = acc.lambda_sum
            if keep_snapshots:
                snapshots.append(est.snapshot())
            estimates = {EST_ALG1: est.s2.theta_hat, EST_STEP1: est.s1.theta_bar}
            if EST_NLS in names:
                fit = nls_baseline(
                    traj.phis[:k_target],
                    traj.ys[:k_target],
                    plan.schedule,
                    plan.noise,
                    nls_theta,
                    plan.estimator.radius,
                    max_iter=plan.nls_max_iter,
                )
                nls_theta = fit.theta
                nls_unconverged += int(not fit.converged)
                estimates[EST_NLS] = fit.theta.T
            for name in names:
                errors[name][g] = _squared_error(theta, estimates[name])
            if k_target == plan.horizon:
                finals = {name: estimates[name] - theta.T for name in names}
    except StepError as exc:
        raise ReplicationError(rep_index, exc) from exc
    logger.debug("replication %d done in %.3fs", rep_index, time.perf_counter() - started)
    return ReplicationResult(
        grid=grid,
        errors=errors,
        lambda_sums=lambda_sums,
        final_errors=finals,
        nls_unconverged=nls_unconverged,
        degraded_gain=est.degraded_steps > 0,
        snapshots=tuple(snapshots),
    )



def resume_replication(
    plan: ExperimentPlan, start: Snapshot, rep_index: int = 0, until: Optional[int] = None
) -> Snapshot:
    """Continue replication rep_index of plan from a stored snapshot to update count until.

    The trajectory is regenerated from the plan seed, so the result matches the
    uninterrupted run.
    """
    until = plan.horizon if until is None else until
    if not start.k <= until <= plan.horizon:
        raise ConfigError(f"cannot resume from k={start.k} to k={until} with horizon {plan.horizon}")
    m, p = plan.m, plan.p
    states = (
        Step1State(start.theta_bar.reshape(p, m), start.P_bar.reshape(p, m, m)),
        Step2State(start.theta_hat.reshape(p, m), start.P.reshape(p, m, m)),
    )
    theta = draw_true_theta(plan)
    traj = plan.generator.generate(
        theta, plan.horizon, plan.schedule, plan.noise, replication_rng(plan.seed, rep_index)
    )
    items = (
        (traj.phis[k], observe(traj.ys[k], plan.schedule.at(k)), plan.schedule.at(k))
        for k in range(start.k, until)
    )
    return run_stream(plan.estimator, items, snapshot_at=[until], states=states, start_k=start.k)[-1]

@dataclass(frozen=True, eq=False)
class CurveBundle:
    columns: Tuple[str, ...]
    rows: np.ndarray  # one row per grid point
    delta: np.ndarray  # (p, m, m) Monte Carlo information at the horizon
    report: Dict[str, Any] = field(default_factory=dict)
    snapshots: Tuple[Snapshot, ...] = ()  # replication 0, when requested

    def column(self, name: str) -> np.ndarray:
        return self.rows[:, self.columns.index(name)]

    @property
    def k(self) -> np.ndarray:
        return self.column("k").astype(int)


def curve_columns(names: Sequence[str]) -> Tuple[str, ...]:
    columns = ["k", "err_alg1", "mse_alg1", "crb"]
    for name in names:
        if name != EST_ALG1:
            columns += [f"err_{name}", f"mse_{name}"]
    return tuple(columns)


def _crb_curve(grid: np.ndarray, deltas: np.ndarray) -> np.ndarray:
    crb = np.empty(len(grid))
    for g, k in enumerate(grid):
        try:
            crb[g] = k * float(np.sum(crb_trace(deltas[g])))
        except MatrixConditioningError:
            crb[g] = np.nan
    return crb


def _diagnostics(
    plan: ExperimentPlan,
    names: Sequence[str],
    bundle_rows: np.ndarray,
    columns: Tuple[str, ...],
    delta: np.ndarray,
    finals: Dict[str, List[np.ndarray]],
    final_lambdas: List[np.ndarray],
) -> Dict[str, Any]:
    report: Dict[str, Any] = {}
    last = bundle_rows[-1]
    crb = last[columns.index("crb")]
    report["horizon"] = plan.horizon
    report["crb"] = crb
    for name in names:
        mse = last[columns.index(f"mse_{name}")]
        report[f"mse.{name}"] = mse
        report[f"efficiency.{name}"] = mse / crb if np.isfinite(crb) and crb > 0 else float("nan")
    errors = np.stack(finals[EST_ALG1]) if finals.get(EST_ALG1) else np.empty((0, plan.p, plan.m))
    try:
        if errors.shape[0] >= 2:
            report.update(normality_diagnostic(errors, delta).as_entries())
        ratios = [r1_ratio(delta, lam) for lam in final_lambdas]
        if ratios:
            report["r1_ratio.mean"] = float(np.mean(ratios))
    except MatrixConditioningError as exc:
        logger.warning("skipping normality diagnostics: %s", exc)
        report["normality.skipped"] = str(exc)
    return report


def run_experiment(
    plan: ExperimentPlan,
    threads: Optional[int] = 1,
    sink: Optional[ResultSinkPort] = None,
    snapshots: bool = False,
) -> CurveBundle:
    """Run every replication, reduce to curves in replication order, optionally write them.

    Failing replications are excluded; more than 1% failing fails the experiment.
    With snapshots, the estimator state of replication 0 at every grid point is kept
    so the run can be resumed from any of them.
    """
    theta = draw_true_theta(plan)
    grid = snapshot_grid(plan.horizon, plan.points_per_decade)
    names = estimator_names(plan)
    workers = resolve_threads(threads, plan.replications)
    chunk = max(workers * CHUNK_PER_THREAD, 1)
    logger.info(
        "experiment: m=%d p=%d n=%d R=%d seed=%d threads=%d",
        plan.m, plan.p, plan.horizon, plan.replications, plan.seed, workers,
    )

    lambda_total = np.zeros((len(grid), plan.p, plan.m, plan.m))
    errors: Dict[str, List[np.ndarray]] = {name: [] for name in names}
    finals: Dict[str, List[np.ndarray]] = {name: [] for name in names}
    final_lambdas: List[np.ndarray] = []
    failures: List[ReplicationError] = []
    nls_unconverged = 0
    degraded = 0
    kept: Tuple[Snapshot, ...] = ()

    for first in range(0, plan.replications, chunk):
        indices = range(first, min(first + chunk, plan.replications))
        for r, result, exc in map_replications(
            lambda idx: run_replication(plan, idx, theta, grid, keep_snapshots=snapshots and idx == 0),
            indices,
            workers,
        ):
            if exc is not None:
                failure = exc if isinstance(exc, ReplicationError) else ReplicationError(r, exc)
                logger.warning("excluding %s", failure)
                failures.append(failure)
                continue
            lambda_total += result.lambda_sums
            final_lambdas.append(result.lambda_sums[-1])
            for name in names:
                errors[name].append(result.errors[name])
                finals[name].append(result.final_errors[name])
            nls_unconverged += result.nls_unconverged
            degraded += int(result.degraded_gain)
            if result.snapshots:
                kept = result.snapshots

    succeeded = plan.replications - len(failures)
    if len(failures) > MAX_FAILURE_FRACTION * plan.replications or succeeded == 0:
        raise ExperimentFailedError(
            f"{len(failures)} of {plan.replications} replications failed; first: {failures[0]}"
        )
    if degraded:
        logger.warning("Step-1 gain underflowed in %d replications", degraded)

    deltas = lambda_total / succeeded
    deltas = 0.5 * (deltas + np.swapaxes(deltas, -1, -2))
    columns = curve_columns(names)
    rows = np.empty((len(grid), len(columns)))
    rows[:, 0] = grid
    rows[:, columns.index("crb")] = _crb_curve(grid, deltas)
    for name in names:
        sq = np.stack(errors[name])
        rows[:, columns.index(f"err_{name}")] = np.median(sq, axis=0)
        rows[:, columns.index(f"mse_{name}")] = grid * np.mean(sq, axis=0)

    report = _diagnostics(plan, names, rows, columns, deltas[-1], finals, final_lambdas)
    report.update(
        {
            "replications": plan.replications,
            "replications.failed": len(failures),
            "replications.degraded_gain": degraded,
            "nls.unconverged_fits": nls_unconverged,
        }
    )
    bundle = CurveBundle(columns=columns, rows=rows, delta=deltas[-1], report=report, snapshots=kept)
    if sink is not None:
        write_bundle(bundle, sink)
    logger.info("experiment finished: %d of %d replications used", succeeded, plan.replications)
    return bundle


def write_bundle(bundle: CurveBundle, sink: ResultSinkPort) -> None:
    sink.write_table(CURVES_FILE, bundle.columns, bundle.rows)
    sink.write_report(REPORT_FILE, bundle.report)
    for j, delta in enumerate(bundle.delta):
        sink.write_matrix(f"delta_col{j}.csv" if len(bundle.delta) > 1 else DELTA_FILE, delta)
    if bundle.snapshots:
        sink.write_snapshots(SNAPSHOTS_FILE, bundle.snapshots)
