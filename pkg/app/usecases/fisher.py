"""Fisher information accumulation, Cramer-Rao summaries and normality diagnostics.

Everything here needs the true parameter, so it is meaningful in simulation only.
"""
import logging
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import stats

from ..domain.censoring import NoiseModel, ThresholdSchedule, Thresholds
from ..domain.kernel import apply_schedule, fisher_weight
from ..errors import ConfigError, MatrixConditioningError, ReplicationError
from .plan import ExperimentPlan, draw_true_theta, map_replications, replication_rng, resolve_threads

logger = logging.getLogger(__name__)

SINGULAR_RTOL = 1e-12
MIN_NORMALITY_REPLICATIONS = 100


@dataclass(frozen=True, eq=False)
class FisherAccumulator:
    """Running sum of lambda_k phi_k phi_k^T (optionally one per output column)."""

    lambda_sum: np.ndarray
    n: int = 0

    @classmethod
    def zeros(cls, m: int, batch_shape=()) -> "FisherAccumulator":
        return cls(np.zeros(tuple(batch_shape) + (m, m)), 0)

    def __add__(self, other: "FisherAccumulator") -> "FisherAccumulator":
        return FisherAccumulator(self.lambda_sum + other.lambda_sum, self.n + other.n)


def accumulate(
    acc: FisherAccumulator, phi: np.ndarray, x, th: Thresholds, noise: NoiseModel
) -> FisherAccumulator:
    phi = np.asarray(phi, dtype=float)
    lam = np.asarray(fisher_weight(x, th, noise))
    outer = np.outer(phi, phi)
    added = lam[..., None, None] * 0.5 * (outer + outer.T)
    return FisherAccumulator(acc.lambda_sum + added, acc.n + 1)


def schedule_weights(
    xs: np.ndarray, schedule: ThresholdSchedule, noise: NoiseModel, start: int = 0
) -> np.ndarray:
    """fisher_weight of xs[k] (leading axis = step) under the thresholds of step start + k."""
    return apply_schedule(fisher_weight, xs, schedule, noise, start)


def accumulate_block(
    acc: FisherAccumulator,
    phis: np.ndarray,
    theta: np.ndarray,
    schedule: ThresholdSchedule,
    noise: NoiseModel,
) -> FisherAccumulator:
    """Fold a block of regressors at once; theta is (m,) or (m, p) for p columns."""
    phis = np.asarray(phis, dtype=float)
    if phis.shape[0] == 0:
        return acc
    lam = schedule_weights(phis @ theta, schedule, noise, start=acc.n)
    if lam.ndim == 1:
        added = np.einsum("k,ka,kb->ab", lam, phis, phis)
    else:
        added = np.einsum("kj,ka,kb->jab", lam, phis, phis)
    added = 0.5 * (added + np.swapaxes(added, -1, -2))
    return FisherAccumulator(acc.lambda_sum + added, acc.n + phis.shape[0])


@dataclass(frozen=True, eq=False)
class FisherEstimate:
    delta: np.ndarray  # Monte Carlo mean of the final lambda sums
    stderr: np.ndarray  # entrywise standard error of that mean
    n: int
    replications: int


def summarize_lambda_sums(lambda_sums: np.ndarray, n: int) -> FisherEstimate:
    """Mean and entrywise standard error over the leading (replication) axis."""
    lambda_sums = np.asarray(lambda_sums, dtype=float)
    R = lambda_sums.shape[0]
    delta = lambda_sums.mean(axis=0)
    if R > 1:
        stderr = lambda_sums.std(axis=0, ddof=1) / np.sqrt(R)
    else:
        stderr = np.zeros_like(delta)
    return FisherEstimate(delta=0.5 * (delta + np.swapaxes(delta, -1, -2)), stderr=stderr, n=n, replications=R)


def monte_carlo_delta(
    plan: ExperimentPlan, replications: Optional[int] = None, threads: Optional[int] = 1
) -> FisherEstimate:
    """Average of the trajectory information sums over independent replications.

    Uses the same substreams as the experiment runner, so replication r sees the
    identical regressor sequence in both.
    """
    R = plan.replications if replications is None else replications
    if R < 1:
        raise ConfigError("monte_carlo_delta needs at least one replication")
    theta = draw_true_theta(plan)

    def one(r: int) -> np.ndarray:
        traj = plan.generator.generate(theta, plan.horizon, plan.schedule, plan.noise, replication_rng(plan.seed, r))
        acc = accumulate_block(FisherAccumulator.zeros(plan.m, (plan.p,)), traj.phis, theta, plan.schedule, plan.noise)
        return acc.lambda_sum

    results = map_replications(one, R, resolve_threads(threads, R))
    for r, _, exc in results:
        if exc is not None:
            raise ReplicationError(r, exc) from exc
    return summarize_lambda_sums(np.stack([value for _, value, _ in results]), plan.horizon)


def _eigh_checked(delta: np.ndarray):
    delta = np.asarray(delta, dtype=float)
    w, Q = np.linalg.eigh(0.5 * (delta + np.swapaxes(delta, -1, -2)))
    top = np.max(np.abs(w), axis=-1, keepdims=True)
    if not np.all(np.isfinite(w)) or np.any(w <= SINGULAR_RTOL * np.maximum(top, 1e-300)):
        raise MatrixConditioningError(
            f"information matrix is numerically singular (eigenvalues down to {np.min(w):.3e}); "
            "the signal is not exciting enough at this horizon"
        )
    return w, Q


def crb_trace(delta: np.ndarray):
    """tr(delta^{-1}); a batch of matrices gives one trace each."""
    w, _ = _eigh_checked(delta)
    out = np.sum(1.0 / w, axis=-1)
    return out[()] if np.ndim(out) == 0 else out


def sym_sqrt(delta: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition."""
    delta = np.asarray(delta, dtype=float)
    w, Q = np.linalg.eigh(0.5 * (delta + np.swapaxes(delta, -1, -2)))
    root = np.sqrt(np.clip(w, 0.0, None))
    return np.einsum("...ij,...j,...kj->...ik", Q, root, Q)


def sym_inv_sqrt(delta: np.ndarray) -> np.ndarray:
    w, Q = _eigh_checked(delta)
    return np.einsum("...ij,...j,...kj->...ik", Q, 1.0 / np.sqrt(w), Q)


def r1_ratio(delta: np.ndarray, lambda_sum: np.ndarray):
    """Spectral norm of Delta^{1/2} Lambda^{1/2} - I, Lambda being the inverse information sum."""
    product = sym_sqrt(delta) @ sym_inv_sqrt(lambda_sum)
    eye = np.eye(product.shape[-1])
    out = np.linalg.norm(product - eye, ord=2, axis=(-2, -1))
    return out[()] if np.ndim(out) == 0 else out


@dataclass(frozen=True, eq=False)
class NormalityReport:
    mean: np.ndarray
    cov: np.ndarray
    max_offdiag: float
    diag_min: float
    diag_max: float
    ks_statistic: np.ndarray
    ks_pvalue: np.ndarray
    samples: int

    def mean_within(self, width: float = 4.0) -> bool:
        return bool(np.all(np.abs(self.mean) <= width / np.sqrt(self.samples)))

    def as_entries(self, prefix: str = "normality") -> dict:
        entries = {
            f"{prefix}.samples": self.samples,
            f"{prefix}.max_offdiag": self.max_offdiag,
            f"{prefix}.diag_min": self.diag_min,
            f"{prefix}.diag_max": self.diag_max,
            f"{prefix}.max_abs_mean": float(np.max(np.abs(self.mean))),
        }
        for i, (ks, pv) in enumerate(zip(self.ks_statistic, self.ks_pvalue)):
            entries[f"{prefix}.ks_stat.{i}"] = float(ks)
            entries[f"{prefix}.ks_pvalue.{i}"] = float(pv)
        return entries


def standardized_errors(errors: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """z_r = delta^{1/2} theta_tilde_r, flattened over replications (and columns).

    errors is (R, m) with delta (m, m), or (R, p, m) with one delta per column.
    """
    errors = np.asarray(errors, dtype=float)
    root = sym_sqrt(delta)
    z = np.einsum("...ij,r...j->r...i", root, errors)
    return z.reshape(-1, errors.shape[-1])


def normality_diagnostic(errors: np.ndarray, delta: np.ndarray) -> NormalityReport:
    z = standardized_errors(errors, delta)
    samples, m = z.shape
    if samples < 2:
        raise ConfigError("normality diagnostic needs at least two samples")
    if samples < MIN_NORMALITY_REPLICATIONS:
        warnings.warn(
            f"normality diagnostic over {samples} samples is unreliable "
            f"(at least {MIN_NORMALITY_REPLICATIONS} expected)",
            RuntimeWarning,
            stacklevel=2,
        )
    cov = np.atleast_2d(np.cov(z, rowvar=False))
    off = cov - np.diag(np.diag(cov))
    ks = [stats.kstest(z[:, i], "norm") for i in range(m)]
    return NormalityReport(
        mean=z.mean(axis=0),
        cov=cov,
        max_offdiag=float(np.max(np.abs(off))) if m > 1 else 0.0,
        diag_min=float(np.min(np.diag(cov))),
        diag_max=float(np.max(np.diag(cov))),
        ks_statistic=np.array([r.statistic for r in ks]),
        ks_pvalue=np.array([r.pvalue for r in ks]),
        samples=samples,
    )
