"""Comparator estimators: Step 1 alone, and censored nonlinear least squares."""
import logging
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from ..domain.censoring import ArrayLike, NoiseModel, ThresholdSchedule, Thresholds
from ..domain.kernel import apply_schedule
from ..domain.projection import WeightedNorm, project, project_euclidean
from ..domain.states import EstimatorConfig, Snapshot, Step1State, Step2State
from .estimator import StreamItem, run_stream

logger = logging.getLogger(__name__)

NLS_STEP_RTOL = 1e-10
NLS_VALUE_RTOL = 1e-12
# relative ridge on J^T J, so the Gauss-Newton metric stays positive definite
NLS_DAMPING_RTOL = 1e-12
GN_DAMPING_FLOOR = 1e-300
ARMIJO_C = 1e-4
ARMIJO_SHRINK = 0.5
_MAX_BACKTRACKS = 60


def step1_only_baseline(
    cfg: EstimatorConfig,
    stream: Iterable[StreamItem],
    snapshot_at: Optional[Sequence[int]] = None,
    states: Optional[Tuple[Step1State, Step2State]] = None,
) -> List[Snapshot]:
    """run_stream with Step 2 switched off; the estimate is theta_bar of each snapshot."""
    return run_stream(cfg, stream, snapshot_at=snapshot_at, states=states, with_step2=False)


def conditional_mean(x: ArrayLike, th: Thresholds, noise: NoiseModel) -> ArrayLike:
    """E[y | latent mean x] = L F(l-x) + int_l^u t dF(t-x) + U (1 - F(u-x))."""
    x = np.asarray(x, dtype=float)
    a = th.l - x
    b = th.u - x
    out = x * noise.mass(a, b)
    if th.has_lower:
        out = out + th.L * noise.cdf(a) + noise.variance * noise.pdf(a)
    if th.has_upper:
        out = out + th.U * noise.sf(b) - noise.variance * noise.pdf(b)
    return out


def conditional_mean_dx(x: ArrayLike, th: Thresholds, noise: NoiseModel) -> ArrayLike:
    x = np.asarray(x, dtype=float)
    a = th.l - x
    b = th.u - x
    out = noise.mass(a, b)
    if th.has_lower:
        out = out + (th.l - th.L) * noise.pdf(a)
    if th.has_upper:
        out = out + (th.U - th.u) * noise.pdf(b)
    return out


@dataclass(frozen=True, eq=False)
class NLSResult:
    theta: np.ndarray  # (m,) or (m, p)
    iterations: int
    grad_norm: float  # projected gradient at the returned estimate
    converged: bool


class _NLSObjective:
    """Sum of squared residuals per output column, columns stacked as rows (p, m)."""

    def __init__(self, phis, ys, schedule, noise, start):
        self.phis = phis
        self.ys = ys
        self.schedule = schedule
        self.noise = noise
        self.start = start

    def _residuals(self, theta: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        xs = self.phis @ theta.T
        return xs, self.ys - apply_schedule(conditional_mean, xs, self.schedule, self.noise, self.start)

    def value(self, theta: np.ndarray) -> np.ndarray:
        _, resid = self._residuals(theta)
        return np.sum(resid * resid, axis=0)

    def value_and_grad(self, theta: np.ndarray):
        xs, resid = self._residuals(theta)
        slope = apply_schedule(conditional_mean_dx, xs, self.schedule, self.noise, self.start)
        grad = -2.0 * (resid * slope).T @ self.phis
        return np.sum(resid * resid, axis=0), grad

    def gauss_newton(self, theta: np.ndarray):
        """(value, gradient, J^T J, J^T r) with J_k = slope_k phi_k^T, per column."""
        xs, resid = self._residuals(theta)
        slope = apply_schedule(conditional_mean_dx, xs, self.schedule, self.noise, self.start)
        jtr = (resid * slope).T @ self.phis
        jtj = np.einsum("kp,ki,kj->pij", slope * slope, self.phis, self.phis)
        return np.sum(resid * resid, axis=0), -2.0 * jtr, jtj, jtr


def nls_objective(
    theta: np.ndarray, phis: np.ndarray, ys: np.ndarray, schedule: ThresholdSchedule, noise: NoiseModel, start: int = 0
) -> Tuple[np.ndarray, np.ndarray]:
    """(value, gradient) of sum_k (y_k - E_theta[y | phi_k])^2 for theta (m,) or (m, p)."""
    theta = np.asarray(theta, dtype=float)
    ys = np.asarray(ys, dtype=float)
    single = theta.ndim == 1
    objective = _NLSObjective(np.asarray(phis, dtype=float), ys.reshape(ys.shape[0], -1), schedule, noise, start)
    value, grad = objective.value_and_grad(np.atleast_2d(theta) if single else theta.T)
    if single:
        return value[0], grad[0]
    return value, grad.T


def _projected_gradient_norm(theta: np.ndarray, grad: np.ndarray, radius: float) -> float:
    return float(np.max(np.linalg.norm(theta - project_euclidean(theta - grad, radius), axis=1)))


def nls_baseline(
    phis: np.ndarray,
    ys: np.ndarray,
    schedule: ThresholdSchedule,
    noise: NoiseModel,
    init: np.ndarray,
    radius: float,
    max_iter: int = 200,
    tol: float = NLS_STEP_RTOL,
    start: int = 0,
) -> NLSResult:
    """Projected gradient descent with backtracking onto ||theta_j|| <= radius.

    The gradient is scaled by the Gauss-Newton matrix J^T J and the projection is
    taken in that metric, so one iteration solves the uncensored problem exactly.
    A column stops once its step is below tol (1 + ||theta_j||), or when no step
    along the direction lowers the objective beyond rounding. Columns of a
    multi-output problem are independent.
    """
    phis = np.asarray(phis, dtype=float)
    ys = np.asarray(ys, dtype=float)
    init = np.asarray(init, dtype=float)
    single = init.ndim == 1
    theta = project_euclidean(np.atleast_2d(init) if single else init.T, radius)
    objective = _NLSObjective(phis, ys.reshape(ys.shape[0], -1), schedule, noise, start)
    m = theta.shape[1]

    done = np.zeros(theta.shape[0], dtype=bool)
    iterations = 0
    for iterations in range(1, max_iter + 1):
        value, grad, jtj, jtr = objective.gauss_newton(theta)
        scale = np.max(np.abs(np.diagonal(jtj, axis1=-2, axis2=-1)), axis=-1)
        damping = np.maximum(NLS_DAMPING_RTOL * scale, GN_DAMPING_FLOOR)
        metric = jtj + damping[:, None, None] * np.eye(m)
        newton = theta + np.linalg.solve(metric, jtr[..., None])[..., 0]
        move = project(newton, WeightedNorm(metric, radius)) - theta
        small = np.linalg.norm(move, axis=1) <= tol * (1.0 + np.linalg.norm(theta, axis=1))
        done |= small
        if np.all(done):
            break
        slope = np.sum(grad * move, axis=1)
        t = np.where(done, 0.0, 1.0)
        accepted = done.copy()
        for _ in range(_MAX_BACKTRACKS):
            trial = theta + t[:, None] * move
            new_value = objective.value(trial)
            accepted = done | (new_value <= value + ARMIJO_C * t * slope + NLS_VALUE_RTOL * np.abs(value))
            if np.all(accepted):
                break
            t = np.where(accepted, t, t * ARMIJO_SHRINK)
        # no decrease left above rounding along a descent direction
        done |= ~accepted
        theta = np.where(accepted[:, None], theta + t[:, None] * move, theta)
    converged = bool(np.all(done))
    _, grad = objective.value_and_grad(theta)
    grad_norm = _projected_gradient_norm(theta, grad, radius)
    if not converged:
        logger.warning(
            "NLS baseline stopped after %d iterations with projected gradient norm %.3e", iterations, grad_norm
        )
    estimate = theta[0] if single else theta.T
    return NLSResult(theta=estimate, iterations=iterations, grad_norm=grad_norm, converged=converged)
