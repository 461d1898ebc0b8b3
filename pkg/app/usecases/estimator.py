"""Two-step online estimator for censored regression.

Step 1 runs a projected quasi-Newton recursion whose scalar gain uses only the
worst-case slope bounds of G over the parameter ball; it is consistent but
conservative. Step 2 reuses the current preliminary estimate to build adaptive
gains from the slope of G between the two estimates, which makes its covariance
approach the inverse Fisher information.
"""
import logging
import warnings
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np

from ..domain.censoring import CensoredObservation, Thresholds
from ..domain.kernel import regression_g, regression_g_dx, score_h, slope_bounds
from ..domain.projection import project_with_gain
from ..domain.states import EstimatorConfig, Snapshot, Step1State, Step2State, initial_states
from ..errors import DegradedGainWarning, EstimationError, StepError

logger = logging.getLogger(__name__)

GAIN_UNDERFLOW = 1e-300
# below this gap the difference quotient has no significant digits left
QUOTIENT_GAP_RTOL = 1e-9

StreamItem = Tuple[np.ndarray, CensoredObservation, Thresholds]


@dataclass(frozen=True, eq=False)
class Step1Gains:
    g_lo: np.ndarray
    g_hi: np.ndarray
    beta_bar: np.ndarray
    a_bar: np.ndarray
    quad: np.ndarray  # phi^T P_bar phi


@dataclass(frozen=True, eq=False)
class Step2Gains:
    mu_hat: np.ndarray
    beta: np.ndarray
    a: np.ndarray  # 0 on zero-information steps
    innovation: np.ndarray
    quad: np.ndarray  # phi^T P phi
    info_weight: np.ndarray  # w in P^{-1} <- P^{-1} + w phi phi^T


def _gain_apply(P: np.ndarray, phi: np.ndarray) -> np.ndarray:
    return np.einsum("...ij,j->...i", P, phi)


def information_update(P: np.ndarray, phi: np.ndarray, weight: np.ndarray) -> np.ndarray:
    """The gain whose inverse is P^{-1} + weight phi phi^T, in Joseph form.

    With c = w / (1 + w q) and K = c P phi,

        P+ = (I - K phi^T) P (I - K phi^T)^T + c / (1 + w q) P phi phi^T P,

    a sum of two positive semidefinite terms for every finite w >= 0.
    """
    weight = np.asarray(weight, dtype=float)
    Pphi = _gain_apply(P, phi)
    quad = Pphi @ phi
    denom = 1.0 + weight * quad
    coef = weight / denom
    outer = Pphi[..., :, None] * Pphi[..., None, :]
    A = np.eye(phi.shape[-1]) - coef[..., None, None] * Pphi[..., :, None] * phi
    P_new = A @ P @ np.swapaxes(A, -1, -2) + (coef / denom)[..., None, None] * outer
    return 0.5 * (P_new + np.swapaxes(P_new, -1, -2))


def compute_step1_gains(
    s: Step1State, phi: np.ndarray, th: Thresholds, cfg: EstimatorConfig
) -> Step1Gains:
    Pphi = _gain_apply(s.P_bar, phi)
    quad = Pphi @ phi
    g_lo, g_hi = slope_bounds(s.theta_bar @ phi, cfg.xmax, th, cfg.noise, cfg.y_range)
    g_lo = np.asarray(g_lo)
    beta_bar = np.minimum(g_lo, 1.0 / (2.0 * np.asarray(g_hi) * quad + 1.0))
    if np.any(beta_bar < GAIN_UNDERFLOW) and np.any(phi != 0):
        warnings.warn(
            f"Step-1 gain underflowed (min slope bound {np.min(g_lo):.3e} over "
            f"|x| <= {cfg.xmax:.4g}); the preliminary estimate will not move",
            DegradedGainWarning,
            stacklevel=3,
        )
    a_bar = 1.0 / (1.0 + beta_bar**2 * quad)
    return Step1Gains(g_lo=g_lo, g_hi=np.asarray(g_hi), beta_bar=beta_bar, a_bar=a_bar, quad=quad)


def step1_update_with_gains(
    s: Step1State, phi: np.ndarray, obs: CensoredObservation, th: Thresholds, cfg: EstimatorConfig
) -> Tuple[Step1State, Step1Gains]:
    phi = np.asarray(phi, dtype=float)
    gains = compute_step1_gains(s, phi, th, cfg)
    Pphi = _gain_apply(s.P_bar, phi)
    P_new = information_update(s.P_bar, phi, gains.beta_bar**2)
    h = score_h(obs, s.theta_bar @ phi, th, cfg.noise)
    candidate = s.theta_bar + (gains.a_bar * gains.beta_bar * h)[..., None] * Pphi
    return Step1State(project_with_gain(candidate, P_new, cfg.radius), P_new), gains


def step1_update(
    s: Step1State, phi: np.ndarray, obs: CensoredObservation, th: Thresholds, cfg: EstimatorConfig
) -> Step1State:
    return step1_update_with_gains(s, phi, obs, th, cfg)[0]


def compute_step2_gains(
    s: Step2State,
    theta_bar: np.ndarray,
    phi: np.ndarray,
    obs: CensoredObservation,
    th: Thresholds,
    cfg: EstimatorConfig,
) -> Step2Gains:
    noise = cfg.noise
    y_bar = np.asarray(theta_bar @ phi)
    x_hat = np.asarray(s.theta_hat @ phi)
    mu_hat = np.asarray(regression_g_dx(y_bar, x_hat, th, noise))
    g_cross = np.asarray(regression_g(y_bar, x_hat, th, noise))
    g_same = np.asarray(regression_g(y_bar, y_bar, th, noise))
    gap = y_bar - x_hat
    use_quotient = np.abs(gap) >= QUOTIENT_GAP_RTOL * (1.0 + np.abs(y_bar))
    quotient = (g_same - g_cross) / np.where(use_quotient, gap, 1.0)
    beta = np.where(use_quotient, quotient, mu_hat)
    quad = _gain_apply(s.P, phi) @ phi
    # one observation never carries more information than an uncensored one, 1/sigma^2
    mu_eff = np.maximum(mu_hat, beta**2 * noise.variance)
    denom = mu_eff + beta**2 * quad
    informative = denom > 0
    a = np.where(informative, 1.0 / np.where(informative, denom, 1.0), 0.0)
    info_weight = np.where(mu_eff > 0, beta**2 / np.where(mu_eff > 0, mu_eff, 1.0), 0.0)
    innovation = np.asarray(score_h(obs, y_bar, th, noise)) - g_cross
    return Step2Gains(
        mu_hat=mu_hat, beta=beta, a=a, innovation=innovation, quad=quad, info_weight=info_weight
    )


def step2_update(
    s: Step2State,
    theta_bar: np.ndarray,
    phi: np.ndarray,
    obs: CensoredObservation,
    th: Thresholds,
    cfg: EstimatorConfig,
) -> Step2State:
    """Accelerated update; theta_bar must be the Step-1 estimate before its own update."""
    phi = np.asarray(phi, dtype=float)
    gains = compute_step2_gains(s, theta_bar, phi, obs, th, cfg)
    Pphi = _gain_apply(s.P, phi)
    P_new = information_update(s.P, phi, gains.info_weight)
    candidate = s.theta_hat + (gains.a * gains.beta * gains.innovation)[..., None] * Pphi
    return Step2State(project_with_gain(candidate, P_new, cfg.radius), P_new)


def two_step_update(
    s1: Step1State,
    s2: Step2State,
    phi: np.ndarray,
    obs: CensoredObservation,
    th: Thresholds,
    cfg: EstimatorConfig,
) -> Tuple[Step1State, Step2State]:
    new_s2 = step2_update(s2, s1.theta_bar, phi, obs, th, cfg)
    new_s1 = step1_update(s1, phi, obs, th, cfg)
    return new_s1, new_s2


class TwoStepEstimator:
    """Stateful wrapper folding two_step_update over a stream, one step at a time."""

    def __init__(
        self,
        cfg: EstimatorConfig,
        batch_shape: Tuple[int, ...] = (),
        states: Optional[Tuple[Step1State, Step2State]] = None,
        start_k: int = 0,
        with_step2: bool = True,
    ):
        self.cfg = cfg
        self.with_step2 = with_step2
        self.s1, self.s2 = states if states is not None else initial_states(cfg, batch_shape)
        self.k = start_k
        self.degraded_steps = 0

    def update(self, phi: np.ndarray, obs: CensoredObservation, th: Thresholds) -> None:
        """One two-step update; on failure the estimator keeps its previous state."""
        try:
            s2 = self.s2
            if self.with_step2:
                s2 = step2_update(self.s2, self.s1.theta_bar, phi, obs, th, self.cfg)
            s1, gains = step1_update_with_gains(self.s1, phi, obs, th, self.cfg)
        except (EstimationError, np.linalg.LinAlgError, FloatingPointError) as exc:
            raise StepError(self.k, exc) from exc
        self.s1, self.s2 = s1, s2
        if np.any(gains.beta_bar < GAIN_UNDERFLOW) and np.any(np.asarray(phi) != 0):
            self.degraded_steps += 1
        self.k += 1

    def snapshot(self) -> Snapshot:
        return Snapshot(
            k=self.k,
            theta_bar=self.s1.theta_bar.copy(),
            theta_hat=self.s2.theta_hat.copy(),
            P=self.s2.P.copy(),
            P_bar=self.s1.P_bar.copy(),
        )


def run_stream(
    init: EstimatorConfig,
    stream: Iterable[StreamItem],
    snapshot_at: Optional[Sequence[int]] = None,
    states: Optional[Tuple[Step1State, Step2State]] = None,
    start_k: int = 0,
    with_step2: bool = True,
) -> List[Snapshot]:
    """Fold the estimator over a finite stream.

    Snapshots are taken at the requested update counts k (every k when None); the
    state before any update is k = start_k. Failures carry the offending step index.
    """
    est = TwoStepEstimator(init, states=states, start_k=start_k, with_step2=with_step2)
    wanted: Optional[Set[int]] = None if snapshot_at is None else set(snapshot_at)
    trajectory = []
    if wanted is None or est.k in wanted:
        trajectory.append(est.snapshot())
    for phi, obs, th in stream:
        est.update(phi, obs, th)
        if wanted is None or est.k in wanted:
            trajectory.append(est.snapshot())
    logger.debug("stream folded over %d steps", est.k - start_k)
    return trajectory
