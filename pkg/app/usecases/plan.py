"""Experiment plan, seeding discipline and the replication map shared by the runners."""
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple, TypeVar, Union

import numpy as np

from ..domain.censoring import NoiseModel, ThresholdSchedule
from ..domain.states import EstimatorConfig
from ..errors import ConfigError
from ..ports.signal_port import SignalGeneratorPort

logger = logging.getLogger(__name__)

BASELINE_STEP1 = "step1-only"
BASELINE_NLS = "nls"
KNOWN_BASELINES = (BASELINE_STEP1, BASELINE_NLS)

DEFAULT_POINTS_PER_DECADE = 50
DEFAULT_NLS_MAX_ITER = 200

# spawn keys of the independent random streams derived from the master seed
STREAM_TRUTH = 0
STREAM_REPLICATION = 1

T = TypeVar("T")


@dataclass(frozen=True, eq=False)
class ExperimentPlan:
    m: int
    p: int
    horizon: int
    replications: int
    seed: int
    schedule: ThresholdSchedule
    noise: NoiseModel
    generator: SignalGeneratorPort
    estimator: EstimatorConfig
    theta: Optional[np.ndarray] = None  # (m, p) true parameter, drawn when None
    entry_range: float = 1.0
    baselines: Tuple[str, ...] = ()
    points_per_decade: int = DEFAULT_POINTS_PER_DECADE
    nls_max_iter: int = DEFAULT_NLS_MAX_ITER

    def __post_init__(self):
        if self.m < 1 or self.p < 1:
            raise ConfigError(f"dimensions must be positive, got m={self.m}, p={self.p}")
        if self.horizon < 1 or self.replications < 1:
            raise ConfigError("horizon and replications must be at least 1")
        if self.estimator.m != self.m:
            raise ConfigError(f"estimator dimension {self.estimator.m} != m={self.m}")
        unknown = set(self.baselines) - set(KNOWN_BASELINES)
        if unknown:
            raise ConfigError(f"unknown baselines {sorted(unknown)}; known: {list(KNOWN_BASELINES)}")
        if self.theta is not None:
            theta = np.asarray(self.theta, dtype=float)
            if theta.shape != (self.m, self.p):
                raise ConfigError(f"true theta must have shape ({self.m}, {self.p}), got {theta.shape}")
            if np.any(np.linalg.norm(theta, axis=0) > self.estimator.D * (1 + 1e-12)):
                raise ConfigError(f"every true parameter column must satisfy ||theta_j|| <= D={self.estimator.D}")
            object.__setattr__(self, "theta", theta)
        if self.points_per_decade < 1 or self.nls_max_iter < 1:
            raise ConfigError("points_per_decade and nls_max_iter must be at least 1")


def stream_rng(seed: int, *key: int) -> np.random.Generator:
    """Counter-based substream: the same (seed, key) always yields the same draws."""
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


def replication_rng(seed: int, rep_index: int) -> np.random.Generator:
    return stream_rng(seed, STREAM_REPLICATION, rep_index)


def draw_true_theta(plan: ExperimentPlan) -> np.ndarray:
    """Entries uniform on [-entry_range, entry_range]; columns shrunk onto ||theta_j|| <= D."""
    if plan.theta is not None:
        return plan.theta.copy()
    rng = stream_rng(plan.seed, STREAM_TRUTH)
    theta = rng.uniform(-plan.entry_range, plan.entry_range, size=(plan.m, plan.p))
    norms = np.linalg.norm(theta, axis=0)
    scale = np.where(norms > plan.estimator.D, plan.estimator.D / np.where(norms > 0, norms, 1.0), 1.0)
    return theta * scale


def snapshot_grid(horizon: int, points_per_decade: int = DEFAULT_POINTS_PER_DECADE) -> np.ndarray:
    """Log-spaced update counts in [1, horizon]; always contains 1 and horizon."""
    decades = math.log10(horizon) if horizon > 1 else 0.0
    count = max(2, int(math.ceil(decades * points_per_decade)) + 1)
    grid = np.unique(np.round(np.logspace(0.0, decades, count)).astype(int))
    return np.unique(np.concatenate(([1], grid, [horizon])))


def resolve_threads(threads: Optional[int], replications: int) -> int:
    if threads is None or threads <= 0:
        threads = os.cpu_count() or 1
    return max(1, min(threads, replications))


def map_replications(
    fn: Callable[[int], T], replications: Union[int, Sequence[int]], threads: int = 1
) -> List[Tuple[int, Optional[T], Optional[BaseException]]]:
    """Run fn over replication indices; results come back in index order.

    Exceptions are captured per replication so the caller applies its own
    failure policy.
    """

    def guarded(r: int):
        try:
            return r, fn(r), None
        except Exception as exc:  # noqa: BLE001 - policy decided by the caller
            logger.info("replication %d failed: %s", r, exc)
            return r, None, exc

    indices = range(replications) if isinstance(replications, int) else replications
    if threads <= 1:
        return [guarded(r) for r in indices]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(guarded, indices))
