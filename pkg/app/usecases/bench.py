"""Update throughput of the two-step estimator."""
import logging
import time
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from ..domain.censoring import NoiseModel, Thresholds
from ..domain.kernel import observe, saturate
from ..domain.states import EstimatorConfig
from .estimator import TwoStepEstimator

logger = logging.getLogger(__name__)

BENCH_DIMENSIONS = (2, 10, 50)
# output columns sharing one regressor stream, updated as one batch
BENCH_COLUMNS = 64
BENCH_SEED = 7
BENCH_THRESHOLDS = Thresholds(0.0, 15.0, 0.0, 15.0)


@dataclass(frozen=True)
class BenchResult:
    m: int
    steps: int
    columns: int
    seconds: float

    @property
    def updates(self) -> int:
        return self.steps * self.columns

    @property
    def updates_per_second(self) -> float:
        return self.updates / self.seconds if self.seconds > 0 else float("inf")


def bench_dimension(m: int, steps: int, columns: int = BENCH_COLUMNS) -> BenchResult:
    """Times `steps` batched updates of `columns` scalar problems on an i.i.d. censored stream.

    Data generation and the first update, which tabulates the slope bounds, are
    not timed.
    """
    rng = np.random.default_rng(BENCH_SEED)
    noise = NoiseModel(1.0)
    theta = rng.uniform(-1.0, 1.0, (m, columns))
    theta *= np.minimum(1.0, 2.0 / np.linalg.norm(theta, axis=0))
    phis = rng.uniform(0.0, 3.0, (steps + 1, m))
    ys = np.asarray(saturate(phis @ theta + noise.sample(rng, (steps + 1, columns)), BENCH_THRESHOLDS))
    observations = [observe(y, BENCH_THRESHOLDS) for y in ys]
    cfg = EstimatorConfig.create(m, D=2.0, M=3.0 * np.sqrt(m), sigma=1.0, gain_search_radius=12.0)
    est = TwoStepEstimator(cfg, batch_shape=(columns,))
    est.update(phis[0], observations[0], BENCH_THRESHOLDS)
    started = time.perf_counter()
    for phi, obs in zip(phis[1:], observations[1:]):
        est.update(phi, obs, BENCH_THRESHOLDS)
    elapsed = time.perf_counter() - started
    result = BenchResult(m, steps, columns, elapsed)
    logger.info("m=%d: %.0f updates/s over %d columns", m, result.updates_per_second, columns)
    return result


def run_bench(steps: int, dimensions: Sequence[int] = BENCH_DIMENSIONS) -> Tuple[BenchResult, ...]:
    return tuple(bench_dimension(m, steps) for m in dimensions)
