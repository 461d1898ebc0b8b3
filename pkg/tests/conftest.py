"""Common test fixtures, test doubles and quadrature oracles."""

import math
from typing import Any, Dict, List, Mapping, Sequence

import numpy as np
import pytest
from scipy import integrate, stats

from app.domain.censoring import NoiseModel, ThresholdSchedule, Thresholds
from app.domain.kernel import saturate
from app.domain.states import EstimatorConfig, Snapshot
from app.domain.trajectory import SignalTrajectory
from app.usecases.plan import ExperimentPlan

# Threshold geometries exercised throughout the suite
SATURATION_0_15 = Thresholds(0.0, 15.0, 0.0, 15.0)
UNCENSORED = Thresholds(-math.inf, math.inf, -math.inf, math.inf)
BINARY = Thresholds(0.0, 0.0, 0.0, 1.0)

# Quadrature settings
QUAD_TAIL_SIGMAS = 14.0
QUAD_TOL = 1e-13

TEST_SEED = 12345


def _log_lower_mills(a: float, sigma: float) -> float:
    return stats.norm.logpdf(a, scale=sigma) - stats.norm.logcdf(a, scale=sigma)


def _log_upper_mills(a: float, sigma: float) -> float:
    return stats.norm.logpdf(a, scale=sigma) - stats.norm.logsf(a, scale=sigma)


def _interior(fn, lo: float, hi: float, x: float, sigma: float) -> float:
    """int_lo^hi fn(t) f(t - x) dt, truncated where the density is negligible."""
    lo = max(lo, x - QUAD_TAIL_SIGMAS * sigma)
    hi = min(hi, x + QUAD_TAIL_SIGMAS * sigma)
    if hi <= lo:
        return 0.0
    density = stats.norm(loc=x, scale=sigma).pdf
    value, _ = integrate.quad(
        lambda t: fn(t) * density(t), lo, hi, epsabs=QUAD_TOL, epsrel=QUAD_TOL, limit=200, points=[x] if lo < x < hi else None
    )
    return value


def quad_regression_g(y: float, x: float, th: Thresholds, sigma: float) -> float:
    """E[H(y; observation)] when the latent mean is x, by adaptive quadrature."""
    var = sigma * sigma
    total = _interior(lambda t: (t - y) / var, th.l, th.u, x, sigma)
    if th.has_lower:
        total -= math.exp(_log_lower_mills(th.l - y, sigma) + stats.norm.logcdf(th.l - x, scale=sigma))
    if th.has_upper:
        total += math.exp(_log_upper_mills(th.u - y, sigma) + stats.norm.logsf(th.u - x, scale=sigma))
    return total


def quad_regression_g_dx(y: float, x: float, th: Thresholds, sigma: float) -> float:
    var = sigma * sigma
    total = _interior(lambda t: (t - y) * (t - x) / (var * var), th.l, th.u, x, sigma)
    if th.has_lower:
        total += math.exp(_log_lower_mills(th.l - y, sigma) + stats.norm.logpdf(th.l - x, scale=sigma))
    if th.has_upper:
        total += math.exp(_log_upper_mills(th.u - y, sigma) + stats.norm.logpdf(th.u - x, scale=sigma))
    return total


def quad_fisher_weight(x: float, th: Thresholds, sigma: float) -> float:
    """E[(d/dx log-likelihood)^2] at latent mean x."""
    var = sigma * sigma
    total = _interior(lambda t: ((t - x) / var) ** 2, th.l, th.u, x, sigma)
    if th.has_lower:
        total += math.exp(2 * _log_lower_mills(th.l - x, sigma) + stats.norm.logcdf(th.l - x, scale=sigma))
    if th.has_upper:
        total += math.exp(2 * _log_upper_mills(th.u - x, sigma) + stats.norm.logsf(th.u - x, scale=sigma))
    return total


class FixedSignalGenerator:
    """Test double replaying fixed regressors; outputs still carry fresh noise."""

    kind = "fixed"

    def __init__(self, phis: np.ndarray):
        self.phis = np.asarray(phis, dtype=float)

    def signal_bound(self, m: int, schedule: ThresholdSchedule) -> float:
        return float(np.max(np.linalg.norm(self.phis, axis=1)))

    def generate(self, theta, n, schedule, noise, rng) -> SignalTrajectory:
        theta = np.asarray(theta, dtype=float)
        phis = self.phis[:n]
        latent = phis @ theta + noise.sample(rng, (n, theta.shape[1]))
        ys = np.stack([saturate(latent[k], schedule.at(k)) for k in range(n)])
        return SignalTrajectory(phis, ys)


class InMemorySink:
    """ResultSinkPort double keeping everything in dictionaries."""

    def __init__(self):
        self.tables: Dict[str, Any] = {}
        self.reports: Dict[str, Dict[str, Any]] = {}
        self.matrices: Dict[str, np.ndarray] = {}
        self.configs = []
        self.snapshots: Dict[str, List[Snapshot]] = {}

    def write_table(self, name: str, columns: Sequence[str], rows: np.ndarray) -> str:
        self.tables[name] = (tuple(columns), np.array(rows, copy=True))
        return name

    def write_report(self, name: str, entries: Mapping[str, Any]) -> str:
        self.reports[name] = dict(entries)
        return name

    def write_matrix(self, name: str, matrix: np.ndarray) -> str:
        self.matrices[name] = np.array(matrix, copy=True)
        return name

    def write_config(self, resolved: Dict[str, Any]) -> str:
        self.configs.append(resolved)
        return "resolved_config.yaml"

    def write_snapshots(self, name: str, snapshots: Sequence[Snapshot]) -> str:
        self.snapshots[name] = list(snapshots)
        return name


def make_plan(generator, m: int = 2, p: int = 1, horizon: int = 50, replications: int = 4, **kwargs) -> ExperimentPlan:
    """Small experiment plan with an i.i.d.-style censored setup unless overridden."""
    schedule = kwargs.pop("schedule", ThresholdSchedule(Thresholds(-0.5, 1.0, -0.5, 1.0)))
    sigma = kwargs.pop("sigma", 1.0)
    estimator = kwargs.pop(
        "estimator", EstimatorConfig.create(m, D=1.0, M=1.5 * math.sqrt(m), sigma=sigma, P0_scale=10.0)
    )
    return ExperimentPlan(
        m=m,
        p=p,
        horizon=horizon,
        replications=replications,
        seed=kwargs.pop("seed", TEST_SEED),
        schedule=schedule,
        noise=NoiseModel(sigma),
        generator=generator,
        estimator=estimator,
        **kwargs,
    )


@pytest.fixture
def unit_noise():
    """Fixture providing standard normal noise."""
    return NoiseModel(1.0)


@pytest.fixture
def saturation_thresholds():
    """Fixture providing the [0, 15] saturation used by the feedback system."""
    return SATURATION_0_15


@pytest.fixture
def rng():
    """Fixture providing a seeded random generator."""
    return np.random.default_rng(TEST_SEED)


@pytest.fixture
def memory_sink():
    """Fixture providing an in-memory result sink."""
    return InMemorySink()
