"""Self-contained invariant suite run by the `check` command.

Every check is deterministic (fixed seeds) and independent of quadrature, so it
can run on any installation without the test dependencies.
"""
import logging
import time
from dataclasses import dataclass
from typing import Callable, List, Tuple

import numpy as np

from ..adapters.infra.signals import FeedbackSignalGenerator
from ..domain.censoring import NoiseModel, ThresholdSchedule, Thresholds
from ..domain.kernel import (
    fisher_weight,
    g_dx_bounds,
    observe,
    regression_g,
    regression_g_dx,
    saturate,
    score_h,
    slope_bounds,
    truncated_partial_moments,
)
from ..domain.projection import WeightedNorm, multiplier_for, project, project_with_gain
from ..domain.states import EstimatorConfig, initial_states
from .estimator import compute_step2_gains, run_stream, step1_update_with_gains, step2_update
from .fisher import FisherAccumulator, accumulate, crb_trace, sym_sqrt

logger = logging.getLogger(__name__)

CHECK_SEED = 20240531
SATURATION_0_15 = Thresholds(0.0, 15.0, 0.0, 15.0)
UNCENSORED = Thresholds(-np.inf, np.inf, -np.inf, np.inf)
BINARY = Thresholds(0.0, 0.0, 0.0, 1.0)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float


@dataclass(frozen=True)
class SuiteReport:
    results: Tuple[CheckResult, ...]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    @property
    def failures(self) -> List[CheckResult]:
        return [r for r in self.results if not r.passed]

    def summary_lines(self) -> List[str]:
        lines = [
            f"{'PASS' if r.passed else 'FAIL'}  {r.name}  ({r.seconds:.2f}s)  {r.detail}"
            for r in self.results
        ]
        lines.append(f"{len(self.results) - len(self.failures)}/{len(self.results)} checks passed")
        return lines


def _rng(offset: int = 0) -> np.random.Generator:
    return np.random.default_rng(CHECK_SEED + offset)


def _random_spd(rng, m: int, cond: float) -> np.ndarray:
    Q, _ = np.linalg.qr(rng.normal(size=(m, m)))
    eig = np.logspace(0.0, np.log10(cond), m)
    return (Q * eig) @ Q.T


def check_saturation_range() -> Tuple[bool, str]:
    xs = _rng().normal(7.5, 20.0, size=5000)
    ys = np.asarray(saturate(xs, SATURATION_0_15))
    ok = np.all((ys >= 0) & (ys <= 15)) and saturate(-3.0, SATURATION_0_15) == 0 and saturate(20.0, SATURATION_0_15) == 15
    return bool(ok), "outputs inside [L, U]"


def check_score_values() -> Tuple[bool, str]:
    noise = NoiseModel(1.0)
    lower = score_h(observe(0.0, SATURATION_0_15), 0.0, SATURATION_0_15, noise)
    upper_th = Thresholds(-5.0, 0.0, -5.0, 0.0)
    upper = score_h(observe(0.0, upper_th), 0.0, upper_th, noise)
    interior = score_h(observe(1.0, SATURATION_0_15), 0.5, SATURATION_0_15, noise)
    expected = 2.0 / np.sqrt(2.0 * np.pi)
    ok = abs(lower + expected) < 1e-12 and abs(upper - expected) < 1e-12 and abs(interior - 0.5) < 1e-15
    return bool(ok), f"H = {lower:.6f} / {upper:.6f} / {interior:.3f}"


def check_partial_moments() -> Tuple[bool, str]:
    noise = NoiseModel(1.0)
    p_all, m_all = truncated_partial_moments(-np.inf, np.inf, noise)
    p_half, m_half = truncated_partial_moments(0.0, np.inf, noise)
    ok = abs(p_all - 1) < 1e-15 and abs(m_all) < 1e-15 and abs(p_half - 0.5) < 1e-15
    ok = ok and abs(m_half - 1.0 / np.sqrt(2.0 * np.pi)) < 1e-15
    return bool(ok), "closed forms at the reference points"


def check_g_diagonal_zero() -> Tuple[bool, str]:
    rng = _rng(1)
    worst = 0.0
    for th in (SATURATION_0_15, UNCENSORED, BINARY):
        for sigma in (0.5, 1.0, 2.0):
            y = rng.uniform(-5, 5, 400)
            worst = max(worst, float(np.max(np.abs(regression_g(y, y, th, NoiseModel(sigma))))))
    return worst < 1e-12, f"max |G(y, y)| = {worst:.2e}"


def check_g_dx_positive_and_consistent() -> Tuple[bool, str]:
    rng = _rng(2)
    noise = NoiseModel(1.0)
    y, x = rng.uniform(-5, 5, (2, 400))
    dx = np.asarray(regression_g_dx(y, x, SATURATION_0_15, noise))
    h = 1e-5
    fd = (np.asarray(regression_g(y, x + h, SATURATION_0_15, noise)) - np.asarray(regression_g(y, x - h, SATURATION_0_15, noise))) / (2 * h)
    err = float(np.max(np.abs(fd - dx)))
    return bool(np.all(dx > 0) and err < 1e-6), f"min slope {dx.min():.3e}, finite-difference gap {err:.1e}"


def check_fisher_identity() -> Tuple[bool, str]:
    x = _rng(3).uniform(-5, 20, 1000)
    worst = 0.0
    for th in (SATURATION_0_15, UNCENSORED, BINARY):
        noise = NoiseModel(1.0)
        lam = np.asarray(fisher_weight(x, th, noise))
        worst = max(worst, float(np.max(np.abs(lam - np.asarray(regression_g_dx(x, x, th, noise))))))
    return worst < 1e-10, f"max |lambda - dG/dx| = {worst:.2e}"


def check_slope_bounds() -> Tuple[bool, str]:
    noise = NoiseModel(1.0)
    g_lo, g_hi = g_dx_bounds(0.0, 2.0, SATURATION_0_15, noise)
    dense = np.asarray(regression_g_dx(0.0, np.linspace(-2, 2, 10001), SATURATION_0_15, noise))
    flat = g_dx_bounds(0.3, 4.0, UNCENSORED, noise)
    ok = abs(g_lo - dense.min()) < 1e-6 and abs(g_hi - dense.max()) < 1e-6
    ok = ok and abs(flat[0] - 1) < 1e-12 and abs(flat[1] - 1) < 1e-12
    ys = np.linspace(-7.3, 21.1, 41)
    table_lo, table_hi = slope_bounds(ys, 3.0, SATURATION_0_15, noise, 30.0)
    direct_lo, direct_hi = g_dx_bounds(ys, 3.0, SATURATION_0_15, noise)
    ok = ok and bool(np.all(table_lo <= direct_lo * (1 + 1e-9)) and np.all(table_hi >= direct_hi * (1 - 1e-9)))
    ok = ok and bool(np.all(table_lo > 0.4 * direct_lo))
    return bool(ok), f"[{g_lo:.6f}, {g_hi:.6f}], tabulated bounds bracket the direct ones"


def check_projection() -> Tuple[bool, str]:
    rng = _rng(4)
    worst_expand = 0.0
    worst_kkt = 0.0
    for _ in range(300):
        A = _random_spd(rng, 4, 1e6)
        norm = WeightedNorm(A, 1.0)
        x1, x2 = rng.normal(0, 2, (2, 4))
        y1, y2 = project(x1, norm), project(x2, norm)
        worst_expand = max(worst_expand, float(norm.norm(y1 - y2) - norm.norm(x1 - x2)) / max(1.0, float(norm.norm(x1 - x2))))
        if np.linalg.norm(x1) > 1:
            mu = multiplier_for(x1, norm)
            residual = (A + mu * np.eye(4)) @ y1 - A @ x1
            worst_kkt = max(worst_kkt, float(np.linalg.norm(residual) / np.linalg.norm(A @ x1)))
    inside = np.array([0.3, -0.2, 0.1, 0.0])
    ok = worst_expand <= 1e-9 and worst_kkt < 1e-8 and np.array_equal(project(inside, WeightedNorm(np.eye(4), 1.0)), inside)
    return bool(ok), f"expansion {worst_expand:.1e}, KKT residual {worst_kkt:.1e}"


def check_inverse_gain_identities(steps: int = 500, m: int = 4) -> Tuple[bool, str]:
    rng = _rng(5)
    cfg = EstimatorConfig.create(m, D=2.0, M=np.sqrt(m), sigma=1.0, gain_search_radius=6.0)
    th = Thresholds(-0.5, 0.5, -0.5, 0.5)
    theta = rng.uniform(-0.5, 0.5, m)
    s1, s2 = initial_states(cfg)
    inv1 = np.linalg.inv(s1.P_bar)
    inv2 = np.linalg.inv(s2.P)
    worst1 = worst2 = 0.0
    for _ in range(steps):
        phi = rng.uniform(-1, 1, m)
        obs = observe(saturate(phi @ theta + rng.normal(), th), th)
        gains2 = compute_step2_gains(s2, s1.theta_bar, phi, obs, th, cfg)
        s2 = step2_update(s2, s1.theta_bar, phi, obs, th, cfg)
        s1, gains1 = step1_update_with_gains(s1, phi, obs, th, cfg)
        inv1 = inv1 + gains1.beta_bar**2 * np.outer(phi, phi)
        if gains2.a > 0:
            inv2 = inv2 + gains2.info_weight * np.outer(phi, phi)
        direct1, direct2 = np.linalg.inv(s1.P_bar), np.linalg.inv(s2.P)
        worst1 = max(worst1, float(np.linalg.norm(direct1 - inv1) / np.linalg.norm(direct1)))
        worst2 = max(worst2, float(np.linalg.norm(direct2 - inv2) / np.linalg.norm(direct2)))
    return worst1 < 1e-8 and worst2 < 1e-8, f"relative gaps {worst1:.1e} / {worst2:.1e}"


def check_estimator_bounds_and_determinism(steps: int = 300, m: int = 3) -> Tuple[bool, str]:
    cfg = EstimatorConfig.create(m, D=1.0, M=np.sqrt(m), sigma=1.0, gain_search_radius=4.0)
    schedule = ThresholdSchedule([Thresholds(0.0, 1.0, 0.0, 1.0), Thresholds(-1.0, 0.5, -1.0, 0.5)])

    def stream(seed):
        rng = np.random.default_rng(seed)
        theta = np.array([0.6, -0.4, 0.2])
        for k in range(steps):
            phi = rng.uniform(-1, 1, m)
            th = schedule.at(k)
            yield phi, observe(saturate(phi @ theta + rng.normal(), th), th), th

    first = run_stream(cfg, stream(CHECK_SEED))
    second = run_stream(cfg, stream(CHECK_SEED))
    identical = all(
        np.array_equal(a.theta_hat, b.theta_hat) and np.array_equal(a.P, b.P) for a, b in zip(first, second)
    )
    norms_ok = all(
        np.linalg.norm(s.theta_bar) <= 2 * cfg.D * (1 + 1e-9) and np.linalg.norm(s.theta_hat) <= 2 * cfg.D * (1 + 1e-9)
        for s in first
    )
    pd_ok = all(np.all(np.linalg.eigvalsh(s.P) > 0) and np.all(np.linalg.eigvalsh(s.P_bar) > 0) for s in first)
    sym_ok = all(np.array_equal(s.P, s.P.T) and np.array_equal(s.P_bar, s.P_bar.T) for s in first)
    return bool(identical and norms_ok and pd_ok and sym_ok), "bounded, SPD, symmetric and reproducible"


def check_uncensored_reduction(steps: int = 1000, m: int = 3) -> Tuple[bool, str]:
    rng = _rng(6)
    sigma = 0.7
    cfg = EstimatorConfig.create(m, D=2.0, M=np.sqrt(m), sigma=sigma)
    theta = np.array([0.5, -1.0, 0.25])
    _, s2 = initial_states(cfg)
    ref_theta, ref_P = s2.theta_hat.copy(), s2.P.copy()
    s1, _ = initial_states(cfg)
    worst = 0.0
    for _ in range(steps):
        phi = rng.uniform(-1, 1, m)
        y = phi @ theta + sigma * rng.normal()
        obs = observe(y, UNCENSORED)
        s2 = step2_update(s2, s1.theta_bar, phi, obs, UNCENSORED, cfg)
        Pphi = ref_P @ phi
        denom = sigma**2 + phi @ Pphi
        ref_P = ref_P - np.outer(Pphi, Pphi) / denom
        ref_P = 0.5 * (ref_P + ref_P.T)
        ref_theta = project_with_gain(ref_theta + Pphi * (y - phi @ ref_theta) / denom, ref_P, cfg.radius)
        worst = max(worst, float(np.max(np.abs(s2.theta_hat - ref_theta))))
    return worst < 1e-10, f"max deviation from recursive least squares {worst:.1e}"


def check_fisher_accumulator() -> Tuple[bool, str]:
    rng = _rng(7)
    noise = NoiseModel(1.0)
    acc = FisherAccumulator.zeros(3)
    monotone = True
    previous = np.zeros(3)
    for _ in range(200):
        phi = rng.uniform(-1, 1, 3)
        acc = accumulate(acc, phi, phi @ np.array([0.3, 0.1, -0.2]), SATURATION_0_15, noise)
        eig = np.linalg.eigvalsh(acc.lambda_sum)
        monotone = monotone and np.all(eig >= previous - 1e-12)
        previous = eig
    unchanged = accumulate(acc, np.zeros(3), 0.0, SATURATION_0_15, noise)
    crb_ok = abs(crb_trace(50.0 * np.eye(10)) - 10 / 50) < 1e-14 and abs(crb_trace(np.diag([2.0, 8.0])) - 0.625) < 1e-14
    root = sym_sqrt(acc.lambda_sum)
    root_ok = np.linalg.norm(root @ root - acc.lambda_sum) <= 1e-10 * np.linalg.norm(acc.lambda_sum)
    ok = monotone and np.array_equal(unchanged.lambda_sum, acc.lambda_sum) and crb_ok and root_ok
    return bool(ok), "Loewner monotone, trace and square root exact"


def check_feedback_bounded() -> Tuple[bool, str]:
    rng = _rng(8)
    theta = rng.uniform(-1, 1, (10, 10))
    traj = FeedbackSignalGenerator().generate(theta, 2000, ThresholdSchedule(SATURATION_0_15), NoiseModel(1.0), rng)
    return bool(np.all((traj.phis >= 0) & (traj.phis <= 15))), f"max coordinate {traj.phis.max():.3f}"


CHECKS: Tuple[Tuple[str, Callable[[], Tuple[bool, str]]], ...] = (
    ("saturation keeps outputs in [L, U]", check_saturation_range),
    ("score function reference values", check_score_values),
    ("truncated partial moments reference values", check_partial_moments),
    ("G vanishes on the diagonal", check_g_diagonal_zero),
    ("dG/dx positive and equal to finite differences", check_g_dx_positive_and_consistent),
    ("Fisher weight equals dG/dx on the diagonal", check_fisher_identity),
    ("slope bounds match a dense scan", check_slope_bounds),
    ("projection non-expansive with KKT residual", check_projection),
    ("inverse-gain identities of both steps", check_inverse_gain_identities),
    ("estimates bounded, gains SPD, runs reproducible", check_estimator_bounds_and_determinism),
    ("uncensored case reduces to recursive least squares", check_uncensored_reduction),
    ("information accumulator, trace and square root", check_fisher_accumulator),
    ("feedback system stays within saturation levels", check_feedback_bounded),
)


def run_checks() -> SuiteReport:
    results = []
    for name, fn in CHECKS:
        started = time.perf_counter()
        try:
            passed, detail = fn()
        except Exception as exc:  # noqa: BLE001 - a crashing check is a failing check
            passed, detail = False, f"raised {type(exc).__name__}: {exc}"
        elapsed = time.perf_counter() - started
        logger.info("%s: %s", name, "pass" if passed else "FAIL")
        results.append(CheckResult(name, bool(passed), detail, elapsed))
    return SuiteReport(tuple(results))
