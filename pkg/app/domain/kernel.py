"""Closed-form Gaussian censoring mathematics.

Notation: for the step thresholds (l, u, L, U) and noise N(0, sigma^2) with pdf f
and cdf F,

    G(y, x) = -f(l-y)/F(l-y) F(l-x) + (1/sigma^2) int_l^u (t-y) dF(t-x)
              + f(u-y)/(1-F(u-y)) (1-F(u-x))

is the conditional mean of the score H evaluated at the estimate-side linear
response y when the true linear response is x. Every function broadcasts over
numpy arrays in y, x and the observation fields; thresholds are per-step scalars.
An infinite l (or u) removes the corresponding censored branch analytically.
"""
import functools
import logging
from typing import Tuple, Union

import numpy as np

from ..errors import InconsistentObservationError
from .censoring import ArrayLike, CensoredObservation, NoiseModel, ThresholdSchedule, Thresholds

logger = logging.getLogger(__name__)

BOUNDS_GRID_POINTS = 256
BOUNDS_X_TOL = 1e-8
_INV_PHI = (np.sqrt(5.0) - 1.0) / 2.0
_GOLDEN_MAX_ITER = 200

# Slope-bound tables: node spacing in units of sigma, and the largest table built
TABLE_SPACING = 0.125
TABLE_MAX_NODES = 4097
TABLE_CACHE_SIZE = 32
# multiple of the local second difference subtracted from (added to) the bracketing nodes
TABLE_CURVATURE_PAD = 0.25


def _finish(value: np.ndarray) -> ArrayLike:
    return value[()] if isinstance(value, np.ndarray) and value.ndim == 0 else value


def saturate(x: ArrayLike, th: Thresholds) -> ArrayLike:
    x = np.asarray(x, dtype=float)
    return _finish(np.where(x < th.l, th.L, np.where(x > th.u, th.U, x)))


def censor_indicators(y: ArrayLike, th: Thresholds) -> Tuple[ArrayLike, ArrayLike]:
    """Exact-equality censoring flags; the saturation map assigns L and U verbatim."""
    y = np.asarray(y, dtype=float)
    delta = (y == th.L).astype(np.int8)
    delta_bar = (y == th.U).astype(np.int8)
    outside = np.logical_or(y < th.l, y > th.u)
    corrupt = np.logical_and(outside, (delta + delta_bar) == 0)
    if np.any(corrupt):
        bad = y[corrupt] if y.ndim else y
        raise InconsistentObservationError(
            f"output {bad} lies outside [{th.l}, {th.u}] but equals neither "
            f"L={th.L} nor U={th.U}"
        )
    return _finish(delta), _finish(delta_bar)


def observe(y: ArrayLike, th: Thresholds) -> CensoredObservation:
    delta, delta_bar = censor_indicators(y, th)
    return CensoredObservation(y=_finish(np.asarray(y, dtype=float)), delta=delta, delta_bar=delta_bar)


def score_h(obs: CensoredObservation, z: ArrayLike, th: Thresholds, noise: NoiseModel) -> ArrayLike:
    """Per-observation log-likelihood derivative factor at linear response z."""
    z = np.asarray(z, dtype=float)
    out = (np.asarray(obs.y, dtype=float) - z) / noise.variance
    if th.has_lower:
        out = np.where(np.asarray(obs.delta) == 1, -noise.lower_mills(th.l - z), out)
    if th.has_upper:
        out = np.where(np.asarray(obs.delta_bar) == 1, noise.upper_mills(th.u - z), out)
    return _finish(np.asarray(out, dtype=float))


def truncated_partial_moments(a: ArrayLike, b: ArrayLike, noise: NoiseModel) -> Tuple[ArrayLike, ArrayLike]:
    """(F(b) - F(a), int_a^b s f(s) ds) for the noise density; a, b may be infinite."""
    p = noise.mass(a, b)
    m1 = noise.variance * (noise.pdf(a) - noise.pdf(b))
    return _finish(np.asarray(p)), _finish(np.asarray(m1))


def regression_g(y: ArrayLike, x: ArrayLike, th: Thresholds, noise: NoiseModel) -> ArrayLike:
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    p, m1 = truncated_partial_moments(th.l - x, th.u - x, noise)
    out = ((x - y) * p + m1) / noise.variance
    if th.has_lower:
        out = out - noise.lower_mills(th.l - y) * noise.cdf(th.l - x)
    if th.has_upper:
        out = out + noise.upper_mills(th.u - y) * noise.sf(th.u - x)
    return _finish(np.asarray(out, dtype=float))


def regression_g_dx(y: ArrayLike, x: ArrayLike, th: Thresholds, noise: NoiseModel) -> ArrayLike:
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    var = noise.variance
    out = noise.mass(th.l - x, th.u - x) / var
    if th.has_lower:
        out = out + (noise.lower_mills(th.l - y) - (y - th.l) / var) * noise.pdf(th.l - x)
    if th.has_upper:
        out = out + (noise.upper_mills(th.u - y) - (th.u - y) / var) * noise.pdf(th.u - x)
    return _finish(np.asarray(out, dtype=float))


def fisher_weight(x: ArrayLike, th: Thresholds, noise: NoiseModel) -> ArrayLike:
    """Scalar information weight lambda at true linear response x."""
    x = np.asarray(x, dtype=float)
    var = noise.variance
    a = th.l - x
    b = th.u - x
    # int_a^b (s^2 / sigma^4) f(s) ds = [F(b) - F(a) - (b f(b) - a f(a))] / sigma^2
    middle = noise.mass(a, b)
    if th.has_lower:
        fa = noise.pdf(a)
        middle = middle + a * fa
        out_lower = fa * noise.lower_mills(a)
    else:
        out_lower = 0.0
    if th.has_upper:
        fb = noise.pdf(b)
        middle = middle - b * fb
        out_upper = fb * noise.upper_mills(b)
    else:
        out_upper = 0.0
    return _finish(np.asarray(out_lower + middle / var + out_upper, dtype=float))


def _golden_refine(objective, left: np.ndarray, right: np.ndarray, tol: float) -> np.ndarray:
    """Vectorised golden-section minimisation of objective on [left, right] (per entry)."""
    a = np.array(left, dtype=float)
    b = np.array(right, dtype=float)
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = objective(c), objective(d)
    for _ in range(_GOLDEN_MAX_ITER):
        if np.all(b - a <= tol):
            break
        left_better = fc < fd
        b = np.where(left_better, d, b)
        a = np.where(left_better, a, c)
        kept_x = np.where(left_better, c, d)
        kept_f = np.where(left_better, fc, fd)
        new_x = np.where(left_better, b - _INV_PHI * (b - a), a + _INV_PHI * (b - a))
        new_f = objective(new_x)
        c = np.where(left_better, new_x, kept_x)
        fc = np.where(left_better, new_f, kept_f)
        d = np.where(left_better, kept_x, new_x)
        fd = np.where(left_better, kept_f, new_f)
    return np.minimum(fc, fd)


def g_dx_bounds(
    y: ArrayLike, xmax: float, th: Thresholds, noise: NoiseModel
) -> Tuple[ArrayLike, ArrayLike]:
    """Min and max of dG(y, x)/dx over x in [-xmax, xmax].

    A coarse grid locates the extremum; golden-section search then refines it
    inside the neighbouring grid cells down to BOUNDS_X_TOL in x.
    """
    y = np.asarray(y, dtype=float)
    grid = np.linspace(-xmax, xmax, BOUNDS_GRID_POINTS)
    values = regression_g_dx(y[..., None], grid, th, noise)
    last = BOUNDS_GRID_POINTS - 1
    extremes = []
    for sign in (1.0, -1.0):
        signed = sign * values
        idx = np.argmin(signed, axis=-1)
        left = grid[np.maximum(idx - 1, 0)]
        right = grid[np.minimum(idx + 1, last)]
        refined = _golden_refine(
            lambda pts, s=sign: s * regression_g_dx(y, pts, th, noise), left, right, BOUNDS_X_TOL
        )
        extremes.append(sign * np.minimum(refined, np.min(signed, axis=-1)))
    g_lo, g_hi = extremes
    return _finish(np.asarray(g_lo)), _finish(np.asarray(g_hi))


def _cell_pad(values: np.ndarray) -> np.ndarray:
    """Per-cell widening from the second differences at the two bracketing nodes."""
    second = np.zeros_like(values)
    second[1:-1] = np.abs(np.diff(values, n=2))
    return TABLE_CURVATURE_PAD * np.maximum(second[:-1], second[1:])


class SlopeBoundTable:
    """g_dx_bounds tabulated on an even y-grid over [-y_range, y_range].

    A lookup returns the smaller (larger) of the two bracketing node values,
    widened by the local curvature, so it brackets the direct bounds. Queries
    off the grid are computed directly.
    """

    def __init__(self, th: Thresholds, noise: NoiseModel, xmax: float, y_range: float, nodes: int):
        self.th = th
        self.noise = noise
        self.xmax = xmax
        self.y = np.linspace(-y_range, y_range, nodes)
        self.step = self.y[1] - self.y[0]
        self.lo, self.hi = g_dx_bounds(self.y, xmax, th, noise)
        self.lo_pad = _cell_pad(self.lo)
        self.hi_pad = _cell_pad(self.hi)

    def lookup(self, y: ArrayLike) -> Tuple[ArrayLike, ArrayLike]:
        y = np.asarray(y, dtype=float)
        pos = (y - self.y[0]) / self.step
        last_cell = len(self.y) - 2
        on_grid = (pos >= 0) & (pos <= last_cell + 1)
        idx = np.clip(np.floor(np.where(on_grid, pos, 0.0)).astype(int), 0, last_cell)
        lo = np.minimum(self.lo[idx], self.lo[idx + 1])
        g_lo = np.maximum(lo - self.lo_pad[idx], 0.5 * lo)
        g_hi = np.maximum(self.hi[idx], self.hi[idx + 1]) + self.hi_pad[idx]
        if not np.all(on_grid):
            direct_lo, direct_hi = g_dx_bounds(y[~on_grid], self.xmax, self.th, self.noise)
            g_lo = np.array(g_lo, dtype=float)
            g_hi = np.array(g_hi, dtype=float)
            g_lo[~on_grid] = direct_lo
            g_hi[~on_grid] = direct_hi
        return _finish(np.asarray(g_lo)), _finish(np.asarray(g_hi))


def table_nodes(y_range: float, noise: NoiseModel) -> int:
    return int(np.ceil(2.0 * y_range / (TABLE_SPACING * noise.sigma))) + 1


@functools.lru_cache(maxsize=TABLE_CACHE_SIZE)
def slope_bound_table(th: Thresholds, noise: NoiseModel, xmax: float, y_range: float) -> SlopeBoundTable:
    nodes = max(table_nodes(y_range, noise), 3)
    logger.debug("tabulating slope bounds for %s on %d nodes (|y| <= %.4g)", th, nodes, y_range)
    return SlopeBoundTable(th, noise, xmax, y_range, nodes)


def slope_bounds(
    y: ArrayLike, xmax: float, th: Thresholds, noise: NoiseModel, y_range: float
) -> Tuple[ArrayLike, ArrayLike]:
    """g_dx_bounds through a cached table when |y| <= y_range fits in TABLE_MAX_NODES."""
    if not np.isfinite(y_range) or table_nodes(y_range, noise) > TABLE_MAX_NODES:
        return g_dx_bounds(y, xmax, th, noise)
    return slope_bound_table(th, noise, float(xmax), float(y_range)).lookup(y)


def apply_schedule(
    fn, xs: np.ndarray, schedule: Union[ThresholdSchedule, Thresholds], noise: NoiseModel, start: int = 0
) -> np.ndarray:
    """fn(xs[k], thresholds of step start + k, noise) along the leading axis of xs.

    A bare Thresholds is read as the constant schedule.
    """
    if isinstance(schedule, Thresholds):
        schedule = ThresholdSchedule(schedule)
    xs = np.asarray(xs, dtype=float)
    if schedule.is_constant:
        return np.asarray(fn(xs, schedule.at(0), noise), dtype=float)
    out = np.empty_like(xs)
    steps = start + np.arange(xs.shape[0])
    for phase in range(schedule.period):
        sel = steps % schedule.period == phase
        if np.any(sel):
            out[sel] = fn(xs[sel], schedule.at(phase), noise)
    return out
