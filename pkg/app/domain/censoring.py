"""Value types of the censored observation model: thresholds, noise, observations."""
import math
from dataclasses import dataclass
from typing import Sequence, Tuple, Union

import numpy as np
from scipy import special

from ..errors import ConfigError

ArrayLike = Union[float, np.ndarray]

_SQRT_2 = math.sqrt(2.0)
_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class Thresholds:
    """One step of the saturation geometry: interior band [l, u], censored levels L, U."""

    l: float
    u: float
    L: float
    U: float

    def __post_init__(self):
        for name in ("l", "u", "L", "U"):
            if math.isnan(getattr(self, name)):
                raise ConfigError(f"threshold {name} is NaN")
        if not self.L < self.U:
            raise ConfigError(f"thresholds require L < U, got L={self.L}, U={self.U}")
        if not (self.L <= self.l <= self.u <= self.U):
            raise ConfigError(
                f"thresholds require L <= l <= u <= U, got "
                f"(l={self.l}, u={self.u}, L={self.L}, U={self.U})"
            )
        if self.l == math.inf or self.u == -math.inf:
            raise ConfigError("l must be below +inf and u above -inf")
        # a censored level is infinite exactly when its branch is absent
        if math.isinf(self.L) != math.isinf(self.l) or math.isinf(self.U) != math.isinf(self.u):
            raise ConfigError(
                "L (resp. U) must be infinite exactly when l (resp. u) is infinite"
            )

    @property
    def has_lower(self) -> bool:
        return self.l > -math.inf

    @property
    def has_upper(self) -> bool:
        return self.u < math.inf

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.l, self.u, self.L, self.U)


@dataclass(frozen=True)
class ThresholdSchedule:
    """Step index -> Thresholds. Constant, or a finite cycle indexed by k mod length."""

    entries: Tuple[Thresholds, ...]

    def __init__(self, entries: Union[Thresholds, Sequence[Thresholds]]):
        if isinstance(entries, Thresholds):
            entries = (entries,)
        entries = tuple(entries)
        if not entries:
            raise ConfigError("a threshold schedule needs at least one entry")
        object.__setattr__(self, "entries", entries)

    @classmethod
    def constant(cls, l: float, u: float, L: float, U: float) -> "ThresholdSchedule":
        return cls(Thresholds(l, u, L, U))

    @property
    def period(self) -> int:
        return len(self.entries)

    @property
    def is_constant(self) -> bool:
        return len(self.entries) == 1

    def at(self, k: int) -> Thresholds:
        return self.entries[k % len(self.entries)]

    def level_bound(self) -> float:
        """Largest |value| any saturated output can take (inf if unbounded)."""
        bound = 0.0
        for th in self.entries:
            bound = max(bound, abs(th.L), abs(th.U))
        return bound


@dataclass(frozen=True)
class NoiseModel:
    """Gaussian N(0, sigma^2) noise: pdf f, cdf F and stable Mills ratios."""

    sigma: float

    def __post_init__(self):
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ConfigError(f"noise sigma must be positive and finite, got {self.sigma}")

    @property
    def variance(self) -> float:
        return self.sigma * self.sigma

    def pdf(self, a: ArrayLike) -> ArrayLike:
        t = np.asarray(a, dtype=float) / self.sigma
        return np.exp(-0.5 * t * t) * (_INV_SQRT_2PI / self.sigma)

    def cdf(self, a: ArrayLike) -> ArrayLike:
        return special.ndtr(np.asarray(a, dtype=float) / self.sigma)

    def sf(self, a: ArrayLike) -> ArrayLike:
        return special.ndtr(-np.asarray(a, dtype=float) / self.sigma)

    def mass(self, a: ArrayLike, b: ArrayLike) -> ArrayLike:
        """F(b) - F(a), differenced in whichever tail keeps precision."""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        return np.where(a > 0, self.sf(a) - self.sf(b), self.cdf(b) - self.cdf(a))

    def lower_mills(self, a: ArrayLike) -> ArrayLike:
        """f(a) / F(a); uses erfcx so the ratio stays finite deep in the lower tail."""
        t = np.asarray(a, dtype=float) / self.sigma
        return _SQRT_2_OVER_PI / special.erfcx(-t / _SQRT_2) / self.sigma

    def upper_mills(self, a: ArrayLike) -> ArrayLike:
        """f(a) / (1 - F(a))."""
        return self.lower_mills(-np.asarray(a, dtype=float))

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        return rng.normal(0.0, self.sigma, size=size)


@dataclass(frozen=True, eq=False)
class CensoredObservation:
    """Observed output with its lower (delta) and upper (delta_bar) censoring flags.

    Fields may be scalars or equally shaped arrays (one entry per output column).
    """

    y: ArrayLike
    delta: ArrayLike
    delta_bar: ArrayLike

    def __post_init__(self):
        both = np.logical_and(np.asarray(self.delta) == 1, np.asarray(self.delta_bar) == 1)
        if np.any(both):
            raise ConfigError("an observation cannot be censored from both sides")
