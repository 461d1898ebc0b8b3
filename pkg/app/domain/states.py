"""State and configuration types of the two-step recursive estimator.

States carry an optional leading batch dimension: theta has shape (..., m) and the
gain (..., m, m), so p independent scalar-output problems sharing one regressor
stream are updated together.
"""
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from ..errors import ConfigError
from .censoring import NoiseModel

DEFAULT_P0_SCALE = 100.0


@dataclass(frozen=True, eq=False)
class Step1State:
    theta_bar: np.ndarray
    P_bar: np.ndarray


@dataclass(frozen=True, eq=False)
class Step2State:
    theta_hat: np.ndarray
    P: np.ndarray


@dataclass(frozen=True, eq=False)
class EstimatorConfig:
    D: float
    M: float
    sigma: float
    theta0: np.ndarray
    P0_scale: float = DEFAULT_P0_SCALE
    gain_search_radius: Optional[float] = None
    noise: NoiseModel = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        for name in ("D", "M", "sigma", "P0_scale"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ConfigError(f"estimator {name} must be positive and finite, got {value}")
        if self.gain_search_radius is not None and not self.gain_search_radius > 0:
            raise ConfigError("gain_search_radius must be positive when set")
        theta0 = np.asarray(self.theta0, dtype=float)
        if theta0.ndim != 1 or theta0.size == 0:
            raise ConfigError(f"theta0 must be a non-empty vector, got shape {theta0.shape}")
        if np.linalg.norm(theta0) > self.radius:
            raise ConfigError(f"theta0 must satisfy ||theta0|| <= 2D = {self.radius}")
        object.__setattr__(self, "theta0", theta0)
        object.__setattr__(self, "noise", NoiseModel(self.sigma))

    @classmethod
    def create(cls, m: int, D: float, M: float, sigma: float, **kwargs) -> "EstimatorConfig":
        theta0 = kwargs.pop("theta0", None)
        return cls(D=D, M=M, sigma=sigma, theta0=np.zeros(m) if theta0 is None else theta0, **kwargs)

    @property
    def m(self) -> int:
        return self.theta0.shape[0]

    @property
    def radius(self) -> float:
        """Radius 2D of the ball both estimates are projected onto."""
        return 2.0 * self.D

    @property
    def xmax(self) -> float:
        """Half-width of the interval searched for the Step-1 derivative bounds."""
        if self.gain_search_radius is not None:
            return self.gain_search_radius
        return 2.0 * self.D * self.M

    @property
    def y_range(self) -> float:
        """Bound 2DM on |phi^T theta_bar| over the projection ball."""
        return 2.0 * self.D * self.M


def initial_states(cfg: EstimatorConfig, batch_shape: Tuple[int, ...] = ()) -> Tuple[Step1State, Step2State]:
    m = cfg.m
    theta = np.broadcast_to(cfg.theta0, batch_shape + (m,)).copy()
    P = np.broadcast_to(cfg.P0_scale * np.eye(m), batch_shape + (m, m)).copy()
    return Step1State(theta.copy(), P.copy()), Step2State(theta, P)


@dataclass(frozen=True, eq=False)
class Snapshot:
    """Both recursions after k updates."""

    k: int
    theta_bar: np.ndarray
    theta_hat: np.ndarray
    P: np.ndarray
    P_bar: np.ndarray

    @property
    def step1(self) -> Step1State:
        return Step1State(self.theta_bar, self.P_bar)

    @property
    def step2(self) -> Step2State:
        return Step2State(self.theta_hat, self.P)
