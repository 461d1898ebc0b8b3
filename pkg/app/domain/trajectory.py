"""Simulated regressor/output sequences consumed by the estimators."""
from dataclasses import dataclass
from typing import Iterator, Tuple

import numpy as np

from ..errors import ConfigError
from .censoring import CensoredObservation, ThresholdSchedule, Thresholds
from .kernel import observe


@dataclass(frozen=True, eq=False)
class SignalTrajectory:
    """phis[k] is the regressor phi_k and ys[k] the output y_{k+1} it explains.

    ys has one column per output j; every column shares the regressor.
    """

    phis: np.ndarray  # (n, m)
    ys: np.ndarray  # (n, p)

    def __post_init__(self):
        phis = np.asarray(self.phis, dtype=float)
        ys = np.asarray(self.ys, dtype=float)
        if phis.ndim != 2 or ys.ndim != 2 or phis.shape[0] != ys.shape[0]:
            raise ConfigError(
                f"trajectory needs phis (n, m) and ys (n, p), got {phis.shape} and {ys.shape}"
            )
        object.__setattr__(self, "phis", phis)
        object.__setattr__(self, "ys", ys)

    @property
    def n(self) -> int:
        return self.phis.shape[0]

    @property
    def m(self) -> int:
        return self.phis.shape[1]

    @property
    def p(self) -> int:
        return self.ys.shape[1]

    def column(self, j: int) -> "SignalTrajectory":
        return SignalTrajectory(self.phis, self.ys[:, j : j + 1])

    def stream(
        self, schedule: ThresholdSchedule, start: int = 0, stop: int = None
    ) -> Iterator[Tuple[np.ndarray, CensoredObservation, Thresholds]]:
        """(phi_k, censored y_{k+1}, thresholds) items for k in [start, stop)."""
        stop = self.n if stop is None else stop
        for k in range(start, stop):
            th = schedule.at(k)
            yield self.phis[k], observe(self.ys[k], th), th
