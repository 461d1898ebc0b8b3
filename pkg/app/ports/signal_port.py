from typing import Protocol

import numpy as np

from ..domain.censoring import NoiseModel, ThresholdSchedule
from ..domain.trajectory import SignalTrajectory


class SignalGeneratorPort(Protocol):
    kind: str

    def signal_bound(self, m: int, schedule: ThresholdSchedule) -> float: ...
    def generate(
        self,
        theta: np.ndarray,
        n: int,
        schedule: ThresholdSchedule,
        noise: NoiseModel,
        rng: np.random.Generator,
    ) -> SignalTrajectory: ...
