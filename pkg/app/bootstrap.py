import math
from typing import Any, Dict

import numpy as np

from .adapters.infra.signals import (
    KIND_DETERMINISTIC,
    KIND_FEEDBACK,
    DeterministicSignalGenerator,
    FeedbackSignalGenerator,
    IidBoundedSignalGenerator,
)
from .config import ExperimentConfig, GeneratorSection, resolved_dict
from .domain.censoring import NoiseModel, ThresholdSchedule
from .domain.states import EstimatorConfig
from .errors import ConfigError
from .ports.signal_port import SignalGeneratorPort
from .usecases.plan import ExperimentPlan


def build_generator(section: GeneratorSection) -> SignalGeneratorPort:
    if section.kind == KIND_FEEDBACK:
        return FeedbackSignalGenerator()
    if section.kind == KIND_DETERMINISTIC:
        return DeterministicSignalGenerator(section.amplitude, section.intercept)
    return IidBoundedSignalGenerator(section.amplitude, section.intercept)


def build_schedule(cfg: ExperimentConfig) -> ThresholdSchedule:
    return ThresholdSchedule([entry.to_domain() for entry in cfg.threshold_entries()])


def derive_signal_bound(cfg: ExperimentConfig, generator: SignalGeneratorPort, schedule: ThresholdSchedule) -> float:
    if cfg.estimator.M is not None:
        return cfg.estimator.M
    bound = generator.signal_bound(cfg.experiment.m, schedule)
    if not math.isfinite(bound) or bound <= 0:
        raise ConfigError(
            "estimator.M cannot be derived for unbounded saturation levels; set it explicitly"
        )
    return bound


def build_plan(cfg: ExperimentConfig) -> ExperimentPlan:
    m, p = cfg.experiment.m, cfg.experiment.p
    generator = build_generator(cfg.generator)
    schedule = build_schedule(cfg)
    est = cfg.estimator
    estimator = EstimatorConfig(
        D=est.D,
        M=derive_signal_bound(cfg, generator, schedule),
        sigma=cfg.noise.sigma,
        theta0=np.zeros(m) if est.theta0 is None else np.asarray(est.theta0, dtype=float),
        P0_scale=est.P0_scale,
        gain_search_radius=est.gain_search_radius,
    )
    theta = None if cfg.truth.theta is None else np.asarray(cfg.truth.theta, dtype=float)
    return ExperimentPlan(
        m=m,
        p=p,
        horizon=cfg.experiment.horizon,
        replications=cfg.experiment.replications,
        seed=cfg.experiment.seed,
        schedule=schedule,
        noise=NoiseModel(cfg.noise.sigma),
        generator=generator,
        estimator=estimator,
        theta=theta,
        entry_range=cfg.truth.entry_range,
        baselines=tuple(cfg.baselines),
        points_per_decade=cfg.output.points_per_decade,
        nls_max_iter=cfg.output.nls_max_iter,
    )


def resolved_config(cfg: ExperimentConfig, plan: ExperimentPlan) -> Dict[str, Any]:
    """The config echo, with derived values written back so it reproduces the run."""
    resolved = resolved_dict(cfg)
    resolved["estimator"]["M"] = float(plan.estimator.M)
    return resolved
