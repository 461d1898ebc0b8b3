import hashlib
import json
import math
import os
from typing import Any, Dict, List, Literal, Optional, Sequence, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .domain.censoring import Thresholds
from .errors import ConfigError

# Default configuration values
DEFAULT_LOG_LEVEL = "WARNING"
DEFAULT_RESULTS_DIR = "results"
DEFAULT_THREADS = "auto"
DEFAULT_BENCH_FLOOR = "20000"
DEFAULT_BENCH_STEPS = "2000"

# Environment variable names
ENV_LOG_LEVEL = "LOG_LEVEL"
ENV_RESULTS_DIR = "RESULTS_DIR"
ENV_THREADS = "THREADS"
ENV_BENCH_FLOOR = "BENCH_FLOOR"
ENV_BENCH_STEPS = "BENCH_STEPS"

THREADS_AUTO = "auto"

# Override syntax: section.key=value
OVERRIDE_ASSIGN = "="
OVERRIDE_PATH_SEPARATOR = "."

LOG_LEVEL = os.getenv(ENV_LOG_LEVEL, DEFAULT_LOG_LEVEL).upper()
RESULTS_DIR = os.getenv(ENV_RESULTS_DIR, DEFAULT_RESULTS_DIR)
THREADS = os.getenv(ENV_THREADS, DEFAULT_THREADS)
BENCH_FLOOR = float(os.getenv(ENV_BENCH_FLOOR, DEFAULT_BENCH_FLOOR))
BENCH_STEPS = int(os.getenv(ENV_BENCH_STEPS, DEFAULT_BENCH_STEPS))


def parse_threads(value: Union[str, int, None]) -> Optional[int]:
    """'auto' (or 0) -> None, meaning one worker per CPU."""
    if value is None or str(value).strip().lower() in (THREADS_AUTO, "0", ""):
        return None
    try:
        threads = int(value)
    except ValueError as exc:
        raise ConfigError(f"threads must be a positive integer or 'auto', got {value!r}") from exc
    if threads < 0:
        raise ConfigError(f"threads must be a positive integer or 'auto', got {value!r}")
    return threads


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ExperimentSection(_Section):
    m: int = Field(gt=0, description="parameter dimension")
    p: int = Field(default=1, gt=0, description="number of output columns")
    horizon: int = Field(gt=0, description="number of updates n")
    replications: int = Field(gt=0, description="Monte Carlo replications R")
    seed: int = Field(default=0, ge=0)


class NoiseSection(_Section):
    sigma: float = Field(default=1.0, gt=0)


class ThresholdsSection(_Section):
    l: float = -math.inf
    u: float = math.inf
    L: float = -math.inf
    U: float = math.inf

    @model_validator(mode="after")
    def check_geometry(self):
        try:
            Thresholds(self.l, self.u, self.L, self.U)
        except ConfigError as exc:
            raise ValueError(str(exc)) from exc
        return self

    def to_domain(self) -> Thresholds:
        return Thresholds(self.l, self.u, self.L, self.U)


class GeneratorSection(_Section):
    kind: Literal["feedback-dynamical", "iid-bounded", "deterministic-sequence"] = "iid-bounded"
    amplitude: float = Field(default=1.0, gt=0)
    intercept: Optional[float] = None


class TruthSection(_Section):
    theta: Optional[List[List[float]]] = Field(default=None, description="m x p true parameter")
    entry_range: float = Field(default=1.0, gt=0)


class EstimatorSection(_Section):
    D: float = Field(default=2.0, gt=0)
    M: Optional[float] = Field(default=None, gt=0, description="regressor norm bound; derived when omitted")
    P0_scale: float = Field(default=100.0, gt=0)
    gain_search_radius: Optional[float] = Field(default=None, gt=0)
    theta0: Optional[List[float]] = None


class OutputSection(_Section):
    points_per_decade: int = Field(default=50, gt=0)
    nls_max_iter: int = Field(default=200, gt=0)


class ExperimentConfig(_Section):
    experiment: ExperimentSection
    noise: NoiseSection = NoiseSection()
    thresholds: Union[ThresholdsSection, List[ThresholdsSection]] = ThresholdsSection()
    generator: GeneratorSection = GeneratorSection()
    truth: TruthSection = TruthSection()
    estimator: EstimatorSection = EstimatorSection()
    baselines: List[Literal["step1-only", "nls"]] = Field(default_factory=list)
    output: OutputSection = OutputSection()

    @field_validator("thresholds")
    @classmethod
    def non_empty_schedule(cls, v):
        if isinstance(v, list) and not v:
            raise ValueError("a threshold schedule needs at least one entry")
        return v

    @model_validator(mode="after")
    def check_shapes(self):
        m, p = self.experiment.m, self.experiment.p
        if self.generator.kind == "feedback-dynamical" and m != p:
            raise ValueError(f"the feedback system needs p == m, got m={m}, p={p}")
        theta = self.truth.theta
        if theta is not None and (len(theta) != m or any(len(row) != p for row in theta)):
            raise ValueError(f"truth.theta must be an {m} x {p} matrix")
        theta0 = self.estimator.theta0
        if theta0 is not None and len(theta0) != m:
            raise ValueError(f"estimator.theta0 must have {m} entries")
        if len(set(self.baselines)) != len(self.baselines):
            raise ValueError("baselines must not repeat")
        return self

    def threshold_entries(self) -> List[ThresholdsSection]:
        return self.thresholds if isinstance(self.thresholds, list) else [self.thresholds]


def _format_validation_error(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        where = OVERRIDE_PATH_SEPARATOR.join(str(p) for p in err["loc"]) or "config"
        parts.append(f"{where}: {err['msg']}")
    return "; ".join(parts)


def parse_override(text: str):
    """'section.key=value' -> (['section', 'key'], value parsed as YAML)."""
    if OVERRIDE_ASSIGN not in text:
        raise ConfigError(f"override {text!r} is not of the form section.key=value")
    path, raw = text.split(OVERRIDE_ASSIGN, 1)
    keys = [k for k in path.strip().split(OVERRIDE_PATH_SEPARATOR) if k]
    if not keys:
        raise ConfigError(f"override {text!r} has an empty key")
    try:
        value = yaml.safe_load(raw) if raw.strip() else None
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {text!r}: value is not valid YAML ({exc})") from exc
    return keys, value


def apply_overrides(data: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    for text in overrides:
        keys, value = parse_override(text)
        node = data
        for depth, key in enumerate(keys[:-1]):
            child = node.get(key)
            if child is None:
                child = node[key] = {}
            if not isinstance(child, dict):
                where = OVERRIDE_PATH_SEPARATOR.join(keys[: depth + 1])
                raise ConfigError(f"override {text!r}: {where} is not a section")
            node = child
        node[keys[-1]] = value
    return data


def load_yaml_text(text: str, source: str = "<config>") -> Dict[str, Any]:
    try:
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        where = f"line {mark.line + 1}, column {mark.column + 1}" if mark is not None else "unknown position"
        raise ConfigError(f"{source}: YAML parse error at {where}: {exc.problem}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{source}: YAML parse error: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping of sections")
    return data


def validate_config(data: Dict[str, Any]) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_validation_error(exc)) from exc


def load_experiment_config(path: str, overrides: Sequence[str] = ()) -> ExperimentConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return validate_config(apply_overrides(load_yaml_text(text, path), overrides))


def resolved_dict(cfg: ExperimentConfig) -> Dict[str, Any]:
    return cfg.model_dump(mode="python")


def config_hash(resolved: Dict[str, Any]) -> str:
    canonical = json.dumps(resolved, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()
