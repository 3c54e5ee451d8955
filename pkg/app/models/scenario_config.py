import hashlib
import json
from datetime import date
from pathlib import Path
from typing import List, Literal, Optional

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from app import config
from app.utils.exceptions import ConfigError, FormatVersionError

Fidelity = Literal["low", "medium", "high"]


class NetworkConfig(BaseModel):
    n_total: int = 5000  # persons, beds excluded
    seed: int = 0
    community_exponent: float = 2.5
    community_mean_degree: float = 10.0
    community_max_degree: int = 100
    hcw_fraction: float = config.HCW_FRACTION
    hcw_mean_degree: float = 10.0
    hospital_mean_degree: float = 5.0  # bed-bed
    hospital_hcw_mean_degree: float = 5.0  # per bed
    hcw_community_mean_degree: float = 5.0  # per community node
    n_beds: Optional[int] = None  # initial bed pool, grows on demand
    lambda_min: float = config.LAMBDA_MIN
    lambda_max: float = config.LAMBDA_MAX
    deactivation_rate: float = config.EDGE_DEACTIVATION_RATE

    def initial_beds(self) -> int:
        if self.n_beds is not None:
            return self.n_beds
        return max(20, int(round(0.005 * self.n_total)))


class PriorSpec(BaseModel):
    beta_mean: float = 12.0
    beta_std: float = 3.0
    beta_min: float = 1.0
    beta_max: float = 20.0
    min_period: float = 1.0  # days, lower bound for every mean duration
    latent_shape: float = 1.35
    latent_scale: float = 2.0
    infectious_shape: float = 1.1
    infectious_scale: float = 2.0
    hospital_shape: float = 1.0
    hospital_scale: float = 4.0
    initial_alpha: float = 0.0016
    initial_beta: float = 1.0


class IntegratorConfig(BaseModel):
    rtol: float = 1e-4
    atol: float = 1e-6
    max_step: float = 3 * config.HOUR
    min_step: float = 1e-9
    closure: Literal["ensemble", "mean_field"] = "ensemble"


class DAConfig(BaseModel):
    enabled: bool = True
    window: float = Field(1.0, gt=0)
    ensemble_size: int = Field(100, ge=2)
    regularization_low: Optional[float] = Field(None, ge=0)
    regularization_medium: Optional[float] = Field(None, ge=0)
    regularization_high: Optional[float] = Field(None, ge=0)
    use_noise_floor: bool = True  # delta_min = mean observation noise std
    inflation_enabled: bool = True
    inflation_a: float = Field(3.0, ge=1.0)
    inflation_b: float = Field(0.1, ge=0.0)
    pass_order: List[Fidelity] = ["low", "medium", "high"]
    spin_up_days: int = Field(8, ge=0)
    conservation_std: float = Field(1e-2, gt=0)
    observation_variance_floor: float = Field(1e-6, gt=0)
    error_rate_as: Literal["std", "variance"] = "std"
    learn_parameters: bool = True

    def regularization(self, fidelity: str) -> float:
        m = self.ensemble_size
        if fidelity == "low":
            return self.regularization_low if self.regularization_low is not None else 5.0 / m
        if fidelity == "medium":
            return self.regularization_medium if self.regularization_medium is not None else 5.0 / m
        return self.regularization_high if self.regularization_high is not None else 1.0 / m


class AssayConfig(BaseModel):
    sensitivity: float
    specificity: float

    @field_validator("sensitivity", "specificity")
    @classmethod
    def _probability(cls, v: float) -> float:
        if not 0.0 < v <= 1.0:
            raise ValueError("must lie in (0, 1]")
        return v


class TestingConfig(BaseModel):
    budget_fraction: float = Field(0.25, ge=0.0, le=1.0)
    diagnostic: AssayConfig = AssayConfig(sensitivity=config.DIAGNOSTIC_ASSAY[0], specificity=config.DIAGNOSTIC_ASSAY[1])
    sensor_fraction: float = Field(0.0, ge=0.0, le=1.0)
    sensor: AssayConfig = AssayConfig(sensitivity=config.SENSOR_ASSAY[0], specificity=config.SENSOR_ASSAY[1])
    assimilate_negative_sensors: bool = False
    serology_enabled: bool = False
    serology_budget_fraction: float = Field(0.0, ge=0.0, le=1.0)
    serology: AssayConfig = AssayConfig(sensitivity=config.SEROLOGY_ASSAY[0], specificity=config.SEROLOGY_ASSAY[1])
    status_observations: bool = True


class UserBaseConfig(BaseModel):
    fraction: float = Field(1.0, gt=0.0, le=1.0)
    topology: Literal["neighbor", "random"] = "neighbor"


class PolicyConfig(BaseModel):
    kind: Literal["none", "lockdown", "tti", "da_isolation"] = "none"
    start_date: Optional[date] = None
    lockdown_lambda_max: float = config.LOCKDOWN_LAMBDA_MAX
    isolation_lambda: float = config.ISOLATION_LAMBDA
    isolation_days: int = Field(14, ge=1)
    release_after_negative_days: int = Field(5, ge=1)
    threshold: Optional[float] = Field(None, ge=0.0, le=1.0)
    trace_min_duration_minutes: float = 15.0
    trace_lookback_days: int = Field(10, ge=1)


class ScenarioConfig(BaseModel):
    schema_version: int = config.SCENARIO_SCHEMA_VERSION
    name: str = "scenario"
    seed: int = 0
    replicas: int = Field(1, ge=1)
    workers: int = Field(1, ge=1)
    days: int = Field(60, ge=1)
    start_date: date = date(2020, 3, 5)
    initial_infectious_fraction: float = Field(0.0016, ge=0.0, le=1.0)
    network: NetworkConfig = Field(default_factory=NetworkConfig)
    network_path: Optional[str] = None
    user_base: UserBaseConfig = Field(default_factory=UserBaseConfig)
    testing: TestingConfig = Field(default_factory=TestingConfig)
    prior: PriorSpec = Field(default_factory=PriorSpec)
    da: DAConfig = Field(default_factory=DAConfig)
    integrator: IntegratorConfig = Field(default_factory=IntegratorConfig)
    policy: PolicyConfig = Field(default_factory=PolicyConfig)
    roc_dates: List[date] = [date(2020, 4, 9), date(2020, 4, 30)]
    roc_thresholds: Optional[List[float]] = None
    observation_stream: Optional[str] = None
    reference_series: Optional[str] = None
    write_event_log: bool = False

    @model_validator(mode="after")
    def _check(self):
        if self.schema_version != config.SCENARIO_SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {self.schema_version}")
        if self.policy.kind == "da_isolation" and not self.da.enabled:
            raise ValueError("policy da_isolation requires da.enabled")
        if self.roc_thresholds is not None and list(self.roc_thresholds) != sorted(self.roc_thresholds, reverse=True):
            raise ValueError("roc_thresholds must be sorted descending")
        return self

    @classmethod
    def from_file(cls, path) -> "ScenarioConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"Cannot read config {path}: {e}")
        version = raw.get("schema_version", config.SCENARIO_SCHEMA_VERSION)
        if version != config.SCENARIO_SCHEMA_VERSION:
            raise FormatVersionError(f"Unsupported schema_version {version} in {path}")
        try:
            return cls.model_validate(raw)
        except ValidationError as e:
            raise ConfigError(f"Invalid config {path}", details={"errors": e.errors(include_url=False, include_context=False)})

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()

    def day_index(self, when: date) -> int:
        return (when - self.start_date).days

    def policy_start_day(self) -> int:
        if self.policy.start_date is None:
            return self.day_index(date(2020, 3, 25)) if self.policy.kind == "lockdown" else self.da.spin_up_days
        return self.day_index(self.policy.start_date)

    def classification_threshold(self) -> float:
        """c_I, defaulting by user-base size and topology"""
        if self.policy.threshold is not None:
            return self.policy.threshold
        ub = self.user_base
        if ub.topology == "random":
            return 0.0025
        if ub.fraction >= 0.75:
            return 0.01
        return 0.005
