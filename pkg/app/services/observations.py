"""Synthetic observations drawn from the surrogate world.

Every datum is mapped to an observed probability for the risk model: a
positive test becomes PPV, a negative one FOR, status data are exact
indicators. Records are kept columnar; ObservationRecord is the row view.
"""
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterator, List, Optional, Sequence

import numpy as np
import pandas as pd

from app import config
from app.models.scenario_config import AssayConfig
from app.services.kmc import HealthState

logger = logging.getLogger(__name__)


class ObservationKind(str, Enum):
    TEST_POSITIVE = "test_positive"
    TEST_NEGATIVE = "test_negative"
    SENSOR_POSITIVE = "sensor_positive"
    SENSOR_NEGATIVE = "sensor_negative"
    HOSPITALIZED = "hospitalized"
    NOT_HOSPITALIZED = "not_hospitalized"
    DECEASED = "deceased"
    ALIVE = "alive"
    SEROLOGY_POSITIVE = "serology_positive"
    SEROLOGY_NEGATIVE = "serology_negative"


FIDELITY = {
    ObservationKind.SENSOR_POSITIVE: "low",
    ObservationKind.SENSOR_NEGATIVE: "low",
    ObservationKind.TEST_POSITIVE: "medium",
    ObservationKind.TEST_NEGATIVE: "medium",
    ObservationKind.SEROLOGY_POSITIVE: "medium",
    ObservationKind.SEROLOGY_NEGATIVE: "medium",
    ObservationKind.HOSPITALIZED: "high",
    ObservationKind.NOT_HOSPITALIZED: "high",
    ObservationKind.DECEASED: "high",
    ObservationKind.ALIVE: "high",
}

# state index observed by each kind
TARGET_STATE = {
    ObservationKind.SENSOR_POSITIVE: HealthState.I,
    ObservationKind.SENSOR_NEGATIVE: HealthState.I,
    ObservationKind.TEST_POSITIVE: HealthState.I,
    ObservationKind.TEST_NEGATIVE: HealthState.I,
    ObservationKind.SEROLOGY_POSITIVE: HealthState.R,
    ObservationKind.SEROLOGY_NEGATIVE: HealthState.R,
    ObservationKind.HOSPITALIZED: HealthState.H,
    ObservationKind.NOT_HOSPITALIZED: HealthState.H,
    ObservationKind.DECEASED: HealthState.D,
    ObservationKind.ALIVE: HealthState.D,
}

COLUMNS = ["day", "node", "kind", "value", "error_rate", "fidelity"]


@dataclass(frozen=True)
class AssaySpec:
    sensitivity: float
    specificity: float

    def __post_init__(self):
        for name in ("sensitivity", "specificity"):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {value}")

    @classmethod
    def from_config(cls, assay: AssayConfig) -> "AssaySpec":
        return cls(assay.sensitivity, assay.specificity)


DIAGNOSTIC_TEST = AssaySpec(*config.DIAGNOSTIC_ASSAY)
TEMPERATURE_SENSOR = AssaySpec(*config.SENSOR_ASSAY)
SEROLOGY_TEST = AssaySpec(*config.SEROLOGY_ASSAY)


def _check_prevalence(prevalence: float):
    if not 0.0 < prevalence <= 1.0:
        raise ValueError(f"prevalence must lie in (0, 1], got {prevalence}")


def ppv(assay: AssaySpec, prevalence: float) -> float:
    _check_prevalence(prevalence)
    tp = assay.sensitivity * prevalence
    return tp / (tp + (1.0 - assay.specificity) * (1.0 - prevalence))


def for_rate(assay: AssaySpec, prevalence: float) -> float:
    _check_prevalence(prevalence)
    fn = (1.0 - assay.sensitivity) * prevalence
    return fn / (fn + assay.specificity * (1.0 - prevalence))


@dataclass(frozen=True)
class ObservationRecord:
    node: int
    time: float
    kind: ObservationKind
    observed_value: float
    error_rate: float

    @property
    def fidelity_class(self) -> str:
        return FIDELITY[self.kind]

    @property
    def day(self) -> int:
        return int(np.ceil(self.time)) - 1


@dataclass
class ObservationSet:
    day: np.ndarray
    node: np.ndarray
    kind: np.ndarray
    value: np.ndarray
    error_rate: np.ndarray

    @classmethod
    def empty(cls) -> "ObservationSet":
        return cls(
            np.empty(0, dtype=np.int64),
            np.empty(0, dtype=np.int64),
            np.empty(0, dtype=object),
            np.empty(0),
            np.empty(0),
        )

    @classmethod
    def build(cls, day: int, nodes, kinds, values, errors) -> "ObservationSet":
        nodes = np.asarray(nodes, dtype=np.int64)
        return cls(
            np.full(nodes.size, int(day), dtype=np.int64),
            nodes,
            np.asarray([ObservationKind(k).value for k in kinds], dtype=object),
            np.asarray(values, dtype=float),
            np.asarray(errors, dtype=float),
        )

    @classmethod
    def concat(cls, parts: Sequence["ObservationSet"]) -> "ObservationSet":
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls.empty()
        return cls(*(np.concatenate([getattr(p, f) for p in parts]) for f in ("day", "node", "kind", "value", "error_rate")))

    def __len__(self) -> int:
        return int(self.node.size)

    @property
    def time(self) -> np.ndarray:
        return self.day + 1.0

    @property
    def fidelity(self) -> np.ndarray:
        return np.asarray([FIDELITY[ObservationKind(k)] for k in self.kind], dtype=object)

    def subset(self, mask: np.ndarray) -> "ObservationSet":
        return ObservationSet(self.day[mask], self.node[mask], self.kind[mask], self.value[mask], self.error_rate[mask])

    def select(self, fidelity: Optional[str] = None, day: Optional[int] = None, kinds: Sequence[str] = ()) -> "ObservationSet":
        mask = np.ones(len(self), dtype=bool)
        if fidelity is not None:
            mask &= self.fidelity == fidelity
        if day is not None:
            mask &= self.day == day
        if kinds:
            mask &= np.isin(self.kind, [ObservationKind(k).value for k in kinds])
        return self.subset(mask)

    def records(self) -> Iterator[ObservationRecord]:
        for k in range(len(self)):
            yield ObservationRecord(
                node=int(self.node[k]),
                time=float(self.day[k] + 1),
                kind=ObservationKind(self.kind[k]),
                observed_value=float(self.value[k]),
                error_rate=float(self.error_rate[k]),
            )

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "day": self.day,
                "node": self.node,
                "kind": self.kind.astype(str),
                "value": self.value,
                "error_rate": self.error_rate,
                "fidelity": self.fidelity.astype(str),
            },
            columns=COLUMNS,
        )

    def to_csv(self, path, append: bool = False):
        path = Path(path)
        header = not (append and path.exists())
        self.to_frame().to_csv(path, mode="a" if append else "w", header=header, index=False)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "ObservationSet":
        missing = set(COLUMNS) - set(frame.columns)
        if missing:
            raise ValueError(f"observation stream lacks columns {sorted(missing)}")
        return cls(
            frame["day"].to_numpy(dtype=np.int64),
            frame["node"].to_numpy(dtype=np.int64),
            np.asarray([ObservationKind(k).value for k in frame["kind"]], dtype=object),
            frame["value"].to_numpy(dtype=float),
            frame["error_rate"].to_numpy(dtype=float),
        )

    @classmethod
    def from_csv(cls, path) -> "ObservationSet":
        return cls.from_frame(pd.read_csv(path))


def _states(world) -> np.ndarray:
    return world.state if hasattr(world, "state") else np.asarray(world)


def administer_tests(
    world,
    user_nodes: np.ndarray,
    budget: int,
    assay: AssaySpec,
    prevalence: float,
    day: int,
    rng: np.random.Generator,
) -> ObservationSet:
    """Random daily testing of living users"""
    states = _states(world)
    users = np.asarray(user_nodes, dtype=np.int64)
    if budget > users.size:
        raise ValueError(f"test budget {budget} exceeds user count {users.size}")
    eligible = users[states[users] != HealthState.D]
    budget = min(int(budget), eligible.size)
    if budget <= 0:
        return ObservationSet.empty()
    tested = np.sort(rng.choice(eligible, size=budget, replace=False))
    infected = np.isin(states[tested], (HealthState.I, HealthState.H))
    p_positive = np.where(infected, assay.sensitivity, 1.0 - assay.specificity)
    positive = rng.random(budget) < p_positive
    pos_value, neg_value = ppv(assay, prevalence), for_rate(assay, prevalence)
    return ObservationSet.build(
        day,
        tested,
        np.where(positive, ObservationKind.TEST_POSITIVE.value, ObservationKind.TEST_NEGATIVE.value),
        np.where(positive, pos_value, neg_value),
        np.where(positive, 1.0 - pos_value, neg_value),
    )


def sensor_readings(
    world,
    participants: np.ndarray,
    assay: AssaySpec,
    prevalence: float,
    day: int,
    rng: np.random.Generator,
    include_negative: bool = False,
) -> ObservationSet:
    states = _states(world)
    nodes = np.asarray(participants, dtype=np.int64)
    nodes = nodes[(states[nodes] != HealthState.D) & (states[nodes] != HealthState.H)]
    if nodes.size == 0:
        return ObservationSet.empty()
    infected = states[nodes] == HealthState.I
    positive = rng.random(nodes.size) < np.where(infected, assay.sensitivity, 1.0 - assay.specificity)
    if not include_negative:
        nodes, positive = nodes[positive], positive[positive]
    pos_value, neg_value = ppv(assay, prevalence), for_rate(assay, prevalence)
    return ObservationSet.build(
        day,
        nodes,
        np.where(positive, ObservationKind.SENSOR_POSITIVE.value, ObservationKind.SENSOR_NEGATIVE.value),
        np.where(positive, pos_value, neg_value),
        np.where(positive, 1.0 - pos_value, neg_value),
    )


def serology_tests(
    world,
    user_nodes: np.ndarray,
    budget: int,
    assay: AssaySpec,
    resistant_prevalence: float,
    day: int,
    rng: np.random.Generator,
) -> ObservationSet:
    """Antibody tests mapped onto the R probability"""
    states = _states(world)
    users = np.asarray(user_nodes, dtype=np.int64)
    eligible = users[states[users] != HealthState.D]
    budget = min(int(budget), eligible.size)
    if budget <= 0:
        return ObservationSet.empty()
    tested = np.sort(rng.choice(eligible, size=budget, replace=False))
    immune = states[tested] == HealthState.R
    positive = rng.random(budget) < np.where(immune, assay.sensitivity, 1.0 - assay.specificity)
    pos_value, neg_value = ppv(assay, resistant_prevalence), for_rate(assay, resistant_prevalence)
    return ObservationSet.build(
        day,
        tested,
        np.where(positive, ObservationKind.SEROLOGY_POSITIVE.value, ObservationKind.SEROLOGY_NEGATIVE.value),
        np.where(positive, pos_value, neg_value),
        np.where(positive, 1.0 - pos_value, neg_value),
    )


def status_observations(world, user_nodes: np.ndarray, day: int) -> ObservationSet:
    """Exact hospitalization and death indicators for every user"""
    states = _states(world)
    users = np.asarray(user_nodes, dtype=np.int64)
    hospitalized = states[users] == HealthState.H
    deceased = states[users] == HealthState.D
    nodes = np.r_[users, users]
    kinds = np.r_[
        np.where(hospitalized, ObservationKind.HOSPITALIZED.value, ObservationKind.NOT_HOSPITALIZED.value),
        np.where(deceased, ObservationKind.DECEASED.value, ObservationKind.ALIVE.value),
    ]
    values = np.r_[hospitalized, deceased].astype(float)
    return ObservationSet.build(day, nodes, kinds, values, np.zeros(nodes.size))
