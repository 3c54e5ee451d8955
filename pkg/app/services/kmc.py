"""Kinetic Monte Carlo of the SEIHRD process on the time-dependent network.

Next-reaction method: every pending reaction lives in one heap keyed by its
firing time. Progressions and transmissions carry the state versions of the
nodes involved; a version bump on either node invalidates the entry lazily.
Contact starts and ends are exogenous events that open and close
transmission channels.
"""
import heapq
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np
import pandas as pd

from app import config
from app.services.network import (
    HOSPITAL_BLOCKS,
    ContactNetwork,
    EdgeSchedule,
    discharge,
    occupant_of,
    transfer_to_hospital,
)
from app.utils.exceptions import ScheduleGapError

logger = logging.getLogger(__name__)


class HealthState(IntEnum):
    S = 0
    E = 1
    I = 2
    H = 3
    R = 4
    D = 5


STATE_LABELS = tuple(s.name for s in HealthState)
TRANSMISSION = "transmission"
PROGRESSION = "progression"

# heap entry kinds, ordered for ties at equal times
_CONTACT_END, _PROGRESSION, _INFECTION, _CONTACT_START = range(4)


def age_outcome_rates(age_band: int) -> Tuple[float, float, float]:
    """(h, d, d') for an age band index"""
    if not 0 <= int(age_band) < len(config.AGE_BANDS):
        raise ValueError(f"Unknown age band {age_band}")
    band = int(age_band)
    return (
        config.HOSPITALIZATION_RATE[band],
        config.COMMUNITY_MORTALITY_RATE[band],
        config.HOSPITAL_MORTALITY_RATE[band],
    )


@dataclass
class WorldState:
    state: np.ndarray
    h: np.ndarray
    d: np.ndarray
    d_prime: np.ndarray
    beta: float = config.TRANSMISSION_RATE
    sigma: float = 1.0 / config.LATENT_PERIOD
    gamma: float = 1.0 / config.INFECTIOUS_PERIOD
    gamma_prime: float = 1.0 / config.HOSPITAL_STAY
    hospital_modifier: float = config.HOSPITAL_TRANSMISSION_MODIFIER
    t: float = 0.0
    next_time: Optional[np.ndarray] = None
    next_state: Optional[np.ndarray] = None
    version: Optional[np.ndarray] = None
    cumulative_infections: int = 0
    cumulative_hospitalizations: int = 0
    cumulative_deaths: int = 0
    initial_infectious: int = 0

    def __post_init__(self):
        n = self.state.size
        if self.next_time is None:
            self.next_time = np.full(n, np.inf)
        if self.next_state is None:
            self.next_state = np.full(n, -1, dtype=np.int8)
        if self.version is None:
            self.version = np.zeros(n, dtype=np.int64)

    @property
    def n(self) -> int:
        return int(self.state.size)

    def counts(self) -> np.ndarray:
        return np.bincount(self.state, minlength=len(HealthState))

    def indicator(self, health_state: HealthState) -> np.ndarray:
        return (self.state == health_state).astype(float)


@dataclass
class EventLog:
    time: List[float] = field(default_factory=list)
    node: List[int] = field(default_factory=list)
    from_state: List[int] = field(default_factory=list)
    to_state: List[int] = field(default_factory=list)
    cause: List[str] = field(default_factory=list)
    source: List[int] = field(default_factory=list)

    def append(self, t: float, node: int, old: int, new: int, cause: str, source: int = -1):
        self.time.append(t)
        self.node.append(node)
        self.from_state.append(old)
        self.to_state.append(new)
        self.cause.append(cause)
        self.source.append(source)

    def extend(self, other: "EventLog"):
        for name in ("time", "node", "from_state", "to_state", "cause", "source"):
            getattr(self, name).extend(getattr(other, name))

    def __len__(self) -> int:
        return len(self.time)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "time": np.asarray(self.time, dtype=float),
                "node": np.asarray(self.node, dtype=np.int64),
                "from": [STATE_LABELS[s] for s in self.from_state],
                "to": [STATE_LABELS[s] for s in self.to_state],
                "cause": self.cause,
            }
        )

    def to_csv(self, path):
        self.to_frame().to_csv(path, index=False)


def _schedule_progression(world: WorldState, node: int, t: float, rng: np.random.Generator):
    s = world.state[node]
    if s == HealthState.E:
        world.next_time[node] = t + rng.exponential(1.0 / world.sigma)
        world.next_state[node] = HealthState.I
    elif s == HealthState.I:
        world.next_time[node] = t + rng.exponential(1.0 / world.gamma)
        h, d = world.h[node], world.d[node]
        world.next_state[node] = rng.choice(
            (HealthState.H, HealthState.R, HealthState.D), p=(h, 1.0 - h - d, d)
        )
    elif s == HealthState.H:
        world.next_time[node] = t + rng.exponential(1.0 / world.gamma_prime)
        world.next_state[node] = HealthState.D if rng.random() < world.d_prime[node] else HealthState.R
    else:
        world.next_time[node] = np.inf
        world.next_state[node] = -1


def seed_state(
    world: WorldState,
    network: ContactNetwork,
    nodes: Iterable[int],
    health_state: HealthState,
    rng: np.random.Generator,
):
    """Put nodes into a state at the current clock and schedule their progression"""
    for node in nodes:
        node = int(node)
        world.state[node] = health_state
        world.version[node] += 1
        if health_state == HealthState.H and network.bed_of[node] < 0:
            transfer_to_hospital(network, node, world.t)
        _schedule_progression(world, node, world.t, rng)


def init_world(network: ContactNetwork, initial_infectious_fraction: float, rng: np.random.Generator) -> WorldState:
    if not 0.0 <= initial_infectious_fraction <= 1.0:
        raise ValueError("initial_infectious_fraction must lie in [0, 1]")
    n = network.n_persons
    rates = np.array([age_outcome_rates(b) for b in range(len(config.AGE_BANDS))])
    bands = network.age_band[:n].astype(np.int64)
    world = WorldState(
        state=np.zeros(n, dtype=np.int8),
        h=rates[bands, 0],
        d=rates[bands, 1],
        d_prime=rates[bands, 2],
    )
    k = int(round(initial_infectious_fraction * n))
    chosen = np.sort(rng.choice(n, size=k, replace=False))
    seed_state(world, network, chosen, HealthState.I, rng)
    world.initial_infectious = k
    logger.info(f"Initialized world: {n} persons, {k} initially infectious")
    return world


class KineticMonteCarlo:
    """Advances one world through a stretch of contact schedules"""

    def __init__(self, world: WorldState, network: ContactNetwork, rng: np.random.Generator):
        self.world = world
        self.network = network
        self.rng = rng
        self.queue: List[tuple] = []
        self.counter = 0
        self.active: Dict[int, Set[int]] = defaultdict(set)
        self.log = EventLog()

    def _push(self, t: float, kind: int, *payload):
        self.counter += 1
        heapq.heappush(self.queue, (t, kind, self.counter) + payload)

    def _load_contacts(self, schedules: Sequence[EdgeSchedule], t0: float, t1: float):
        by_day = {s.day: s for s in schedules}
        parts = []
        for day in range(math.floor(t0), math.ceil(t1)):
            if day not in by_day:
                raise ScheduleGapError(f"No contact schedule for day {day}", details={"day": day})
            s = by_day[day]
            keep = (s.end > t0) & (s.start < t1)
            parts.append((s.edge[keep], np.maximum(s.start[keep], t0), np.minimum(s.end[keep], t1)))
        edge = np.concatenate([p[0] for p in parts]).astype(np.int64)
        self.cu = self.network.edges[edge, 0]
        self.cv = self.network.edges[edge, 1]
        self.c_end = np.concatenate([p[2] for p in parts])
        starts = np.concatenate([p[1] for p in parts])
        in_hospital = np.isin(self.network.edge_block[edge], HOSPITAL_BLOCKS)
        self.modifier = np.where(in_hospital, self.world.hospital_modifier, 1.0)

        entries = []
        for c in range(edge.size):
            entries.append((starts[c], _CONTACT_START, c, c))
            entries.append((self.c_end[c], _CONTACT_END, c, c))
        base = self.counter
        self.queue.extend((t, kind, base + seq, c) for seq, (t, kind, c, _) in enumerate(entries))
        self.counter = base + len(entries)
        heapq.heapify(self.queue)

    def _open_channels(self, c: int, t: float):
        world = self.world
        p = occupant_of(self.network, int(self.cu[c]))
        q = occupant_of(self.network, int(self.cv[c]))
        if p < 0 or q < 0:
            return
        for target, source in ((p, q), (q, p)):
            if world.state[target] != HealthState.S:
                continue
            if world.state[source] not in (HealthState.I, HealthState.H):
                continue
            rate = self.modifier[c] * world.beta
            tau = t + self.rng.exponential(1.0 / rate)
            if tau < self.c_end[c]:
                self._push(tau, _INFECTION, target, source, int(world.version[target]), int(world.version[source]), c)

    def _open_for_node(self, static_node: int, t: float):
        for c in sorted(self.active.get(static_node, ())):
            self._open_channels(c, t)

    def _transition(self, node: int, new: int, t: float, cause: str, source: int = -1):
        world = self.world
        old = int(world.state[node])
        world.state[node] = new
        world.version[node] += 1
        self.log.append(t, node, old, int(new), cause, source)
        if new == HealthState.E:
            world.cumulative_infections += 1
        elif new == HealthState.H:
            world.cumulative_hospitalizations += 1
        elif new == HealthState.D:
            world.cumulative_deaths += 1

        if old == HealthState.H:
            discharge(self.network, node, t)
        _schedule_progression(world, node, t, self.rng)
        if np.isfinite(world.next_time[node]):
            self._push(world.next_time[node], _PROGRESSION, node, int(world.version[node]))

        if new == HealthState.I:
            self._open_for_node(node, t)
        elif new == HealthState.H:
            bed = transfer_to_hospital(self.network, node, t)
            self._open_for_node(bed, t)

    def run(self, schedules: Sequence[EdgeSchedule], t_end: float) -> EventLog:
        world = self.world
        t0 = world.t
        if t_end <= t0:
            return self.log
        self._load_contacts(schedules, t0, t_end)
        pending = np.flatnonzero(np.isfinite(world.next_time))
        for node in pending:
            self._push(world.next_time[node], _PROGRESSION, int(node), int(world.version[node]))

        while self.queue:
            entry = heapq.heappop(self.queue)
            t, kind = entry[0], entry[1]
            if t >= t_end:
                break
            if kind == _CONTACT_START:
                c = entry[3]
                self.active[int(self.cu[c])].add(c)
                self.active[int(self.cv[c])].add(c)
                self._open_channels(c, t)
            elif kind == _CONTACT_END:
                c = entry[3]
                self.active[int(self.cu[c])].discard(c)
                self.active[int(self.cv[c])].discard(c)
            elif kind == _PROGRESSION:
                node, version = entry[3], entry[4]
                if world.version[node] == version:
                    self._transition(node, int(world.next_state[node]), t, PROGRESSION)
            else:
                target, source, v_target, v_source, c = entry[3:]
                if world.version[target] != v_target or world.version[source] != v_source:
                    continue
                if c not in self.active[int(self.cu[c])]:
                    continue
                ends = {occupant_of(self.network, int(self.cu[c])), occupant_of(self.network, int(self.cv[c]))}
                if ends != {target, source}:
                    continue
                self._transition(target, HealthState.E, t, TRANSMISSION, source)

        world.t = float(t_end)
        return self.log


def run_kmc(
    world: WorldState,
    network: ContactNetwork,
    schedules: Sequence[EdgeSchedule],
    t_end: float,
    rng: np.random.Generator,
) -> Tuple[WorldState, EventLog]:
    engine = KineticMonteCarlo(world, network, rng)
    log = engine.run(schedules, t_end)
    logger.debug(f"KMC advanced to t={t_end:.3f}: {len(log)} events, counts={world.counts().tolist()}")
    return world, log


def daily_aggregates(log: EventLog, n_persons: int, prevalence: Sequence[float], start_day: int = 0) -> pd.DataFrame:
    """Daily new infections, hospitalizations and deaths plus prevalence, per 100,000"""
    n_days = len(prevalence)
    frame = log.to_frame()
    day = np.floor(frame["time"].to_numpy()).astype(np.int64) - start_day
    inside = (day >= 0) & (day < n_days)

    def per_day(label: str) -> np.ndarray:
        mask = inside & (frame["to"].to_numpy() == label)
        return np.bincount(day[mask], minlength=n_days)[:n_days]

    scale = config.PER_100K / n_persons
    out = pd.DataFrame(
        {
            "day": np.arange(start_day, start_day + n_days),
            "new_infections": per_day("E") * scale,
            "new_hospitalizations": per_day("H") * scale,
            "new_deaths": per_day("D") * scale,
            "prevalence": np.asarray(prevalence, dtype=float) * config.PER_100K,
        }
    )
    for column in ("new_infections", "new_hospitalizations", "new_deaths"):
        out[f"{column}_7d"] = out[column].rolling(7, min_periods=1).mean()
    return out
