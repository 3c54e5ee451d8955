"""Contact interventions: lockdown, test-trace-isolate and risk-based isolation.

Decisions taken at the end of day d change contact-rate bounds for the
schedule of day d + 1. The ledger stores per-node isolation intervals as
half-open day ranges [start, end).
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from app.models.scenario_config import PolicyConfig
from app.services.network import ContactNetwork, apply_contact_bounds, restore_contact_bounds
from app.services.user_base import UserBase
from app.utils.exceptions import PolicyConflictError

logger = logging.getLogger(__name__)


@dataclass
class IsolationLedger:
    intervals: Dict[int, List[List[Optional[int]]]] = field(default_factory=dict)

    def is_isolated(self, node: int) -> bool:
        spans = self.intervals.get(node)
        return bool(spans) and spans[-1][1] is None

    def open(self, node: int, day: int):
        if self.is_isolated(node):
            return
        self.intervals.setdefault(node, []).append([day, None])

    def close(self, node: int, day: int):
        if self.is_isolated(node):
            self.intervals[node][-1][1] = day

    def isolated_nodes(self) -> List[int]:
        return sorted(n for n in self.intervals if self.is_isolated(n))

    def durations(self, end_day: int) -> np.ndarray:
        out = [(end if end is not None else end_day) - start for spans in self.intervals.values() for start, end in spans]
        return np.asarray(out, dtype=float)

    def to_frame(self, end_day: Optional[int] = None) -> pd.DataFrame:
        rows = [
            (node, start, end if end is not None else end_day)
            for node in sorted(self.intervals)
            for start, end in self.intervals[node]
        ]
        return pd.DataFrame(rows, columns=["node", "start_day", "end_day"])


@dataclass
class PolicyState:
    policy: PolicyConfig
    start_day: int
    community: np.ndarray
    ledger: IsolationLedger = field(default_factory=IsolationLedger)
    negative_days: Dict[int, int] = field(default_factory=dict)
    release_day: Dict[int, int] = field(default_factory=dict)
    lockdown_active: bool = False
    active_kind: str = "none"

    def register(self, kind: str):
        if kind == "none":
            return
        if self.active_kind not in ("none", kind):
            raise PolicyConflictError(f"Policy {kind} conflicts with active policy {self.active_kind}")
        self.active_kind = kind

    @classmethod
    def create(cls, policy: PolicyConfig, network: ContactNetwork, start_day: int) -> "PolicyState":
        state = cls(policy=policy, start_day=start_day, community=network.community_ids)
        state.register(policy.kind)
        return state


def _isolate(network: ContactNetwork, state: PolicyState, nodes: np.ndarray, day: int):
    if nodes.size == 0:
        return
    lam = state.policy.isolation_lambda
    apply_contact_bounds(network, nodes.tolist(), lam, lam)
    for node in nodes.tolist():
        state.ledger.open(node, day)


def _release(network: ContactNetwork, state: PolicyState, nodes: List[int], day: int):
    if not nodes:
        return
    restore_contact_bounds(network, nodes)
    for node in nodes:
        state.ledger.close(node, day)
        state.negative_days.pop(node, None)
        state.release_day.pop(node, None)


def begin_day(network: ContactNetwork, state: PolicyState, day: int):
    """Changes that take effect at the start of a day, before its schedule is sampled"""
    policy = state.policy
    if policy.kind == "lockdown" and not state.lockdown_active and day >= state.start_day:
        apply_contact_bounds(
            network, state.community.tolist(), network.params.lambda_min, policy.lockdown_lambda_max
        )
        state.lockdown_active = True
        logger.info(f"Day {day}: lockdown active, community lambda_max={policy.lockdown_lambda_max}")
    if policy.kind == "tti":
        expired = sorted(n for n, d in state.release_day.items() if d <= day)
        _release(network, state, expired, day)


def apply_policy(
    network: ContactNetwork,
    state: PolicyState,
    user_base: UserBase,
    day: int,
    flagged: Optional[np.ndarray] = None,
    notified: Optional[np.ndarray] = None,
) -> Dict[str, int]:
    """End-of-day decisions.

    flagged is a per-user boolean array from the risk classifier; notified
    holds user indices of positive-tested users and their traced contacts.
    """
    policy = state.policy
    effective = day + 1
    summary = {"isolated": 0, "released": 0}
    if effective < state.start_day:
        return summary

    if policy.kind == "da_isolation" and flagged is not None:
        flagged_nodes = set(user_base.nodes[np.asarray(flagged, dtype=bool)].tolist())
        released = []
        for node in state.ledger.isolated_nodes():
            if node in flagged_nodes:
                state.negative_days[node] = 0
                continue
            state.negative_days[node] = state.negative_days.get(node, 0) + 1
            if state.negative_days[node] >= policy.release_after_negative_days:
                released.append(node)
        _release(network, state, released, effective)
        fresh = np.array(sorted(n for n in flagged_nodes if not state.ledger.is_isolated(n)), dtype=np.int64)
        _isolate(network, state, fresh, effective)
        for node in fresh.tolist():
            state.negative_days[node] = 0
        summary = {"isolated": int(fresh.size), "released": len(released)}

    elif policy.kind == "tti" and notified is not None:
        nodes = np.unique(user_base.nodes[np.asarray(notified, dtype=np.int64)])
        fresh = np.array([n for n in nodes.tolist() if not state.ledger.is_isolated(n)], dtype=np.int64)
        _isolate(network, state, fresh, effective)
        for node in nodes.tolist():
            state.release_day[node] = effective + policy.isolation_days
        summary = {"isolated": int(fresh.size), "released": 0}

    if summary["isolated"] or summary["released"]:
        logger.debug(f"Day {day}: {summary['isolated']} isolated, {summary['released']} released")
    return summary


def isolated_fraction(state: PolicyState, n_persons: int) -> float:
    return len(state.ledger.isolated_nodes()) / n_persons


def duration_quantiles(state: PolicyState, end_day: int, quantiles=(0.5, 0.9, 0.99)) -> Dict[str, float]:
    durations = state.ledger.durations(end_day)
    if durations.size == 0:
        return {f"q{int(q * 100)}": 0.0 for q in quantiles}
    return {f"q{int(q * 100)}": float(np.quantile(durations, q)) for q in quantiles}
