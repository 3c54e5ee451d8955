import numpy as np
import pytest

from app.models.scenario_config import PolicyConfig
from app.services.interventions import (
    IsolationLedger,
    PolicyState,
    apply_policy,
    begin_day,
    duration_quantiles,
    isolated_fraction,
)
from app.services.user_base import select_user_base
from app.utils.exceptions import PolicyConflictError
from app.utils.rng import make_rng


@pytest.fixture
def everyone(small_network):
    return select_user_base(small_network, 1.0, "neighbor", make_rng(0, "users"))


def _flags(n, *users):
    flags = np.zeros(n, dtype=bool)
    flags[list(users)] = True
    return flags


def test_risk_isolation_releases_after_negative_days(small_network, everyone):
    state = PolicyState.create(PolicyConfig(kind="da_isolation"), small_network, start_day=0)
    n = everyone.size
    summary = apply_policy(small_network, state, everyone, 0, flagged=_flags(n, 20))
    assert summary == {"isolated": 1, "released": 0}
    assert small_network.lambda_max[20] == 4.0 and small_network.lambda_min[20] == 4.0
    for day in range(1, 5):
        apply_policy(small_network, state, everyone, day, flagged=_flags(n))
        assert state.ledger.is_isolated(20)
    summary = apply_policy(small_network, state, everyone, 5, flagged=_flags(n))
    assert summary["released"] == 1
    assert not state.ledger.is_isolated(20)
    assert small_network.lambda_max[20] == 84.0
    assert state.ledger.intervals[20] == [[1, 6]]


def test_reflagging_resets_the_negative_count(small_network, everyone):
    state = PolicyState.create(PolicyConfig(kind="da_isolation"), small_network, start_day=0)
    n = everyone.size
    apply_policy(small_network, state, everyone, 0, flagged=_flags(n, 30))
    for day in range(1, 4):
        apply_policy(small_network, state, everyone, day, flagged=_flags(n))
    apply_policy(small_network, state, everyone, 4, flagged=_flags(n, 30))
    assert state.negative_days[30] == 0
    apply_policy(small_network, state, everyone, 8, flagged=_flags(n))
    assert state.ledger.is_isolated(30)


def test_nothing_happens_before_policy_start(small_network, everyone):
    state = PolicyState.create(PolicyConfig(kind="da_isolation"), small_network, start_day=5)
    summary = apply_policy(small_network, state, everyone, 2, flagged=_flags(everyone.size, 40))
    assert summary == {"isolated": 0, "released": 0}
    assert state.ledger.isolated_nodes() == []


def test_lockdown_touches_community_only(small_network):
    state = PolicyState.create(PolicyConfig(kind="lockdown"), small_network, start_day=3)
    begin_day(small_network, state, 2)
    assert not state.lockdown_active
    begin_day(small_network, state, 3)
    assert state.lockdown_active
    assert np.all(small_network.lambda_max[small_network.community_ids] == 33.0)
    assert np.all(small_network.lambda_max[: small_network.n_hcw] == 84.0)
    assert np.all(small_network.lambda_max[small_network.bed_ids] == 84.0)


def test_tti_isolates_notified_users_for_fixed_days(small_network):
    base = select_user_base(small_network, 0.5, "random", make_rng(1, "users"))
    state = PolicyState.create(PolicyConfig(kind="tti", isolation_days=14), small_network, start_day=0)
    apply_policy(small_network, state, base, 2, notified=np.array([0, 3, 3]))
    isolated = state.ledger.isolated_nodes()
    assert isolated == sorted(base.nodes[[0, 3]].tolist())
    assert set(isolated) <= set(base.nodes.tolist())
    node = int(base.nodes[0])
    assert state.release_day[node] == 17
    # re-notification extends the isolation
    apply_policy(small_network, state, base, 6, notified=np.array([0]))
    begin_day(small_network, state, 17)
    assert state.ledger.is_isolated(node)
    assert not state.ledger.is_isolated(int(base.nodes[3]))
    begin_day(small_network, state, 21)
    assert not state.ledger.is_isolated(node)
    assert small_network.lambda_max[node] == 84.0


def test_conflicting_policies_are_rejected(small_network):
    state = PolicyState.create(PolicyConfig(kind="lockdown"), small_network, start_day=0)
    state.register("lockdown")
    with pytest.raises(PolicyConflictError):
        state.register("tti")


def test_ledger_intervals_stay_disjoint():
    ledger = IsolationLedger()
    ledger.open(7, 1)
    ledger.open(7, 2)
    ledger.close(7, 6)
    ledger.close(7, 7)
    ledger.open(7, 8)
    assert ledger.intervals[7] == [[1, 6], [8, None]]
    np.testing.assert_array_equal(ledger.durations(10), [5.0, 2.0])
    frame = ledger.to_frame(10)
    assert frame["end_day"].tolist() == [6, 10]


def test_isolation_statistics(small_network, everyone):
    state = PolicyState.create(PolicyConfig(kind="da_isolation"), small_network, start_day=0)
    apply_policy(small_network, state, everyone, 0, flagged=_flags(everyone.size, 50, 51, 52))
    assert isolated_fraction(state, small_network.n_persons) == pytest.approx(3 / 300)
    assert duration_quantiles(state, 11) == {"q50": 10.0, "q90": 10.0, "q99": 10.0}
    empty = PolicyState.create(PolicyConfig(kind="none"), small_network, start_day=0)
    assert duration_quantiles(empty, 5)["q50"] == 0.0
