import numpy as np
import pytest

from app import config
from app.services.classification import (
    ContactHistory,
    baseline_contact_tracing,
    baseline_test_only,
    classify,
    roc_curve,
    score,
)
from app.services.kmc import HealthState
from app.services.network import ContactSet
from app.services.observations import DIAGNOSTIC_TEST, ObservationSet, administer_tests
from app.utils.rng import make_rng


def _contacts(pairs, minutes):
    i, j = np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs])
    start = np.zeros(len(pairs))
    return ContactSet(i, j, start, start + np.asarray(minutes) * config.MINUTE, np.zeros(len(pairs), dtype=bool))


def test_threshold_one_flags_nobody():
    scores = np.array([0.2, 1.0, 0.7])
    result = classify(scores, 1.0, np.array([True, True, False]))
    assert result.n_flagged == 0
    assert result.tpr == 0.0 and result.ppf == 0.0
    with pytest.raises(ValueError):
        classify(scores, 1.5, np.array([True, True, False]))


def test_classification_restricted_to_evaluated_users():
    scores = np.array([0.9, 0.9, 0.0, 0.0])
    truth = np.array([True, False, False, True])
    evaluated = np.array([True, False, True, True])
    result = classify(scores, 0.5, truth, evaluated)
    assert result.flags.tolist() == [True, False, False, False]
    assert result.tpr == pytest.approx(0.5)
    assert result.ppf == pytest.approx(1.0 / 3.0)
    assert result.fpr == 0.0


def test_perfect_scores_reach_full_recall_at_prevalence():
    truth = np.zeros(100, dtype=bool)
    truth[:7] = True
    points = roc_curve(truth.astype(float), truth, thresholds=[1.0, 0.5, 0.0])
    middle = points[1]
    assert middle.tpr == 1.0
    assert middle.ppf == pytest.approx(0.07)
    assert middle.fpr == 0.0


def test_roc_is_monotone():
    rng = np.random.default_rng(9)
    truth = rng.random(500) < 0.1
    scores = np.clip(truth * 0.3 + rng.normal(0.1, 0.1, 500), 0, 1)
    points = roc_curve(scores, truth)
    ppf = [p.ppf for p in points]
    tpr = [p.tpr for p in points]
    assert np.all(np.diff(ppf) >= -1e-12)
    assert np.all(np.diff(tpr) >= -1e-12)
    assert points[-1].tpr == 1.0 and points[-1].ppf == pytest.approx(1.0)


def test_roc_with_one_class_and_threshold_order():
    points = roc_curve(np.array([0.1, 0.2]), np.array([False, False]))
    assert all(p.tpr == 0.0 for p in points)
    with pytest.raises(ValueError):
        roc_curve(np.array([0.1, 0.2]), np.array([True, False]), thresholds=[0.1, 0.5])


def test_score_of_empty_selection():
    assert score(np.array([True]), np.array([True]), np.array([False])) == (0.0, 0.0, 0.0)


def test_long_contacts_are_traced():
    history = ContactHistory()
    history.add(3, _contacts([(0, 1), (0, 2), (3, 4)], [20, 5, 30]))
    assert history.traced(np.array([0]), 3).tolist() == [1]
    assert history.traced(np.array([4]), 5).tolist() == [3]
    assert history.traced(np.array([], dtype=np.int64), 3).size == 0


def test_contact_history_forgets_old_days():
    history = ContactHistory(lookback_days=10)
    history.add(0, _contacts([(0, 1)], [60]))
    for day in range(1, 11):
        history.add(day, ContactSet.empty())
    assert history.traced(np.array([0]), 10).size == 0
    assert len(history.days) == 10


def test_test_only_recall_matches_sensitivity():
    n = 4000
    states = np.where(np.arange(n) % 2 == 0, HealthState.I, HealthState.S).astype(np.int8)
    truth = states == HealthState.I
    obs = administer_tests(states, np.arange(n), n, DIAGNOSTIC_TEST, 0.5, 0, make_rng(4, "tests"))
    result = baseline_test_only(obs, np.arange(n), truth)
    # binomial(2000, 0.8): 5 sigma is about 0.045
    assert result.tpr == pytest.approx(0.8, abs=0.045)
    assert np.isnan(result.threshold)


def test_tracing_adds_contacts_of_positives():
    truth = np.array([True, True, False, False, False])
    obs = ObservationSet.build(2, [0, 3], ["test_positive", "test_negative"], [0.45, 0.002], [0.55, 0.002])
    history = ContactHistory()
    history.add(1, _contacts([(0, 1), (3, 4)], [30, 30]))
    index_map = np.arange(5)
    test_only = baseline_test_only(obs, index_map, truth)
    traced = baseline_contact_tracing(obs, history, 2, index_map, truth)
    assert test_only.flags.tolist() == [True, False, False, False, False]
    assert traced.flags.tolist() == [True, True, False, False, False]
    assert traced.tpr == 1.0
