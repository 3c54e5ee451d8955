"""Risk classification, ROC evaluation and the test-only / tracing baselines.

All arrays here are indexed by user (position in the user base). Scores are
evaluated on community users; PPF is the flagged share of those users.
"""
import logging
from collections import deque
from dataclasses import dataclass
from typing import Deque, List, Optional, Sequence, Tuple

import numpy as np
from sklearn import metrics

from app import config
from app.services.network import ContactSet
from app.services.observations import ObservationKind, ObservationSet

logger = logging.getLogger(__name__)


@dataclass
class ClassificationResult:
    flags: np.ndarray
    threshold: float
    tpr: float
    ppf: float
    fpr: float

    @property
    def n_flagged(self) -> int:
        return int(self.flags.sum())


@dataclass(frozen=True)
class RocPoint:
    threshold: float
    ppf: float
    tpr: float
    fpr: float


def score(flags: np.ndarray, truth: np.ndarray, evaluated: Optional[np.ndarray] = None) -> Tuple[float, float, float]:
    """(TPR, PPF, FPR) of binary flags over the evaluated users"""
    flags = np.asarray(flags, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if evaluated is not None:
        flags, truth = flags[evaluated], truth[evaluated]
    if flags.size == 0:
        return 0.0, 0.0, 0.0
    tn, fp, fn, tp = metrics.confusion_matrix(truth, flags, labels=[False, True]).ravel()
    tpr = tp / (tp + fn) if tp + fn else 0.0
    fpr = fp / (fp + tn) if fp + tn else 0.0
    return float(tpr), float((tp + fp) / flags.size), float(fpr)


def _result(flags, truth, evaluated, threshold) -> ClassificationResult:
    if evaluated is not None:
        flags = flags & evaluated
    tpr, ppf, fpr = score(flags, truth, evaluated)
    return ClassificationResult(flags=flags, threshold=threshold, tpr=tpr, ppf=ppf, fpr=fpr)


def classify(
    mean_infectious: np.ndarray,
    threshold: float,
    truth: np.ndarray,
    evaluated: Optional[np.ndarray] = None,
) -> ClassificationResult:
    """Flag users whose ensemble-mean <I> exceeds the threshold"""
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    flags = np.asarray(mean_infectious) > threshold
    return _result(flags, truth, evaluated, threshold)


def roc_curve(
    mean_infectious: np.ndarray,
    truth: np.ndarray,
    thresholds: Optional[Sequence[float]] = None,
    evaluated: Optional[np.ndarray] = None,
) -> List[RocPoint]:
    """Points traced by lowering the threshold; PPF and TPR never decrease"""
    scores = np.asarray(mean_infectious, dtype=float)
    labels = np.asarray(truth, dtype=bool)
    if evaluated is not None:
        scores, labels = scores[evaluated], labels[evaluated]
    if thresholds is None:
        positives, negatives = int(labels.sum()), int((~labels).sum())
        if positives == 0 or negatives == 0:
            thresholds = np.r_[np.inf, np.unique(scores)[::-1]]
        else:
            fpr, tpr, thr = metrics.roc_curve(labels, scores, drop_intermediate=False)
            total = positives + negatives
            return [
                RocPoint(float(c), float((t * positives + f * negatives) / total), float(t), float(f))
                for f, t, c in zip(fpr, tpr, thr)
            ]
    thresholds = np.asarray(thresholds, dtype=float)
    if np.any(np.diff(thresholds) > 0):
        raise ValueError("thresholds must be sorted descending")
    points = []
    for c in thresholds:
        tpr, ppf, fpr = score(scores >= c if np.isinf(c) else scores > c, labels)
        points.append(RocPoint(float(c), ppf, tpr, fpr))
    return points


class ContactHistory:
    """Per-day long contacts between users, kept for a trailing window"""

    def __init__(self, lookback_days: int = 10, min_duration: float = 15 * config.MINUTE):
        self.lookback_days = lookback_days
        self.min_duration = min_duration
        self.days: Deque[Tuple[int, np.ndarray, np.ndarray]] = deque()

    def add(self, day: int, contacts: ContactSet):
        i, j = contacts.long_contacts(self.min_duration)
        self.days.append((day, i, j))
        while self.days and self.days[0][0] <= day - self.lookback_days:
            self.days.popleft()

    def traced(self, sources: np.ndarray, day: int) -> np.ndarray:
        """Users with a long contact with any source within the trailing window"""
        sources = np.asarray(sources, dtype=np.int64)
        if sources.size == 0:
            return sources
        found = []
        for d, i, j in self.days:
            if day - self.lookback_days < d <= day:
                found.append(j[np.isin(i, sources)])
                found.append(i[np.isin(j, sources)])
        if not found:
            return np.empty(0, dtype=np.int64)
        return np.unique(np.concatenate(found))


def positive_tested(observations: ObservationSet, index_map: np.ndarray) -> np.ndarray:
    pos = observations.select(kinds=[ObservationKind.TEST_POSITIVE])
    users = index_map[pos.node]
    return np.unique(users[users >= 0])


def baseline_test_only(
    observations: ObservationSet,
    index_map: np.ndarray,
    truth: np.ndarray,
    evaluated: Optional[np.ndarray] = None,
) -> ClassificationResult:
    flags = np.zeros(truth.size, dtype=bool)
    flags[positive_tested(observations, index_map)] = True
    return _result(flags, truth, evaluated, np.nan)


def baseline_contact_tracing(
    observations: ObservationSet,
    history: ContactHistory,
    day: int,
    index_map: np.ndarray,
    truth: np.ndarray,
    evaluated: Optional[np.ndarray] = None,
) -> ClassificationResult:
    positives = positive_tested(observations, index_map)
    flags = np.zeros(truth.size, dtype=bool)
    flags[positives] = True
    flags[history.traced(positives, day)] = True
    return _result(flags, truth, evaluated, np.nan)
