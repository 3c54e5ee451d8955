"""Reduced master equations for per-node SEIHRD probabilities.

An ensemble is held as dense arrays: states (M, 6, n) in S, E, I, H, R, D
order and parameters (M, 4, n) holding the rates beta, sigma, gamma and
gamma'. The hospitalization and mortality fractions h, d, d' are fixed per
node and shared by all members.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import sparse

from app import config
from app.models.scenario_config import IntegratorConfig
from app.services.network import ContactSet
from app.utils.exceptions import FormatVersionError, IntegrationError

logger = logging.getLogger(__name__)

S, E, I, H, R, D = range(6)
BETA, SIGMA, GAMMA, GAMMA_PRIME = range(4)
STATE_NAMES = ("S", "E", "I", "H", "R", "D")
PARAM_NAMES = ("beta", "sigma", "gamma", "gamma_prime")

# Runge-Kutta-Fehlberg 4(5) tableau
_C = np.array([0.0, 1 / 4, 3 / 8, 12 / 13, 1.0, 1 / 2])
_A = (
    (),
    (1 / 4,),
    (3 / 32, 9 / 32),
    (1932 / 2197, -7200 / 2197, 7296 / 2197),
    (439 / 216, -8.0, 3680 / 513, -845 / 4104),
    (-8 / 27, 2.0, -3544 / 2565, 1859 / 4104, -11 / 40),
)
_B4 = np.array([25 / 216, 0.0, 1408 / 2565, 2197 / 4104, -1 / 5, 0.0])
_ERR = np.array([1 / 360, 0.0, -128 / 4275, -2197 / 75240, 1 / 50, 2 / 55])


@dataclass
class EnsembleMember:
    states: np.ndarray  # (6, n)
    beta: np.ndarray
    sigma: np.ndarray
    gamma: np.ndarray
    gamma_prime: np.ndarray
    h: np.ndarray
    d: np.ndarray
    d_prime: np.ndarray


@dataclass
class Ensemble:
    states: np.ndarray
    params: np.ndarray
    h: np.ndarray
    d: np.ndarray
    d_prime: np.ndarray
    t: float = 0.0

    @property
    def size(self) -> int:
        return int(self.states.shape[0])

    @property
    def n(self) -> int:
        return int(self.states.shape[2])

    @property
    def beta(self) -> np.ndarray:
        return self.params[:, BETA]

    def member(self, m: int) -> EnsembleMember:
        p = self.params[m]
        return EnsembleMember(
            states=self.states[m],
            beta=p[BETA],
            sigma=p[SIGMA],
            gamma=p[GAMMA],
            gamma_prime=p[GAMMA_PRIME],
            h=self.h,
            d=self.d,
            d_prime=self.d_prime,
        )

    def copy(self) -> "Ensemble":
        return Ensemble(self.states.copy(), self.params.copy(), self.h, self.d, self.d_prime, self.t)

    def with_states(self, states: np.ndarray, t: float) -> "Ensemble":
        return Ensemble(states, self.params, self.h, self.d, self.d_prime, t)

    def mean_states(self) -> np.ndarray:
        return self.states.mean(axis=0)

    def mean_frame(self, node_ids: Optional[np.ndarray] = None) -> pd.DataFrame:
        mean = self.mean_states()
        frame = pd.DataFrame({name: mean[k] for k, name in enumerate(STATE_NAMES)})
        frame.insert(0, "node", node_ids if node_ids is not None else np.arange(self.n))
        frame.insert(0, "t", self.t)
        return frame

    def save(self, path):
        np.savez_compressed(
            path,
            format_version=config.ENSEMBLE_FORMAT_VERSION,
            states=self.states,
            params=self.params,
            h=self.h,
            d=self.d,
            d_prime=self.d_prime,
            t=self.t,
        )

    @classmethod
    def load(cls, path) -> "Ensemble":
        with np.load(path, allow_pickle=False) as data:
            version = int(data["format_version"])
            if version != config.ENSEMBLE_FORMAT_VERSION:
                raise FormatVersionError(f"Unsupported ensemble snapshot version {version}")
            return cls(data["states"], data["params"], data["h"], data["d"], data["d_prime"], float(data["t"]))


@dataclass
class EdgeWeights:
    """Directed contact channels j -> i with their step-averaged weight"""

    src: np.ndarray
    dst: np.ndarray
    w: np.ndarray
    modifier: np.ndarray
    n: int
    _incidence: Optional[sparse.csr_matrix] = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return int(self.src.size)

    def incidence(self) -> sparse.csr_matrix:
        """(n, E) matrix summing edge contributions onto their target"""
        if self._incidence is None:
            self._incidence = sparse.csr_matrix(
                (np.ones(self.size), (self.dst, np.arange(self.size))), shape=(self.n, self.size)
            )
        return self._incidence


def edge_weights(
    contacts: ContactSet,
    t0: float,
    t1: float,
    n: int,
    hospital_modifier: float = config.HOSPITAL_TRANSMISSION_MODIFIER,
) -> EdgeWeights:
    if t1 > t0:
        i, j, w, hosp = contacts.average_weights(t0, t1)
    else:
        i, j, w, hosp = contacts.weights_at(t0)
    src = np.r_[j, i].astype(np.int64)
    dst = np.r_[i, j].astype(np.int64)
    w = np.r_[w, w]
    hosp = np.r_[hosp, hosp].astype(np.int64)
    if src.size == 0:
        z = np.empty(0, dtype=np.int64)
        return EdgeWeights(z, z, np.empty(0), np.empty(0), n)
    keys = (src * n + dst) * 2 + hosp
    unique, inverse = np.unique(keys, return_inverse=True)
    inverse = np.asarray(inverse).ravel()
    summed = np.bincount(inverse, weights=w, minlength=unique.size)
    pair, hosp_u = np.divmod(unique, 2)
    src_u, dst_u = np.divmod(pair, n)
    modifier = np.where(hosp_u == 1, hospital_modifier, 1.0)
    return EdgeWeights(src_u, dst_u, np.minimum(summed, 1.0), modifier, n)


@dataclass
class ClosureField:
    c_si: np.ndarray
    c_sh: np.ndarray

    @classmethod
    def mean_field(cls, n_edges: int) -> "ClosureField":
        return cls(np.ones(n_edges), np.ones(n_edges))

    def fraction_within(self, low: float = 0.8, high: float = 1.2) -> float:
        values = np.r_[self.c_si, self.c_sh]
        if values.size == 0:
            return 1.0
        return float(np.mean((values >= low) & (values <= high)))


def _closure_ratio(x: np.ndarray, y: np.ndarray, floor: float) -> np.ndarray:
    num = np.mean(x * y, axis=0)
    den = np.mean(x, axis=0) * np.mean(y, axis=0)
    out = np.ones_like(den)
    ok = den > floor
    out[ok] = num[ok] / den[ok]
    return out


def compute_closure(states: np.ndarray, weights: EdgeWeights, floor: float = config.CLOSURE_FLOOR) -> ClosureField:
    """Ensemble estimate of <S_i X_j> / (<S_i><X_j>) per directed channel"""
    if states.shape[0] < 2:
        raise ValueError("closure needs at least two ensemble members")
    s_dst = states[:, S, weights.dst]
    return ClosureField(
        c_si=_closure_ratio(s_dst, states[:, I, weights.src], floor),
        c_sh=_closure_ratio(s_dst, states[:, H, weights.src], floor),
    )


def _pressure(states: np.ndarray, beta: np.ndarray, weights: EdgeWeights, closure: ClosureField) -> np.ndarray:
    """zeta (M, n): the S_i factor cancels, so no division is needed"""
    m, n = states.shape[0], states.shape[2]
    if weights.size == 0:
        return np.zeros((m, n))
    kappa = 0.5 * weights.modifier * (beta[:, weights.src] + beta[:, weights.dst])
    source = states[:, I, weights.src] * closure.c_si + states[:, H, weights.src] * closure.c_sh
    contrib = weights.w * kappa * source
    return np.asarray(weights.incidence() @ contrib.T).T


def infectious_pressure(ensemble: Ensemble, weights: EdgeWeights, closure: ClosureField) -> np.ndarray:
    return _pressure(ensemble.states, ensemble.beta, weights, closure)


def _derivative(y, params, h, d, d_prime, weights, closure, exogenous):
    beta, sigma, gamma, gamma_p = params[:, BETA], params[:, SIGMA], params[:, GAMMA], params[:, GAMMA_PRIME]
    zeta = _pressure(y, beta, weights, closure)
    if exogenous is not None:
        zeta = zeta + exogenous
    force = y[:, S] * zeta
    e_out = sigma * y[:, E]
    i_out = gamma * y[:, I]
    h_out = gamma_p * y[:, H]
    dy = np.empty_like(y)
    dy[:, S] = -force
    dy[:, E] = force - e_out
    dy[:, I] = e_out - i_out
    dy[:, H] = h * i_out - h_out
    dy[:, R] = (1.0 - h - d) * i_out + (1.0 - d_prime) * h_out
    dy[:, D] = d * i_out + d_prime * h_out
    return dy


def exogenous_rate(ensemble: Ensemble, exogenous_weight: Optional[np.ndarray], prevalence: float):
    """k_ext <w> P(t) eta with eta = beta"""
    if exogenous_weight is None or not np.any(exogenous_weight):
        return None
    return exogenous_weight[None, :] * prevalence * ensemble.beta


def master_rhs(
    ensemble: Ensemble,
    weights: EdgeWeights,
    closure: ClosureField,
    prevalence: float,
    exogenous_weight: Optional[np.ndarray] = None,
) -> np.ndarray:
    if not 0.0 <= prevalence <= 1.0:
        raise ValueError("prevalence must lie in [0, 1]")
    return _derivative(
        ensemble.states,
        ensemble.params,
        ensemble.h,
        ensemble.d,
        ensemble.d_prime,
        weights,
        closure,
        exogenous_rate(ensemble, exogenous_weight, prevalence),
    )


def estimate_prevalence(states, n_users: int) -> float:
    """Ensemble-average infectious probability, floored at 1/n_users"""
    if n_users < 1:
        raise ValueError("user count must be at least 1")
    if isinstance(states, Ensemble):
        states = states.states
    m = states.shape[0]
    return max(float(states[:, I].sum()) / (n_users * m), 1.0 / n_users)


@dataclass
class Trajectory:
    times: List[float] = field(default_factory=list)
    states: List[np.ndarray] = field(default_factory=list)
    closure_in_band: List[float] = field(default_factory=list)
    steps: int = 0
    rejected: int = 0

    def at(self, t: float) -> np.ndarray:
        times = np.asarray(self.times)
        k = int(np.searchsorted(times, t))
        if k < times.size and np.isclose(times[k], t):
            return self.states[k]
        if k == 0 or k >= times.size:
            raise ValueError(f"time {t} outside recorded trajectory")
        t0, t1 = times[k - 1], times[k]
        frac = (t - t0) / (t1 - t0)
        return (1.0 - frac) * self.states[k - 1] + frac * self.states[k]

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


def integrate(
    ensemble: Ensemble,
    contacts: ContactSet,
    t0: float,
    t1: float,
    settings: Optional[IntegratorConfig] = None,
    exogenous_weight: Optional[np.ndarray] = None,
    n_users: Optional[int] = None,
    record_times: Sequence[float] = (),
    hospital_modifier: float = config.HOSPITAL_TRANSMISSION_MODIFIER,
) -> Tuple[Ensemble, Trajectory]:
    """Adaptive RKF45 forecast of every member from t0 to t1"""
    if t1 <= t0:
        raise ValueError("t1 must exceed t0")
    settings = settings or IntegratorConfig()
    n = ensemble.n
    n_users = n_users or n
    mean_field = settings.closure == "mean_field" or ensemble.size < 2
    stops = sorted({float(t) for t in record_times if t0 < t < t1} | {float(t1)})
    contacts = contacts.window(t0, t1)

    y = ensemble.states.copy()
    traj = Trajectory(times=[t0], states=[y.copy()])
    t = float(t0)
    step = min(settings.max_step, t1 - t0)
    stop_idx = 0
    while stop_idx < len(stops):
        stop = stops[stop_idx]
        h = min(step, settings.max_step, stop - t)
        landing = h >= stop - t - 1e-12
        if landing:
            h = stop - t
        weights = edge_weights(contacts, t, t + h, n, hospital_modifier)
        closure = ClosureField.mean_field(weights.size) if mean_field else compute_closure(y, weights)
        exo = exogenous_rate(ensemble, exogenous_weight, estimate_prevalence(y, n_users))

        k = []
        for stage in range(6):
            y_stage = y
            for coeff, ks in zip(_A[stage], k):
                y_stage = y_stage + h * coeff * ks
            k.append(
                _derivative(y_stage, ensemble.params, ensemble.h, ensemble.d, ensemble.d_prime, weights, closure, exo)
            )
        y_new = y + h * sum(b * ks for b, ks in zip(_B4, k) if b != 0.0)
        err = h * sum(c * ks for c, ks in zip(_ERR, k) if c != 0.0)
        scale = settings.atol + settings.rtol * np.maximum(np.abs(y), np.abs(y_new))
        ratio = float(np.max(np.abs(err) / scale)) if err.size else 0.0

        if not np.isfinite(ratio):
            ratio = np.inf
        if ratio <= 1.0:
            t = stop if landing else t + h
            y = np.clip(y_new, 0.0, 1.0)
            traj.steps += 1
            traj.closure_in_band.append(closure.fraction_within())
            if landing:
                traj.times.append(t)
                traj.states.append(y.copy())
                stop_idx += 1
        else:
            traj.rejected += 1
        factor = 4.0 if ratio == 0.0 else min(4.0, max(0.1, 0.9 * ratio ** -0.2))
        step = min(settings.max_step, h * factor) if ratio <= 1.0 else h * factor
        if step < settings.min_step:
            worst = np.argsort(np.max(np.abs(err) / scale, axis=(0, 1)))[::-1][:5]
            raise IntegrationError(
                f"Step size underflow at t={t:.6f}",
                details={"t": t, "step": step, "nodes": worst.tolist()},
            )
    logger.debug(f"Integrated [{t0}, {t1}]: {traj.steps} steps, {traj.rejected} rejected")
    return ensemble.with_states(y, float(t1)), traj
