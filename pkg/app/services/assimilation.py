"""Ensemble adjustment Kalman filter over the reduced master equations.

Updates are localized to single nodes. For each observed node the
augmented vector holds its six window-start probabilities, optionally its
four parameters, the forecast values of every observed quantity and the
probability sum, which is observed as 1. Nodes with the same number of
observations are updated together as one batch.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from app.models.scenario_config import DAConfig, IntegratorConfig, PriorSpec
from app.services import riskmodel
from app.services.network import ContactSet
from app.services.observations import TARGET_STATE, ObservationKind, ObservationSet
from app.services.riskmodel import BETA, GAMMA, GAMMA_PRIME, SIGMA, Ensemble, Trajectory
from app.utils.exceptions import AssimilationError

logger = logging.getLogger(__name__)

SEIR = (riskmodel.S, riskmodel.E, riskmodel.I, riskmodel.R)
ALL_STATES = tuple(range(6))
_TARGET_INDEX = {kind.value: int(state) for kind, state in TARGET_STATE.items()}


def init_ensemble(
    outcome_rates: np.ndarray,
    prior: PriorSpec,
    size: int,
    rng: np.random.Generator,
    t: float = 0.0,
) -> Ensemble:
    """Draw parameters and initial states from the priors.

    outcome_rates is (n, 3) holding h, d, d' per node.
    """
    if size < 2:
        raise ValueError("ensemble size must be at least 2")
    outcome_rates = np.asarray(outcome_rates, dtype=float)
    n = outcome_rates.shape[0]
    shape = (size, n)
    lo = (prior.beta_min - prior.beta_mean) / prior.beta_std
    hi = (prior.beta_max - prior.beta_mean) / prior.beta_std
    params = np.empty((size, 4, n))
    params[:, BETA] = stats.truncnorm.rvs(lo, hi, loc=prior.beta_mean, scale=prior.beta_std, size=shape, random_state=rng)
    for index, k, theta in (
        (SIGMA, prior.latent_shape, prior.latent_scale),
        (GAMMA, prior.infectious_shape, prior.infectious_scale),
        (GAMMA_PRIME, prior.hospital_shape, prior.hospital_scale),
    ):
        params[:, index] = 1.0 / (prior.min_period + stats.gamma.rvs(k, scale=theta, size=shape, random_state=rng))

    fractions = stats.beta.ppf(rng.random(size), prior.initial_alpha, prior.initial_beta)
    states = np.zeros((size, 6, n))
    states[:, riskmodel.S] = 1.0
    for m, frac in enumerate(fractions):
        k = int(round(frac * n))
        if k:
            chosen = rng.choice(n, size=k, replace=False)
            states[m, riskmodel.S, chosen] = 0.0
            states[m, riskmodel.I, chosen] = 1.0
    logger.info(f"Initialized ensemble: {size} members over {n} nodes")
    return Ensemble(states, params, outcome_rates[:, 0].copy(), outcome_rates[:, 1].copy(), outcome_rates[:, 2].copy(), t)


def regularize_covariance(cov: np.ndarray, delta, delta_min, blocks: Optional[Sequence[np.ndarray]] = None) -> np.ndarray:
    """cov + max(delta (lambda_max - lambda_min), delta_min) I, batched over leading axes.

    With blocks, each index block gets its own shift from the spectrum of
    its diagonal sub-block.
    """
    if blocks is None:
        blocks = [np.arange(cov.shape[-1])]
    out = np.array(cov, dtype=float, copy=True)
    for idx in blocks:
        idx = np.asarray(idx)
        if idx.size == 0:
            continue
        lam = np.linalg.eigvalsh(cov[..., idx[:, None], idx[None, :]])
        reg = np.maximum(np.asarray(delta) * (lam[..., -1] - lam[..., 0]), delta_min)
        out[..., idx, idx] += np.asarray(reg)[..., None]
    return out


def eakf_analysis(
    ensemble: np.ndarray,
    obs_operator: np.ndarray,
    observed: np.ndarray,
    obs_variance: np.ndarray,
    delta: float = 0.0,
    delta_min: float = 0.0,
    blocks: Optional[Sequence[np.ndarray]] = None,
) -> np.ndarray:
    """Deterministic square-root update of (B, M, d) ensembles.

    obs_operator is (p, d) and shared by the batch; observed and
    obs_variance are (B, p). blocks partitions d for regularization.
    """
    z = np.asarray(ensemble, dtype=float)
    squeeze = z.ndim == 2
    if squeeze:
        z = z[None]
        observed = np.atleast_1d(observed)[None]
        obs_variance = np.atleast_1d(obs_variance)[None]
    hmat = np.asarray(obs_operator, dtype=float)
    m = z.shape[1]

    zbar = z.mean(axis=1)
    dev = z - zbar[:, None, :]
    cov = np.einsum("bmi,bmj->bij", dev, dev) / (m - 1)
    cov = regularize_covariance(cov, delta, delta_min, blocks)

    hs = np.einsum("pd,bde->bpe", hmat, cov)
    innovation_cov = np.einsum("bpe,qe->bpq", hs, hmat) + np.eye(hmat.shape[0]) * obs_variance[:, :, None]
    innovation = observed - np.einsum("pd,bd->bp", hmat, zbar)
    mean = zbar + np.einsum("bpd,bp->bd", hs, np.linalg.solve(innovation_cov, innovation[..., None])[..., 0])

    eigval, eigvec = np.linalg.eigh(cov)
    keep = eigval > np.maximum(eigval[:, -1:], 0.0) * 1e-12
    keep &= eigval > 0
    g = np.where(keep, np.sqrt(np.where(keep, eigval, 1.0)), 0.0)
    g_inv = np.where(keep, 1.0 / np.where(keep, g, 1.0), 0.0)
    hf = np.einsum("pd,bdk->bpk", hmat, eigvec)
    precision = np.einsum("bpk,bp,bpl->bkl", hf, 1.0 / obs_variance, hf)
    inner = g[:, :, None] * precision * g[:, None, :]
    b_val, b_vec = np.linalg.eigh(inner)
    shrink = 1.0 / np.sqrt(1.0 + np.maximum(b_val, 0.0))
    core = (g[:, :, None] * b_vec * shrink[:, None, :]) @ np.swapaxes(b_vec, 1, 2)
    adjust = eigvec @ core @ (g_inv[:, :, None] * np.swapaxes(eigvec, 1, 2))

    out = mean[:, None, :] + np.einsum("bmd,bed->bme", dev, adjust)
    return out[0] if squeeze else out


@dataclass
class PassSettings:
    fidelity: str
    delta: float
    delta_min: float
    conservation_std: float
    variance_floor: float
    error_rate_as: str = "std"
    update_parameters: bool = True
    updatable_states: Tuple[int, ...] = ALL_STATES
    param_bounds: Dict[int, Tuple[float, float]] = field(default_factory=dict)

    @classmethod
    def for_pass(cls, da: DAConfig, fidelity: str, observations: ObservationSet, prior: PriorSpec) -> "PassSettings":
        high = fidelity == "high"
        variance = observation_variance(observations.error_rate, da)
        return cls(
            fidelity=fidelity,
            delta=da.regularization(fidelity),
            delta_min=float(np.mean(np.sqrt(variance))) if (da.use_noise_floor and variance.size) else 0.0,
            conservation_std=da.conservation_std,
            variance_floor=da.observation_variance_floor,
            error_rate_as=da.error_rate_as,
            update_parameters=da.learn_parameters and not high,
            updatable_states=SEIR if high else ALL_STATES,
            param_bounds=parameter_bounds(prior),
        )


def parameter_bounds(prior: PriorSpec) -> Dict[int, Tuple[float, float]]:
    max_rate = 1.0 / prior.min_period
    return {
        BETA: (prior.beta_min, prior.beta_max),
        SIGMA: (1e-3, max_rate),
        GAMMA: (1e-3, max_rate),
        GAMMA_PRIME: (1e-3, max_rate),
    }


def observation_variance(error_rate: np.ndarray, da: DAConfig) -> np.ndarray:
    error_rate = np.asarray(error_rate, dtype=float)
    raw = error_rate ** 2 if da.error_rate_as == "std" else error_rate
    return np.maximum(raw, da.observation_variance_floor)


def _group_by_node(observations: ObservationSet, index_map: Optional[np.ndarray]):
    nodes = observations.node if index_map is None else index_map[observations.node]
    valid = nodes >= 0
    if not np.all(valid):
        logger.warning(f"Dropping {int((~valid).sum())} observations of nodes outside the user base")
    obs = observations.subset(valid)
    nodes = nodes[valid]
    order = np.lexsort((obs.kind.astype(str), nodes))
    return obs.subset(order), nodes[order]


def eakf_update(
    ensemble: Ensemble,
    trajectory: Trajectory,
    observations: ObservationSet,
    settings: PassSettings,
    index_map: Optional[np.ndarray] = None,
) -> Ensemble:
    """One fidelity pass of localized updates at the window start"""
    if len(observations) == 0:
        return ensemble
    obs, nodes = _group_by_node(observations, index_map)
    if nodes.size == 0:
        return ensemble
    unique, first, counts = np.unique(nodes, return_index=True, return_counts=True)
    variance_all = np.maximum(
        obs.error_rate ** 2 if settings.error_rate_as == "std" else obs.error_rate, settings.variance_floor
    )
    target_all = np.array([_TARGET_INDEX[k] for k in obs.kind], dtype=np.int64)
    time_all = obs.time

    states = ensemble.states.copy()
    params = ensemble.params.copy()
    m = ensemble.size
    n_state = 6
    n_param = 4 if settings.update_parameters else 0

    for p in np.unique(counts):
        batch = unique[counts == p]
        rows = (first[counts == p][:, None] + np.arange(p)[None, :])
        target = target_all[rows]
        when = time_all[rows]
        predicted = np.empty((batch.size, m, p))
        for t_obs in np.unique(when):
            snapshot = trajectory.at(float(t_obs))
            hit = when == t_obs
            b_idx, k_idx = np.nonzero(hit)
            predicted[b_idx, :, k_idx] = snapshot[:, target[b_idx, k_idx], batch[b_idx]].T

        start = np.transpose(states[:, :, batch], (2, 0, 1))
        parts = [start]
        if n_param:
            parts.append(np.transpose(params[:, :, batch], (2, 0, 1)))
        parts.append(predicted)
        parts.append(start.sum(axis=2, keepdims=True))
        z = np.concatenate(parts, axis=2)
        d = z.shape[2]

        hmat = np.zeros((p + 1, d))
        hmat[np.arange(p + 1), np.arange(d - p - 1, d)] = 1.0
        observed = np.concatenate([obs.value[rows], np.ones((batch.size, 1))], axis=1)
        variance = np.concatenate(
            [variance_all[rows], np.full((batch.size, 1), settings.conservation_std ** 2)], axis=1
        )
        probabilities = np.r_[0:n_state, n_state + n_param:d]
        blocks = [probabilities, np.arange(n_state, n_state + n_param)]
        z_new = eakf_analysis(z, hmat, observed, variance, settings.delta, settings.delta_min, blocks)
        if not np.all(np.isfinite(z_new)):
            bad = batch[~np.all(np.isfinite(z_new), axis=(1, 2))]
            raise AssimilationError(
                f"Non-finite ensemble values in {settings.fidelity} pass",
                details={"nodes": bad[:10].tolist(), "fidelity": settings.fidelity},
            )

        for s in settings.updatable_states:
            states[:, s, batch] = np.clip(z_new[:, :, s], 0.0, 1.0).T
        if n_param:
            for k in range(4):
                lo, hi = settings.param_bounds.get(k, (-np.inf, np.inf))
                params[:, k, batch] = np.clip(z_new[:, :, n_state + k], lo, hi).T

    logger.debug(f"{settings.fidelity} pass: updated {unique.size} nodes from {len(obs)} observations")
    return Ensemble(states, params, ensemble.h, ensemble.d, ensemble.d_prime, ensemble.t)


def learn_parameters(
    ensemble: Ensemble,
    trajectory: Trajectory,
    observations: ObservationSet,
    settings: PassSettings,
    index_map: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Joint state-parameter update; returns the (M, 4, n) parameter array"""
    settings = PassSettings(**{**settings.__dict__, "update_parameters": True})
    return eakf_update(ensemble, trajectory, observations, settings, index_map).params


def inflate(x: np.ndarray, a: float, b: float, rng: np.random.Generator) -> np.ndarray:
    """a (x - mean) + mean + N(0, b mean) over the ensemble axis, clipped to [0, 1]"""
    if a < 1.0 or b < 0.0:
        raise ValueError("inflation requires a >= 1 and b >= 0")
    mean = x.mean(axis=0, keepdims=True)
    out = a * (x - mean) + mean
    if b > 0:
        out = out + rng.normal(size=x.shape) * b * mean
    return np.clip(out, 0.0, 1.0)


def inflate_nodes(ensemble: Ensemble, nodes: np.ndarray, a: float, b: float, rng: np.random.Generator) -> Ensemble:
    if nodes.size == 0:
        return ensemble
    states = ensemble.states.copy()
    states[:, :, nodes] = inflate(states[:, :, nodes], a, b, rng)
    return ensemble.with_states(states, ensemble.t)


@dataclass
class CycleResult:
    ensemble: Ensemble
    diagnostics: Dict[str, float]


def _sum_deviation(states: np.ndarray, nodes: Optional[np.ndarray] = None) -> float:
    sums = states.sum(axis=1)
    if nodes is not None:
        if nodes.size == 0:
            return 0.0
        sums = sums[:, nodes]
    return float(np.mean(np.abs(sums - 1.0)))


def _parameter_summary(ensemble: Ensemble) -> Dict[str, float]:
    p = ensemble.params
    out = {"beta_mean": float(p[:, BETA].mean()), "beta_spread": float(p[:, BETA].std(axis=0).mean())}
    for name, k in (("latent_period", SIGMA), ("infectious_period", GAMMA), ("hospital_stay", GAMMA_PRIME)):
        periods = 1.0 / p[:, k]
        out[f"{name}_mean"] = float(periods.mean())
        out[f"{name}_spread"] = float(periods.std(axis=0).mean())
    return out


def da_cycle(
    ensemble: Ensemble,
    observations: ObservationSet,
    contacts: ContactSet,
    t0: float,
    t1: float,
    da: DAConfig,
    prior: PriorSpec,
    rng: np.random.Generator,
    integrator: Optional[IntegratorConfig] = None,
    exogenous_weight: Optional[np.ndarray] = None,
    index_map: Optional[np.ndarray] = None,
    n_users: Optional[int] = None,
) -> CycleResult:
    """Forecast, then assimilate passes from lowest to highest fidelity"""
    record = sorted(set(observations.time.tolist())) if len(observations) else []

    def forecast(start: Ensemble):
        return riskmodel.integrate(
            start, contacts, t0, t1, integrator, exogenous_weight=exogenous_weight, n_users=n_users, record_times=record
        )

    end, trajectory = forecast(ensemble)
    closure_steps = list(trajectory.closure_in_band)
    diagnostics: Dict[str, float] = {"t": float(t1), "n_observations": float(len(observations))}
    passes = [f for f in da.pass_order if len(observations.select(fidelity=f))]
    start = ensemble
    diagnostics["sum_deviation_before"] = _sum_deviation(start.states)

    for k, fidelity in enumerate(passes):
        obs = observations.select(fidelity=fidelity)
        nodes = obs.node if index_map is None else index_map[obs.node]
        nodes = np.unique(nodes[nodes >= 0])
        if da.inflation_enabled and k == len(passes) - 1:
            start = inflate_nodes(start, nodes, da.inflation_a, da.inflation_b, rng)
        before = start.states
        settings = PassSettings.for_pass(da, fidelity, obs, prior)
        start = eakf_update(start, trajectory, obs, settings, index_map)
        diagnostics[f"n_{fidelity}"] = float(len(obs))
        diagnostics[f"update_{fidelity}"] = (
            float(np.mean(np.abs(start.states[:, :, nodes] - before[:, :, nodes]))) if nodes.size else 0.0
        )
        end, trajectory = forecast(start)
        closure_steps.extend(trajectory.closure_in_band)

    diagnostics["sum_deviation_after"] = _sum_deviation(start.states)
    diagnostics["spread_I"] = float(end.states[:, riskmodel.I].std(axis=0).mean())
    diagnostics["mean_I"] = float(end.states[:, riskmodel.I].mean())
    diagnostics["closure_in_band"] = float(np.mean(closure_steps)) if closure_steps else 1.0
    diagnostics.update(_parameter_summary(end))
    logger.info(
        f"DA cycle to t={t1:g}: passes={passes}, mean <I>={diagnostics['mean_I']:.5f}, "
        f"spread={diagnostics['spread_I']:.5f}"
    )
    return CycleResult(ensemble=end, diagnostics=diagnostics)
