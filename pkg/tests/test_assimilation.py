from dataclasses import replace

import numpy as np
import pytest

from app.models.scenario_config import DAConfig, PriorSpec
from app.services import riskmodel
from app.services.assimilation import (
    PassSettings,
    da_cycle,
    eakf_analysis,
    eakf_update,
    inflate,
    init_ensemble,
    learn_parameters,
    observation_variance,
    parameter_bounds,
    regularize_covariance,
)
from app.services.network import ContactSet
from app.services.observations import ObservationKind, ObservationSet
from app.utils.rng import make_rng

S, E, I, H, R, D = range(6)


def _ensemble(m=10, n=4, seed=0) -> riskmodel.Ensemble:
    rng = np.random.default_rng(seed)
    states = np.zeros((m, 6, n))
    states[:, I] = rng.uniform(0.0, 0.2, size=(m, n))
    states[:, E] = rng.uniform(0.0, 0.1, size=(m, n))
    states[:, S] = 1.0 - states[:, I] - states[:, E]
    params = np.empty((m, 4, n))
    params[:, 0] = rng.uniform(8.0, 16.0, size=(m, n))
    params[:, 1] = 1.0 / 3.7
    params[:, 2] = 1.0 / 3.2
    params[:, 3] = 1.0 / 5.0
    zeros = np.zeros(n)
    return riskmodel.Ensemble(states, params, zeros + 0.05, zeros, zeros + 0.1)


def _positive_test(node: int, day: int = 0, value: float = 0.45) -> ObservationSet:
    return ObservationSet.build(day, [node], [ObservationKind.TEST_POSITIVE], [value], [1.0 - value])


def test_scalar_update_matches_conjugate_gaussian():
    rng = np.random.default_rng(3)
    x = rng.normal(2.0, 1.5, size=(40, 1))
    prior_mean, prior_var = x.mean(), x.var(ddof=1)
    y, r = 3.1, 0.7
    post = eakf_analysis(x, np.array([[1.0]]), y, r)
    gain = prior_var / (prior_var + r)
    assert post.mean() == pytest.approx(prior_mean + gain * (y - prior_mean), abs=1e-10)
    assert post.var(ddof=1) == pytest.approx(prior_var * r / (prior_var + r), abs=1e-10)


def test_zero_spread_ensemble_is_unchanged():
    x = np.full((12, 3), 0.25)
    post = eakf_analysis(x, np.array([[0.0, 0.0, 1.0]]), 0.9, 0.01)
    np.testing.assert_array_equal(post, x)


def test_precise_observation_pins_observed_component():
    rng = np.random.default_rng(4)
    x = rng.normal(0.0, 1.0, size=(30, 2))
    post = eakf_analysis(x, np.array([[0.0, 1.0]]), 0.5, 1e-12)
    np.testing.assert_allclose(post[:, 1], 0.5, atol=1e-5)


def test_batched_update_matches_single_updates():
    rng = np.random.default_rng(5)
    batch = rng.normal(size=(3, 20, 2))
    hmat = np.array([[1.0, 0.0]])
    observed = np.array([[0.3], [1.0], [-0.5]])
    variance = np.array([[0.2], [0.5], [0.1]])
    together = eakf_analysis(batch, hmat, observed, variance)
    for b in range(3):
        alone = eakf_analysis(batch[b], hmat, observed[b], variance[b])
        np.testing.assert_allclose(together[b], alone, atol=1e-10)


def test_regularized_covariance_eigenvalue_floor():
    rng = np.random.default_rng(6)
    a = rng.normal(size=(5, 3))
    cov = a.T @ a / 4
    lam = np.linalg.eigvalsh(cov)
    out = regularize_covariance(cov, 0.1, 0.05)
    assert np.linalg.eigvalsh(out).min() >= max(0.1 * (lam[-1] - lam[0]), 0.05) - 1e-12
    floor_only = regularize_covariance(np.zeros((3, 3)), 0.1, 0.05)
    np.testing.assert_allclose(np.linalg.eigvalsh(floor_only), 0.05)


def test_regularization_is_scaled_per_block():
    cov = np.diag([0.01, 0.02, 100.0, 50.0])
    split = regularize_covariance(cov, 0.1, 0.0, blocks=[np.array([0, 1]), np.array([2, 3])])
    np.testing.assert_allclose(np.diag(split), [0.011, 0.021, 105.0, 55.0])
    joint = regularize_covariance(cov, 0.1, 0.0)
    np.testing.assert_allclose(np.diag(joint) - np.diag(cov), 9.999)


def test_observation_variance_conventions():
    errors = np.array([0.5, 0.0])
    np.testing.assert_allclose(observation_variance(errors, DAConfig()), [0.25, 1e-6])
    np.testing.assert_allclose(observation_variance(errors, DAConfig(error_rate_as="variance")), [0.5, 1e-6])


def test_update_is_localized_to_observed_nodes():
    ens = _ensemble()
    _, traj = riskmodel.integrate(ens, ContactSet.empty(), 0.0, 1.0)
    obs = _positive_test(1)
    settings = PassSettings.for_pass(DAConfig(ensemble_size=10), "medium", obs, PriorSpec())
    updated = eakf_update(ens, traj, obs, settings)
    untouched = [0, 2, 3]
    np.testing.assert_array_equal(updated.states[:, :, untouched], ens.states[:, :, untouched])
    np.testing.assert_array_equal(updated.params[:, :, untouched], ens.params[:, :, untouched])
    assert updated.states[:, I, 1].mean() > ens.states[:, I, 1].mean()


def test_high_fidelity_pass_keeps_hospital_states_and_parameters():
    ens = _ensemble()
    _, traj = riskmodel.integrate(ens, ContactSet.empty(), 0.0, 1.0)
    obs = ObservationSet.build(0, [2], [ObservationKind.NOT_HOSPITALIZED], [0.0], [0.0])
    settings = PassSettings.for_pass(DAConfig(ensemble_size=10), "high", obs, PriorSpec())
    assert not settings.update_parameters
    updated = eakf_update(ens, traj, obs, settings)
    np.testing.assert_array_equal(updated.states[:, H, 2], ens.states[:, H, 2])
    np.testing.assert_array_equal(updated.params, ens.params)


def test_observations_outside_user_base_are_dropped():
    ens = _ensemble()
    _, traj = riskmodel.integrate(ens, ContactSet.empty(), 0.0, 1.0)
    index_map = np.array([0, 1, 2, 3, -1])
    obs = _positive_test(4)
    settings = PassSettings.for_pass(DAConfig(ensemble_size=10), "medium", obs, PriorSpec())
    updated = eakf_update(ens, traj, obs, settings, index_map=index_map)
    np.testing.assert_array_equal(updated.states, ens.states)


def test_learned_parameters_stay_within_prior_bounds():
    ens = _ensemble()
    _, traj = riskmodel.integrate(ens, ContactSet.empty(), 0.0, 1.0)
    obs = _positive_test(0, value=0.99)
    prior = PriorSpec()
    settings = PassSettings.for_pass(DAConfig(ensemble_size=10, learn_parameters=False), "medium", obs, prior)
    params = learn_parameters(ens, traj, obs, settings)
    bounds = parameter_bounds(prior)
    for k, (lo, hi) in bounds.items():
        assert np.all(params[:, k] >= lo) and np.all(params[:, k] <= hi)


def test_inflation_identity_and_scaling():
    rng = np.random.default_rng(7)
    x = 0.5 + rng.uniform(-0.01, 0.01, size=(50, 6, 3))
    np.testing.assert_allclose(inflate(x, 1.0, 0.0, rng), x)
    wide = inflate(x, 3.0, 0.0, rng)
    np.testing.assert_allclose(wide.var(axis=0), 9.0 * x.var(axis=0), rtol=1e-9)
    np.testing.assert_allclose(wide.mean(axis=0), x.mean(axis=0), atol=1e-12)
    with pytest.raises(ValueError):
        inflate(x, 0.5, 0.0, rng)


def test_initial_ensemble_follows_priors():
    prior = PriorSpec()
    ens = init_ensemble(np.zeros((50, 3)), prior, 400, make_rng(8, "ensemble"))
    assert ens.states.shape == (400, 6, 50)
    np.testing.assert_allclose(ens.states.sum(axis=1), 1.0)
    assert set(np.unique(ens.states[:, I])) <= {0.0, 1.0}
    beta = ens.params[:, 0]
    assert beta.min() >= prior.beta_min and beta.max() <= prior.beta_max
    assert (1.0 / ens.params[:, 1]).mean() == pytest.approx(prior.min_period + prior.latent_shape * prior.latent_scale, rel=0.03)
    assert np.all(1.0 / ens.params[:, 2] >= prior.min_period)
    with pytest.raises(ValueError):
        init_ensemble(np.zeros((5, 3)), prior, 1, make_rng(8, "ensemble"))


def test_cycle_without_observations_is_a_forecast():
    ens = _ensemble(m=5)
    da = DAConfig(ensemble_size=5)
    result = da_cycle(ens, ObservationSet.empty(), ContactSet.empty(), 0.0, 1.0, da, PriorSpec(), make_rng(1, "da"))
    expected, _ = riskmodel.integrate(ens, ContactSet.empty(), 0.0, 1.0)
    np.testing.assert_array_equal(result.ensemble.states, expected.states)
    assert result.diagnostics["n_observations"] == 0.0
    assert result.ensemble.t == 1.0


def test_cycle_pulls_observed_node_towards_positive_test():
    ens = _ensemble(m=20, seed=2)
    da = DAConfig(ensemble_size=20)
    forecast, _ = riskmodel.integrate(ens, ContactSet.empty(), 0.0, 1.0)
    result = da_cycle(ens, _positive_test(3), ContactSet.empty(), 0.0, 1.0, da, PriorSpec(), make_rng(2, "da"))
    assert result.ensemble.states[:, I, 3].mean() > forecast.states[:, I, 3].mean()
    assert result.diagnostics["n_medium"] == 1.0
    assert "update_medium" in result.diagnostics
    assert 0.0 <= result.diagnostics["closure_in_band"] <= 1.0


def _fixed_trajectory(ens: riskmodel.Ensemble) -> riskmodel.Trajectory:
    return riskmodel.Trajectory(times=[0.0, 1.0], states=[ens.states, ens.states])


def test_conservation_pulls_member_sums_towards_one():
    ens = _ensemble(m=30, seed=9)
    # mass leaked into R puts every member off the simplex
    ens.states[:, R] = np.random.default_rng(9).uniform(0.05, 0.15, size=(30, 4))
    traj = _fixed_trajectory(ens)
    value = float(ens.states[:, I, 0].mean())
    obs = ObservationSet.build(0, [0], [ObservationKind.TEST_POSITIVE], [value], [0.3])
    settings = PassSettings.for_pass(DAConfig(ensemble_size=30), "medium", obs, PriorSpec())
    updated = eakf_update(ens, traj, obs, settings)
    before = np.abs(ens.states[:, :, 0].sum(axis=1) - 1.0).mean()
    after = np.abs(updated.states[:, :, 0].sum(axis=1) - 1.0).mean()
    assert after < before


def test_update_ignores_observation_order():
    ens = _ensemble(m=20, seed=10)
    _, traj = riskmodel.integrate(ens, ContactSet.empty(), 0.0, 1.0)
    obs = ObservationSet.build(
        0,
        [0, 1, 2],
        [ObservationKind.TEST_POSITIVE, ObservationKind.TEST_NEGATIVE, ObservationKind.TEST_POSITIVE],
        [0.45, 0.002, 0.6],
        [0.55, 0.002, 0.4],
    )
    settings = PassSettings.for_pass(DAConfig(ensemble_size=20), "medium", obs, PriorSpec())
    ordered = eakf_update(ens, traj, obs, settings)
    shuffled = eakf_update(ens, traj, obs.subset(np.array([2, 0, 1])), settings)
    np.testing.assert_allclose(shuffled.states, ordered.states)
    np.testing.assert_allclose(shuffled.params, ordered.params)


def test_informative_observation_shrinks_parameter_spread():
    rng = np.random.default_rng(11)
    ens = _ensemble(m=40, seed=11)
    ens.params[:, 1] = 1.0 / rng.uniform(2.0, 6.0, size=(40, 4))
    ens.params[:, 2] = 1.0 / rng.uniform(2.0, 5.0, size=(40, 4))
    _, traj = riskmodel.integrate(ens, ContactSet.empty(), 0.0, 1.0)
    obs = _positive_test(0, value=0.9)
    obs.error_rate[:] = 0.05
    prior = PriorSpec()
    settings = PassSettings.for_pass(DAConfig(ensemble_size=40), "medium", obs, prior)
    params = learn_parameters(ens, traj, obs, replace(settings, delta=0.0, delta_min=0.0))
    before = ens.params[:, :, 0].std(axis=0)
    after = params[:, :, 0].std(axis=0)
    assert np.all(after <= before * (1.0 + 1e-9) + 1e-12)
    assert after.sum() < before.sum()
