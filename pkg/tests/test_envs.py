import numpy as np
import pytest

from ibac.config import EnvConfig
from ibac.envs import Arm2LinkEnv, PointMassEnv, generate, make_env, recover_action
from ibac.errors import ConfigError, UnsupportedObservationError


def _episodes(dataset):
    e, rows = dataset.config.episodes, dataset.rows_per_episode
    return (dataset.obs_t.reshape(e, rows, -1), dataset.obs_next.reshape(e, rows, -1),
            dataset.actions.reshape(e, rows, -1))


def test_make_env():
    assert isinstance(make_env(EnvConfig(kind="pointmass")), PointMassEnv)
    assert isinstance(make_env(EnvConfig(kind="arm2link")), Arm2LinkEnv)


@pytest.mark.parametrize("config,expected", [
    (EnvConfig(kind="pointmass", state_dim=2, action_dim=2, nuisance_dim=8), 10),
    (EnvConfig(kind="pointmass", state_dim=3, action_dim=3, nuisance_dim=0, velocity_features=True), 6),
    (EnvConfig(kind="arm2link", nuisance_dim=4), 10),
    (EnvConfig(kind="arm2link", nuisance_dim=0, velocity_features=True), 8),
])
def test_observation_width(config, expected):
    assert make_env(config).obs_dim == expected
    dataset = generate(EnvConfig(**{**vars(config), "episodes": 2, "episode_len": 5}))
    assert dataset.d_obs == expected


def test_pointmass_actions_are_recovered_from_observations():
    config = EnvConfig(kind="pointmass", nuisance_dim=5, episodes=20, episode_len=30, seed=9)
    dataset = generate(config)
    recovered = recover_action(config, dataset.obs_t, dataset.obs_next)
    assert np.allclose(recovered, dataset.actions, rtol=0, atol=1e-12)


def test_arm_actions_are_recovered_from_observations():
    config = EnvConfig(kind="arm2link", nuisance_dim=2, episodes=20, episode_len=30, seed=4, velocity_features=True)
    dataset = generate(config)
    recovered = recover_action(config, dataset.obs_t, dataset.obs_next)
    assert np.allclose(recovered, dataset.actions, rtol=0, atol=1e-9)


def test_recovery_rejects_observations_without_state():
    config = EnvConfig(kind="pointmass", nuisance_dim=3)
    with pytest.raises(UnsupportedObservationError, match="not recoverable"):
        recover_action(config, np.zeros((2, 3)), np.zeros((2, 3)))


def test_arm_jacobian_matches_finite_differences():
    env = Arm2LinkEnv(EnvConfig(kind="arm2link", link_lengths=(1.0, 0.8)))
    q = np.array([[0.3, -1.1], [2.5, 0.7], [-3.0, 3.0]])
    h = 1e-6
    jac = env.jacobian(q)
    for i in range(2):
        step = np.zeros(2)
        step[i] = h
        numeric = (env.endpoint(q + step) - env.endpoint(q - step)) / (2 * h)
        assert np.allclose(jac[:, :, i], numeric, atol=1e-8)


def test_arm_endpoint_at_rest():
    env = Arm2LinkEnv(EnvConfig(kind="arm2link", link_lengths=(1.0, 0.8)))
    assert np.allclose(env.endpoint(np.zeros((1, 2))), [[1.8, 0.0]])


def test_generation_is_deterministic():
    config = EnvConfig(kind="arm2link", nuisance_dim=3, nuisance_mode="drift", obs_noise_sigma=0.1,
                       episodes=4, episode_len=9, seed=17)
    a, b = generate(config), generate(config)
    assert np.array_equal(a.obs_t, b.obs_t)
    assert np.array_equal(a.actions, b.actions)
    c = generate(EnvConfig(**{**vars(config), "seed": 18}))
    assert not np.array_equal(a.obs_t, c.obs_t)


def test_dataset_size_and_actions_range():
    dataset = generate(EnvConfig(episodes=7, episode_len=11, seed=0))
    assert len(dataset) == 7 * 10
    assert dataset.d_a == 2
    assert (np.abs(dataset.actions) <= 1.0).all()
    assert dataset.episode_index.tolist()[:11] == [0] * 10 + [1]


def test_static_nuisance_is_constant_within_an_episode():
    dataset = generate(EnvConfig(nuisance_dim=4, nuisance_mode="static", episodes=5, episode_len=8, seed=2))
    obs_t, obs_next, _ = _episodes(dataset)
    nuisance = obs_t[:, :, 2:]
    assert np.array_equal(nuisance, np.repeat(nuisance[:, :1], nuisance.shape[1], axis=1))
    assert np.array_equal(obs_next[:, :, 2:], nuisance)
    assert not np.array_equal(nuisance[0, 0], nuisance[1, 0])


def test_drifting_nuisance_moves():
    dataset = generate(EnvConfig(nuisance_dim=4, nuisance_mode="drift", nuisance_drift_sigma=0.05,
                                 episodes=3, episode_len=8, seed=2))
    obs_t, obs_next, _ = _episodes(dataset)
    steps = obs_next[:, :, 2:] - obs_t[:, :, 2:]
    assert (steps != 0).all()
    assert np.abs(steps).max() < 0.5


def test_piecewise_constant_actions():
    dataset = generate(EnvConfig(action_mode="piecewise_constant", segment_len=4, episodes=3, episode_len=13,
                                 seed=1))
    _, _, actions = _episodes(dataset)
    for start in range(0, 12, 4):
        block = actions[:, start:start + 4]
        assert np.array_equal(block, np.repeat(block[:, :1], block.shape[1], axis=1))
    assert not np.array_equal(actions[:, 0], actions[:, 4])


def test_velocity_features_carry_the_previous_action():
    config = EnvConfig(kind="pointmass", nuisance_dim=0, velocity_features=True, episodes=3, episode_len=6, seed=5)
    dataset = generate(config)
    obs_t, obs_next, actions = _episodes(dataset)
    assert np.allclose(obs_next[:, :, 2:4], actions, rtol=0, atol=1e-12)
    assert np.array_equal(obs_t[:, 0, 2:4], np.zeros((3, 2)))


def test_observation_noise_breaks_exact_recovery():
    config = EnvConfig(kind="pointmass", nuisance_dim=0, obs_noise_sigma=0.1, episodes=3, episode_len=6, seed=5)
    dataset = generate(config)
    err = recover_action(config, dataset.obs_t, dataset.obs_next) - dataset.actions
    assert np.abs(err).max() > 1e-3


@pytest.mark.parametrize("changes,field", [
    ({"episodes": 0}, "env.episodes"),
    ({"episode_len": 1}, "env.episode_len"),
    ({"kind": "cartpole"}, "env.kind"),
    ({"state_dim": 3, "action_dim": 2}, "env.action_dim"),
    ({"kind": "arm2link", "state_dim": 3, "action_dim": 3}, "env.state_dim"),
])
def test_invalid_env_configs(changes, field):
    with pytest.raises(ConfigError, match=field):
        generate(EnvConfig(**changes))


@pytest.mark.parametrize("kind,atol", [("pointmass", 1e-12), ("arm2link", 1e-9)])
def test_action_recovery_holds_across_random_configs(kind, atol):
    for seed in range(100):
        config = EnvConfig(kind=kind, nuisance_dim=seed % 4, velocity_features=bool(seed % 2),
                           action_mode=("iid", "piecewise_constant")[seed % 3 == 0], segment_len=1 + seed % 5,
                           obs_noise_sigma=0.0, episodes=3, episode_len=6, seed=seed)
        dataset = generate(config)
        recovered = recover_action(config, dataset.obs_t, dataset.obs_next)
        assert np.allclose(recovered, dataset.actions, rtol=0, atol=atol), seed


@pytest.mark.parametrize("rho", [0.0, 0.3, 0.8])
def test_flickering_nuisance_is_stationary_with_lag_one_correlation_rho(rho):
    dataset = generate(EnvConfig(nuisance_dim=4, nuisance_mode="flicker", nuisance_rho=rho,
                                 episodes=400, episode_len=50, seed=5))
    obs_t, obs_next, _ = _episodes(dataset)
    now, then = obs_next[:, :, 2:].ravel(), obs_t[:, :, 2:].ravel()
    assert abs(now.mean()) < 0.05
    assert now.var() == pytest.approx(1.0, abs=0.05)
    assert np.corrcoef(now, then)[0, 1] == pytest.approx(rho, abs=0.03)
    assert np.array_equal(obs_next[:, :-1, 2:], obs_t[:, 1:, 2:])


def test_flicker_rejects_a_unit_correlation():
    with pytest.raises(ConfigError, match="nuisance_rho"):
        EnvConfig(nuisance_mode="flicker", nuisance_rho=1.0).validate()
