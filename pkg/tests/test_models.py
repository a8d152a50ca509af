import numpy as np
import pytest

from ibac.config import ModelConfig
from ibac.errors import ConfigError, DivergenceError, ShapeError
from ibac.models import (GaussianPosterior, IdmModel, VibModel, build_model, idm_loss, kl_standard_normal,
                         reparameterize, vib_loss)
from ibac.models.posterior import kl_standard_normal_grad
from ibac.tensor_core import MlpSpec, Rng, grad_check


def _monte_carlo_kl(mu, lv, n, chunk, seed):
    """E_q[log q(z) - log p(z)] for a diagonal Gaussian q, summed over dimensions."""
    rng = Rng(seed)
    std = np.exp(0.5 * lv)
    total = 0.0
    for _ in range(n // chunk):
        eps = rng.normal((chunk, mu.shape[0]))
        z = mu + std * eps
        log_ratio = -0.5 * lv - 0.5 * eps * eps + 0.5 * z * z
        total += log_ratio.sum()
    return total / n


def _posterior(mu, lv):
    return GaussianPosterior(np.atleast_2d(np.asarray(mu, dtype=float)), np.atleast_2d(np.asarray(lv, dtype=float)))


def test_kl_is_zero_at_the_prior():
    post = _posterior(np.zeros((3, 4)), np.zeros((3, 4)))
    assert np.array_equal(kl_standard_normal(post), np.zeros(3))


def test_kl_known_value_against_monte_carlo():
    mu, lv = np.array([0.3]), np.array([0.7])
    closed = kl_standard_normal(_posterior(mu, lv))[0]
    assert closed == pytest.approx(0.5 * (0.09 + np.exp(0.7) - 1.0 - 0.7), abs=1e-15)
    estimate = _monte_carlo_kl(mu, lv, 4_000_000, 1_000_000, seed=1)
    assert abs(estimate - closed) / closed < 1e-2


@pytest.mark.parametrize("case", range(20))
def test_kl_matches_monte_carlo(case):
    rng = Rng(100 + case)
    mu = rng.uniform(2, 1.0, 2.0) * np.where(rng.uniform(2) < 0.5, -1.0, 1.0)
    lv = rng.uniform(2, -0.5, 0.5)
    closed = kl_standard_normal(_posterior(mu, lv))[0]
    assert closed >= 0
    estimate = _monte_carlo_kl(mu, lv, 1_000_000, 500_000, seed=case)
    assert abs(estimate - closed) / closed < 3e-2


def test_kl_is_nonnegative():
    rng = Rng(4)
    post = _posterior(3 * rng.normal((200, 3)), rng.uniform((200, 3), -8.0, 4.0))
    assert (kl_standard_normal(post) >= 0).all()


def test_kl_gradient():
    rng = Rng(5)
    mu, lv = rng.normal(4), rng.uniform(4, -2.0, 2.0)

    def f(flat):
        post = _posterior(flat[:4], flat[4:])
        g_mu, g_lv = kl_standard_normal_grad(post)
        return float(kl_standard_normal(post)[0]), np.concatenate([g_mu[0], g_lv[0]])

    assert grad_check(f, np.concatenate([mu, lv])) < 1e-8


def test_log_var_is_clamped():
    out = np.array([[0.5, -1.0, 9.0, -20.0], [0.0, 0.0, 1.0, -3.0]])
    post, inside = GaussianPosterior.from_encoder_output(out, d_z=2)
    assert np.array_equal(post.log_var, np.array([[4.0, -8.0], [1.0, -3.0]]))
    assert np.array_equal(post.mu, out[:, :2])
    assert np.array_equal(inside, np.array([[False, False], [True, True]]))


def test_encoder_output_width_is_checked():
    with pytest.raises(ShapeError):
        GaussianPosterior.from_encoder_output(np.zeros((3, 5)), d_z=2)


def test_reparameterize_moments():
    post = _posterior(np.full((100_000, 1), 1.5), np.full((100_000, 1), np.log(0.25)))
    z = reparameterize(post, Rng(2))
    assert abs(z.mean() - 1.5) < 0.01
    assert abs(z.std() - 0.5) < 0.01


@pytest.mark.parametrize("kind", ["vib", "idm"])
@pytest.mark.parametrize("residual", [False, True])
@pytest.mark.parametrize("beta", [0.0, 0.3])
def test_loss_gradient_matches_finite_differences(make_model, kind, residual, beta):
    model = make_model(kind, d_obs=3, d_z=2, hidden=(4, 4), residual=residual, seed=7)
    rng = Rng(8)
    obs_t, obs_next = rng.normal((6, 3)), rng.normal((6, 3))

    def f(params):
        losses, grad = model.with_params(params).loss_and_grad(obs_t, obs_next, beta, Rng(9))
        return losses.total, grad

    assert grad_check(f, model.params) < 1e-5


def test_loss_breakdown_adds_up(make_model):
    model = make_model("vib")
    rng = Rng(1)
    obs_t, obs_next = rng.normal((10, 3)), rng.normal((10, 3))
    losses = model.loss(obs_t, obs_next, 0.25, Rng(2))
    assert losses.total == pytest.approx(losses.rec + 0.25 * losses.kl, rel=1e-15)
    assert losses.rec > 0 and losses.kl > 0
    with_grad, grad = model.loss_and_grad(obs_t, obs_next, 0.25, Rng(2))
    assert with_grad == losses
    assert grad.shape == model.params.shape


def test_beta_zero_drops_the_kl_term(make_model):
    model = make_model("idm")
    rng = Rng(1)
    obs_t, obs_next = rng.normal((10, 3)), rng.normal((10, 3))
    losses = model.loss(obs_t, obs_next, 0.0, Rng(2))
    assert losses.total == losses.rec


def test_vib_encoder_never_sees_the_next_observation(make_model):
    model = make_model("vib")
    rng = Rng(3)
    obs_t = rng.normal((8, 3))
    a = model.posterior(obs_t, rng.normal((8, 3)))
    b = model.posterior(obs_t, rng.normal((8, 3)))
    assert np.array_equal(a.mu, b.mu) and np.array_equal(a.log_var, b.log_var)
    assert np.array_equal(model.encode(obs_t).mu, a.mu)


def test_vib_decoder_sees_only_z(make_model):
    model = make_model("vib")
    z = Rng(1).normal((5, 2))
    out_a = model.predict_next(Rng(2).normal((5, 3)), z)
    out_b = model.predict_next(Rng(3).normal((5, 3)), z)
    assert np.array_equal(out_a, out_b)
    assert np.array_equal(model.decode(z), out_a)


def test_idm_encoder_sees_both_observations(make_model):
    model = make_model("idm")
    rng = Rng(3)
    obs_t = rng.normal((8, 3))
    a = model.posterior(obs_t, rng.normal((8, 3)))
    b = model.posterior(obs_t, rng.normal((8, 3)))
    assert not np.array_equal(a.mu, b.mu)


def test_idm_decoder_can_copy_the_current_observation():
    d_obs, d_z = 3, 2
    enc = MlpSpec((2 * d_obs, 2 * d_z))
    dec = MlpSpec((d_obs + d_z, d_obs))
    copy = np.hstack([np.eye(d_obs), np.zeros((d_obs, d_z))])
    dec_params = np.concatenate([copy.ravel(), np.zeros(d_obs)])
    model = IdmModel(enc, dec, d_z, d_obs, decoder_params=dec_params)
    obs = Rng(0).normal((20, d_obs))
    losses = model.loss(obs, obs, 1.0, Rng(1))
    assert losses.rec == 0.0
    assert losses.kl == 0.0


def test_extract_latents_are_posterior_means(make_model):
    model = make_model("idm")
    rng = Rng(4)
    obs_t, obs_next = rng.normal((7, 3)), rng.normal((7, 3))
    latents = model.extract_latents(obs_t, obs_next)
    assert latents.shape == (7, 2)
    assert np.array_equal(latents, model.posterior(obs_t, obs_next).mu)
    assert np.array_equal(latents, model.extract_latents(obs_t, obs_next))


def test_huge_parameters_diverge(make_model):
    model = make_model("vib", scale=1e300)
    rng = Rng(1)
    with pytest.raises(DivergenceError):
        model.loss_and_grad(rng.normal((4, 3)), rng.normal((4, 3)), 1.0, Rng(2))


def test_build_model_wiring():
    config = ModelConfig(d_z=3, hidden=(8,))
    vib = build_model("vib", 5, config, Rng(0))
    idm = build_model("idm", 5, config, Rng(0))
    assert isinstance(vib, VibModel) and isinstance(idm, IdmModel)
    assert vib.encoder_spec.layer_widths == (5, 8, 6)
    assert vib.decoder_spec.layer_widths == (3, 8, 5)
    assert idm.encoder_spec.layer_widths == (10, 8, 6)
    assert idm.decoder_spec.layer_widths == (8, 8, 5)
    assert np.array_equal(build_model("vib", 5, config, Rng(0)).params, vib.params)
    assert not build_model("vib", 5, config).params.any()


def test_build_model_rejects_unknown_kind():
    with pytest.raises(ConfigError, match="unknown model kind"):
        build_model("vae", 3, ModelConfig())


def test_wrong_wiring_is_rejected():
    with pytest.raises(ShapeError):
        VibModel(MlpSpec((6, 4)), MlpSpec((2, 3)), d_z=2, d_obs=3)


def test_with_params_checks_length(make_model):
    model = make_model("vib")
    with pytest.raises(ShapeError):
        model.with_params(np.zeros(model.params.shape[0] - 1))


def test_observation_width_is_checked(make_model):
    model = make_model("idm")
    with pytest.raises(ShapeError, match="columns"):
        model.loss(np.zeros((4, 2)), np.zeros((4, 2)), 0.1, Rng(0))
    with pytest.raises(ShapeError, match="rows"):
        model.loss(np.zeros((4, 3)), np.zeros((5, 3)), 0.1, Rng(0))


def test_typed_loss_helpers(make_model):
    vib, idm = make_model("vib"), make_model("idm")
    obs = Rng(0).normal((4, 3))
    assert vib_loss(vib, obs, obs, 0.1, Rng(1)) == vib.loss(obs, obs, 0.1, Rng(1))
    assert idm_loss(idm, obs, obs, 0.1, Rng(1)) == idm.loss(obs, obs, 0.1, Rng(1))
    with pytest.raises(TypeError):
        vib_loss(idm, obs, obs, 0.1, Rng(1))


def test_state_round_trip(make_model):
    model = make_model("idm", residual=True, hidden=(4, 4))
    header, params = model.to_state()
    restored = IdmModel.from_state(header, params)
    assert np.array_equal(restored.params, model.params)
    assert restored.encoder_spec == model.encoder_spec and restored.lv_clamp == model.lv_clamp


def test_vib_encoder_ignores_the_next_observation_across_random_models(make_model):
    for seed in range(100):
        rng = Rng(seed).spawn("cases")
        d_obs, d_z = 1 + seed % 5, 1 + seed % 3
        model = make_model("vib", d_obs=d_obs, d_z=d_z, hidden=(3 + seed % 4,), residual=bool(seed % 2), seed=seed)
        obs_t = rng.normal((6, d_obs))
        a = model.posterior(obs_t, rng.normal((6, d_obs)))
        b = model.posterior(obs_t, 10.0 * rng.normal((6, d_obs)))
        assert np.array_equal(a.mu, b.mu) and np.array_equal(a.log_var, b.log_var), seed
