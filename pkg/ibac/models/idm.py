import numpy as np

from ibac.config import ModelConfig
from ibac.models.base import LatentActionModel, LossBreakdown
from ibac.models.posterior import GaussianPosterior
from ibac.tensor_core import MlpSpec, Rng, as_matrix


class IdmModel(LatentActionModel):
    """
    Inverse-dynamics baseline: encodes the pair [O_t; O_{t+k}] to z and
    reconstructs O_{t+k} from [O_t; z]. The decoder can copy O_t directly,
    which is the path nuisance information leaks through.
    """
    kind = "idm"

    @classmethod
    def specs_for(cls, d_obs: int, config: ModelConfig):
        hidden = tuple(config.hidden)
        encoder = MlpSpec((2 * d_obs,) + hidden + (2 * config.d_z,), config.activation, config.residual)
        decoder = MlpSpec((d_obs + config.d_z,) + hidden + (d_obs,), config.activation, config.residual)
        return encoder, decoder

    def specs_for_dims(self):
        return (2 * self.d_obs, 2 * self.d_z), (self.d_obs + self.d_z, self.d_obs)

    def encoder_input(self, obs_t, obs_next):
        return np.hstack([obs_t, obs_next])

    def decoder_input(self, obs_t, z):
        return np.hstack([obs_t, z])

    def latent_grad(self, decoder_input_grad):
        return decoder_input_grad[:, self.d_obs:]

    def encode(self, obs_t: np.ndarray, obs_next: np.ndarray) -> GaussianPosterior:
        return self.posterior(obs_t, obs_next)

    def decode(self, obs_t: np.ndarray, z: np.ndarray) -> np.ndarray:
        obs_t = as_matrix(obs_t, self.d_obs, name="O_t")
        return self.predict_next(obs_t, z)


def idm_loss(model: IdmModel, obs_t: np.ndarray, obs_next: np.ndarray, beta: float, rng: Rng) -> LossBreakdown:
    if not isinstance(model, IdmModel):
        raise TypeError(f"idm_loss needs an IdmModel, got {type(model).__name__}")
    return model.loss(obs_t, obs_next, beta, rng)
