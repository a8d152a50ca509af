import numpy as np

from ibac.config import ModelConfig
from ibac.models.base import LatentActionModel, LossBreakdown
from ibac.models.posterior import GaussianPosterior
from ibac.tensor_core import MlpSpec, Rng, as_matrix


class VibModel(LatentActionModel):
    """
    Information-bottleneck latent action model: the encoder sees only O_t and
    the decoder sees only z, so every bit the decoder needs about O_{t+k} has
    to pass through the KL-penalised code.
    """
    kind = "vib"

    @classmethod
    def specs_for(cls, d_obs: int, config: ModelConfig):
        hidden = tuple(config.hidden)
        encoder = MlpSpec((d_obs,) + hidden + (2 * config.d_z,), config.activation, config.residual)
        decoder = MlpSpec((config.d_z,) + hidden + (d_obs,), config.activation, config.residual)
        return encoder, decoder

    def specs_for_dims(self):
        return (self.d_obs, 2 * self.d_z), (self.d_z, self.d_obs)

    def encoder_input(self, obs_t, obs_next):
        return obs_t

    def decoder_input(self, obs_t, z):
        return z

    def latent_grad(self, decoder_input_grad):
        return decoder_input_grad

    def encode(self, obs_t: np.ndarray) -> GaussianPosterior:
        obs_t = as_matrix(obs_t, self.d_obs, name="O_t")
        return self.posterior(obs_t, obs_t)

    def decode(self, z: np.ndarray) -> np.ndarray:
        z = as_matrix(z, self.d_z, name="z")
        return self.predict_next(np.zeros((z.shape[0], self.d_obs)), z)


def vib_loss(model: VibModel, obs_t: np.ndarray, obs_next: np.ndarray, beta: float, rng: Rng) -> LossBreakdown:
    if not isinstance(model, VibModel):
        raise TypeError(f"vib_loss needs a VibModel, got {type(model).__name__}")
    return model.loss(obs_t, obs_next, beta, rng)
