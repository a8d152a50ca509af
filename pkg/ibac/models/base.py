from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import ClassVar, Dict, Optional, Tuple, Type

import numpy as np

from ibac.config import ModelConfig
from ibac.errors import ConfigError, DivergenceError, NonFiniteError, ShapeError
from ibac.models.posterior import (DEFAULT_LV_CLAMP, GaussianPosterior, kl_standard_normal,
                                   kl_standard_normal_grad)
from ibac.tensor_core import MlpSpec, Rng, as_matrix, init_params, mlp_backward, mlp_forward

MODEL_REGISTRY: Dict[str, Type["LatentActionModel"]] = {}


@dataclass(frozen=True)
class LossBreakdown:
    total: float
    rec: float
    kl: float

    def is_finite(self) -> bool:
        return bool(np.isfinite([self.total, self.rec, self.kl]).all())


class LatentActionModel(ABC):
    """
    Encoder q(z|.) producing a diagonal Gaussian, reparameterised sample, and a
    decoder predicting the next observation. Subclasses only decide what each
    network sees; loss, gradients and latent extraction are shared.

    Parameters (phi, theta) are kept as two flat vectors; ``params`` is their
    concatenation, encoder first.
    """
    kind: ClassVar[str] = ""

    def __init__(self, encoder_spec: MlpSpec, decoder_spec: MlpSpec, d_z: int, d_obs: int,
                 encoder_params: Optional[np.ndarray] = None, decoder_params: Optional[np.ndarray] = None,
                 lv_clamp: Tuple[float, float] = DEFAULT_LV_CLAMP):
        self.encoder_spec = encoder_spec
        self.decoder_spec = decoder_spec
        self.d_z = int(d_z)
        self.d_obs = int(d_obs)
        self.lv_clamp = (float(lv_clamp[0]), float(lv_clamp[1]))
        self.encoder_params = (np.zeros(encoder_spec.n_params) if encoder_params is None
                               else np.array(encoder_params, dtype=np.float64))
        self.decoder_params = (np.zeros(decoder_spec.n_params) if decoder_params is None
                               else np.array(decoder_params, dtype=np.float64))
        self._check_specs()
        if self.encoder_params.shape != (encoder_spec.n_params,):
            raise ShapeError(f"encoder params {self.encoder_params.shape} do not match spec ({encoder_spec.n_params},)")
        if self.decoder_params.shape != (decoder_spec.n_params,):
            raise ShapeError(f"decoder params {self.decoder_params.shape} do not match spec ({decoder_spec.n_params},)")

    def __init_subclass__(cls, **kwargs):
        super().__init_subclass__(**kwargs)
        if cls.kind:
            MODEL_REGISTRY[cls.kind] = cls

    def __repr__(self):
        return (f"{type(self).__name__}(d_obs={self.d_obs}, d_z={self.d_z}, "
                f"encoder={self.encoder_spec.layer_widths}, decoder={self.decoder_spec.layer_widths})")

    # wiring, decided per model

    @classmethod
    @abstractmethod
    def specs_for(cls, d_obs: int, config: ModelConfig) -> Tuple[MlpSpec, MlpSpec]:
        raise NotImplementedError("Please implement specs_for() in your derived model.")

    @abstractmethod
    def encoder_input(self, obs_t: np.ndarray, obs_next: np.ndarray) -> np.ndarray:
        raise NotImplementedError("Please implement encoder_input() in your derived model.")

    @abstractmethod
    def decoder_input(self, obs_t: np.ndarray, z: np.ndarray) -> np.ndarray:
        raise NotImplementedError("Please implement decoder_input() in your derived model.")

    @abstractmethod
    def latent_grad(self, decoder_input_grad: np.ndarray) -> np.ndarray:
        """Slice of the decoder input gradient that belongs to z."""
        raise NotImplementedError("Please implement latent_grad() in your derived model.")

    def _check_specs(self):
        enc, dec = self.specs_for_dims()
        if self.encoder_spec.n_in != enc[0] or self.encoder_spec.n_out != enc[1]:
            raise ShapeError(f"{self.kind} encoder must map {enc[0]} -> {enc[1]}, spec is {self.encoder_spec.layer_widths}")
        if self.decoder_spec.n_in != dec[0] or self.decoder_spec.n_out != dec[1]:
            raise ShapeError(f"{self.kind} decoder must map {dec[0]} -> {dec[1]}, spec is {self.decoder_spec.layer_widths}")

    @abstractmethod
    def specs_for_dims(self) -> Tuple[Tuple[int, int], Tuple[int, int]]:
        """(encoder in, out), (decoder in, out) widths this wiring requires."""
        raise NotImplementedError

    # construction

    @classmethod
    def build(cls, d_obs: int, config: ModelConfig, rng: Optional[Rng] = None,
              lv_clamp: Tuple[float, float] = DEFAULT_LV_CLAMP) -> "LatentActionModel":
        """
        Model with the default widths from ``config``; seeded random weights
        when ``rng`` is given, all-zero parameters otherwise.
        """
        encoder_spec, decoder_spec = cls.specs_for(d_obs, config)
        enc = dec = None
        if rng is not None:
            enc = init_params(encoder_spec, rng.spawn("encoder"))
            dec = init_params(decoder_spec, rng.spawn("decoder"))
        return cls(encoder_spec, decoder_spec, config.d_z, d_obs, enc, dec, lv_clamp)

    @property
    def params(self) -> np.ndarray:
        return np.concatenate([self.encoder_params, self.decoder_params])

    def with_params(self, params: np.ndarray) -> "LatentActionModel":
        params = np.asarray(params, dtype=np.float64)
        n_enc = self.encoder_spec.n_params
        if params.shape != (n_enc + self.decoder_spec.n_params,):
            raise ShapeError(f"parameter vector {params.shape} does not match model ({n_enc + self.decoder_spec.n_params},)")
        return type(self)(self.encoder_spec, self.decoder_spec, self.d_z, self.d_obs,
                          params[:n_enc], params[n_enc:], self.lv_clamp)

    def to_state(self) -> Tuple[dict, np.ndarray]:
        header = {"encoder_spec": self.encoder_spec.to_dict(), "decoder_spec": self.decoder_spec.to_dict(),
                  "d_z": self.d_z, "d_obs": self.d_obs, "lv_clamp": list(self.lv_clamp)}
        return header, self.params

    @classmethod
    def from_state(cls, header: dict, params: np.ndarray) -> "LatentActionModel":
        encoder_spec = MlpSpec.from_dict(header["encoder_spec"])
        decoder_spec = MlpSpec.from_dict(header["decoder_spec"])
        n_enc = encoder_spec.n_params
        return cls(encoder_spec, decoder_spec, header["d_z"], header["d_obs"],
                   params[:n_enc], params[n_enc:], tuple(header["lv_clamp"]))

    # forward pieces

    def _check_pair(self, obs_t, obs_next):
        obs_t = as_matrix(obs_t, self.d_obs, name="O_t")
        obs_next = as_matrix(obs_next, self.d_obs, name="O_next")
        if obs_t.shape[0] != obs_next.shape[0]:
            raise ShapeError(f"O_t has {obs_t.shape[0]} rows, O_next has {obs_next.shape[0]}")
        return obs_t, obs_next

    def posterior(self, obs_t: np.ndarray, obs_next: np.ndarray) -> GaussianPosterior:
        obs_t, obs_next = self._check_pair(obs_t, obs_next)
        out = mlp_forward(self.encoder_params, self.encoder_spec, self.encoder_input(obs_t, obs_next))
        post, _ = GaussianPosterior.from_encoder_output(out, self.d_z, self.lv_clamp)
        return post

    def predict_next(self, obs_t: np.ndarray, z: np.ndarray) -> np.ndarray:
        z = as_matrix(z, self.d_z, name="z")
        return mlp_forward(self.decoder_params, self.decoder_spec, self.decoder_input(obs_t, z))

    def extract_latents(self, obs_t: np.ndarray, obs_next: np.ndarray) -> np.ndarray:
        """Posterior means, one row per transition."""
        return self.posterior(obs_t, obs_next).mu

    # objective

    def loss_and_grad(self, obs_t: np.ndarray, obs_next: np.ndarray, beta: float, rng: Rng,
                      with_grad: bool = True) -> Tuple[LossBreakdown, Optional[np.ndarray]]:
        """
        loss_rec = mean over batch and features of (O_next - decode(z))^2,
        loss_kl  = mean over batch of the KL summed over latent dimensions,
        total    = loss_rec + beta * loss_kl.
        Gradient is with respect to ``params``.
        """
        obs_t, obs_next = self._check_pair(obs_t, obs_next)
        n = obs_t.shape[0]
        if n == 0:
            raise ShapeError("loss needs at least one row")
        try:
            enc_in = self.encoder_input(obs_t, obs_next)
            enc_out = mlp_forward(self.encoder_params, self.encoder_spec, enc_in)
            post, inside = GaussianPosterior.from_encoder_output(enc_out, self.d_z, self.lv_clamp)
            eps = rng.normal(post.mu.shape)
            std = post.std
            z = post.mu + std * eps
            dec_in = self.decoder_input(obs_t, z)
            pred = mlp_forward(self.decoder_params, self.decoder_spec, dec_in)
        except NonFiniteError as exc:
            raise DivergenceError(str(exc))

        resid = pred - obs_next
        rec = float(np.mean(resid * resid))
        kl = float(np.mean(kl_standard_normal(post)))
        losses = LossBreakdown(rec + beta * kl, rec, kl)
        if not losses.is_finite():
            raise DivergenceError("non-finite loss")
        if not with_grad:
            return losses, None

        d_pred = 2.0 * resid / resid.size
        g_dec, g_dec_in = mlp_backward(self.decoder_params, self.decoder_spec, dec_in, d_pred)
        dz = self.latent_grad(g_dec_in)
        kl_mu, kl_lv = kl_standard_normal_grad(post)
        d_mu = dz + beta * kl_mu / n
        d_lv = (dz * eps * 0.5 * std + beta * kl_lv / n) * inside
        g_enc, _ = mlp_backward(self.encoder_params, self.encoder_spec, enc_in, np.hstack([d_mu, d_lv]))
        return losses, np.concatenate([g_enc, g_dec])

    def loss(self, obs_t: np.ndarray, obs_next: np.ndarray, beta: float, rng: Rng) -> LossBreakdown:
        losses, _ = self.loss_and_grad(obs_t, obs_next, beta, rng, with_grad=False)
        return losses


def build_model(kind: str, d_obs: int, config: ModelConfig, rng: Optional[Rng] = None,
                lv_clamp: Tuple[float, float] = DEFAULT_LV_CLAMP) -> LatentActionModel:
    try:
        cls = MODEL_REGISTRY[kind]
    except KeyError:
        raise ConfigError(f"unknown model kind {kind!r}, expected one of {sorted(MODEL_REGISTRY)}")
    return cls.build(d_obs, config, rng, lv_clamp)
