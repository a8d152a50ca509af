from dataclasses import dataclass
from typing import Tuple

import numpy as np

from ibac.errors import ShapeError
from ibac.tensor_core import Rng

DEFAULT_LV_CLAMP = (-8.0, 4.0)


@dataclass(frozen=True)
class GaussianPosterior:
    """
    Diagonal Gaussian q(z|.) per row: ``mu`` and ``log_var`` are (N, D_z),
    log_var is the natural log of the variance, already clamped.
    """
    mu: np.ndarray
    log_var: np.ndarray

    def __post_init__(self):
        if self.mu.shape != self.log_var.shape or self.mu.ndim != 2:
            raise ShapeError(f"posterior mu {self.mu.shape} and log_var {self.log_var.shape} must be equal 2-D shapes")

    @property
    def d_z(self) -> int:
        return self.mu.shape[1]

    @property
    def std(self) -> np.ndarray:
        return np.exp(0.5 * self.log_var)

    @classmethod
    def from_encoder_output(cls, out: np.ndarray, d_z: int,
                            lv_clamp: Tuple[float, float] = DEFAULT_LV_CLAMP) -> Tuple["GaussianPosterior", np.ndarray]:
        """
        Split an encoder output of width 2*d_z into the mu and log_var heads.
        Also returns the mask of log_var entries inside the clamp, where the
        clamp passes gradient through.
        """
        if out.ndim != 2 or out.shape[1] != 2 * d_z:
            raise ShapeError(f"encoder output shape {out.shape} does not split into 2 x {d_z} heads")
        lo, hi = lv_clamp
        raw = out[:, d_z:]
        inside = (raw >= lo) & (raw <= hi)
        return cls(out[:, :d_z].copy(), np.clip(raw, lo, hi)), inside


def reparameterize(posterior: GaussianPosterior, rng: Rng) -> np.ndarray:
    eps = rng.normal(posterior.mu.shape)
    return posterior.mu + posterior.std * eps


def kl_standard_normal(posterior: GaussianPosterior) -> np.ndarray:
    """
    KL(N(mu, sigma^2) || N(0, I)) per row, summed over latent dimensions.
    """
    mu, lv = posterior.mu, posterior.log_var
    return 0.5 * np.sum(mu * mu + np.exp(lv) - 1.0 - lv, axis=1)


def kl_standard_normal_grad(posterior: GaussianPosterior) -> Tuple[np.ndarray, np.ndarray]:
    """
    Per-row gradient of kl_standard_normal with respect to (mu, log_var).
    """
    return posterior.mu.copy(), 0.5 * (np.exp(posterior.log_var) - 1.0)
