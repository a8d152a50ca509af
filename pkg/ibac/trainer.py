from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd
from tqdm import tqdm

from ibac.config import ModelConfig, TrainConfig
from ibac.envs.dataset import ObservationPairs
from ibac.errors import DivergenceError, EmptyDatasetError
from ibac.logs import get_logger
from ibac.models.base import LatentActionModel, LossBreakdown, build_model
from ibac.tensor_core import AdamState, Rng, adam_step

logger = get_logger(__name__)

CURVE_COLUMNS = ["epoch", "loss_total", "loss_rec", "loss_kl"]


@dataclass
class TrainResult:
    model: LatentActionModel
    curve: pd.DataFrame

    @property
    def final_losses(self) -> Optional[LossBreakdown]:
        if self.curve.empty:
            return None
        last = self.curve.iloc[-1]
        return LossBreakdown(float(last["loss_total"]), float(last["loss_rec"]), float(last["loss_kl"]))


class Trainer:
    """
    Minibatch Adam on a latent action model's loss. Streams for the weight
    init, the minibatch order and the reparameterisation noise are all spawned
    from ``config.seed``, so (seed, config, data) fixes the result bit for bit.
    """

    def __init__(self, model: LatentActionModel, config: TrainConfig, show_progress: bool = True):
        self.model = model
        self.config = config
        self.show_progress = show_progress

        self.rows = []
        self.state = AdamState.zeros(model.params.shape[0])

    def run(self, pairs: ObservationPairs) -> TrainResult:
        if not isinstance(pairs, ObservationPairs):
            raise TypeError(f"training consumes ObservationPairs only, got {type(pairs).__name__}")
        if len(pairs) == 0:
            raise EmptyDatasetError("cannot train on an empty dataset")
        cfg = self.config
        rng = Rng(cfg.seed)
        shuffle = rng.spawn("shuffle")
        noise = rng.spawn("noise")
        n = len(pairs)
        params = self.model.params

        epochs = range(cfg.epochs)
        bar = tqdm(epochs, desc=f"train {self.model.kind} beta={cfg.beta:g}", unit="epoch",
                   leave=False, disable=not self.show_progress)
        for epoch in bar:
            order = shuffle.permutation(n)
            sums = np.zeros(3)
            for batch_index, start in enumerate(range(0, n, cfg.batch_size)):
                idx = order[start:start + cfg.batch_size]
                try:
                    losses, grads = self.model.loss_and_grad(pairs.obs_t[idx], pairs.obs_next[idx], cfg.beta, noise)
                    params, self.state = adam_step(params, grads, self.state, cfg.lr)
                except DivergenceError as exc:
                    logger.warning("training diverged at epoch %d, batch %d: %s", epoch, batch_index, exc)
                    raise DivergenceError(f"{self.model.kind} training diverged", epoch=epoch,
                                          batch_index=batch_index,
                                          last_good=TrainResult(self.model, self._curve())) from exc
                self.model = self.model.with_params(params)
                sums += len(idx) * np.array([losses.total, losses.rec, losses.kl])
            means = sums / n
            self.rows.append({"epoch": epoch + 1, "loss_total": means[0], "loss_rec": means[1], "loss_kl": means[2]})
            if (epoch + 1) % cfg.log_every == 0:
                logger.info("epoch %d/%d  total=%.6g rec=%.6g kl=%.6g", epoch + 1, cfg.epochs, *means)
        return TrainResult(self.model, self._curve())

    def _curve(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=CURVE_COLUMNS).astype({"epoch": "int64"})


def init_model(kind: str, d_obs: int, model_config: ModelConfig, train_config: TrainConfig) -> LatentActionModel:
    """The seeded initialisation a run with ``train_config.seed`` starts from."""
    return build_model(kind, d_obs, model_config, Rng(train_config.seed).spawn("init"), train_config.lv_clamp)


def train(kind: str, pairs: ObservationPairs, config: TrainConfig, model_config: ModelConfig = ModelConfig(),
          show_progress: bool = True) -> TrainResult:
    model = init_model(kind, pairs.d_obs, model_config, config)
    return Trainer(model, config, show_progress).run(pairs)


def extract_latents(model: LatentActionModel, pairs: ObservationPairs) -> np.ndarray:
    """Posterior means for every transition, row i <-> transition i."""
    return model.extract_latents(pairs.obs_t, pairs.obs_next)
