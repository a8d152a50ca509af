"""
Direct projection heads: an MLP regressing actions from standardized inputs,
trained on the labeled rows only.

``direct`` reads latents. ``scratch`` is the same regressor reading the
standardized observation pair [O_t; O_{t+k}], the no-pretraining baseline.
"""
from dataclasses import dataclass

import numpy as np

from ibac.config import HeadConfig
from ibac.errors import ShapeError
from ibac.heads.base import ActionHead, FewShotSplit, HeadEvaluation, evaluate_head
from ibac.logs import get_logger
from ibac.tensor_core import (AdamState, MlpSpec, Rng, adam_step, as_matrix, init_params, mlp_backward,
                              mlp_forward)

logger = get_logger(__name__)


class DirectProjectionHead(ActionHead):
    kind = "direct"

    def __init__(self, spec: MlpSpec, params: np.ndarray, in_mean: np.ndarray, in_std: np.ndarray):
        self.spec = spec
        self.params = np.asarray(params, dtype=np.float64)
        self.in_mean = np.asarray(in_mean, dtype=np.float64)
        self.in_std = np.asarray(in_std, dtype=np.float64)
        if self.params.shape != (spec.n_params,):
            raise ShapeError(f"head params {self.params.shape} do not match spec ({spec.n_params},)")
        if self.in_mean.shape != (spec.n_in,) or self.in_std.shape != (spec.n_in,):
            raise ShapeError(f"input standardization must have {spec.n_in} entries")

    def __repr__(self):
        return f"{type(self).__name__}(widths={self.spec.layer_widths})"

    def standardize(self, features: np.ndarray) -> np.ndarray:
        return (as_matrix(features, self.spec.n_in, name="features") - self.in_mean) / self.in_std

    def predict(self, features):
        return mlp_forward(self.params, self.spec, self.standardize(features))

    def to_state(self):
        return {"spec": self.spec.to_dict()}, np.concatenate([self.params, self.in_mean, self.in_std])

    @classmethod
    def from_state(cls, header, vector):
        spec = MlpSpec.from_dict(header["spec"])
        n, d = spec.n_params, spec.n_in
        if vector.shape != (n + 2 * d,):
            raise ValueError(f"{cls.kind} head expects {n + 2 * d} values, got {vector.shape}")
        return cls(spec, vector[:n], vector[n:n + d], vector[n + d:])


class ScratchProjectionHead(DirectProjectionHead):
    kind = "scratch"


@dataclass
class HeadFit:
    head: ActionHead
    train_mse: float
    evaluation: HeadEvaluation

    @property
    def mse(self) -> float:
        return self.evaluation.mse


MIN_VALIDATION_M = 5


def input_standardization(x: np.ndarray):
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    return mean, np.where(std > 0, std, 1.0)


def validation_rows(m: int, config: HeadConfig, rng: Rng):
    """
    Positions (into the labeled rows) used for fitting and for early stopping.
    Small M or ``val_fraction == 0`` fits on everything and never stops early.
    """
    n_val = int(round(m * config.val_fraction))
    if m < MIN_VALIDATION_M or n_val < 1:
        return np.arange(m), np.arange(0)
    order = rng.permutation(m)
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def start_at_mean(params: np.ndarray, spec: MlpSpec, mean_action: np.ndarray) -> np.ndarray:
    """Zero the output weights and set the output bias, so training starts from the mean predictor."""
    params = params.copy()
    n_out, n_in = spec.layer_widths[-1], spec.layer_widths[-2]
    params[-(n_in + 1) * n_out:-n_out] = 0.0
    params[-n_out:] = mean_action
    return params


def fit_direct(features: np.ndarray, actions: np.ndarray, split: FewShotSplit, config: HeadConfig = HeadConfig(),
               kind: str = "direct") -> HeadFit:
    """
    Minimize the mean squared error on the labeled rows with minibatch Adam
    plus L2 weight decay, then score the held-out rows.

    Training starts from the labeled mean. A ``val_fraction`` slice of the
    labeled rows is kept aside; the parameters with the lowest error on it
    are returned, and training stops after ``patience`` epochs without
    improvement.
    """
    head_cls = ScratchProjectionHead if kind == "scratch" else DirectProjectionHead
    features = as_matrix(features, name="features")
    actions = as_matrix(actions, name="actions")
    if features.shape[0] != actions.shape[0]:
        raise ShapeError(f"features have {features.shape[0]} rows, actions have {actions.shape[0]}")
    x = features[split.labeled]
    y = actions[split.labeled]
    mean, std = input_standardization(x)
    spec = MlpSpec((x.shape[1], *config.hidden, y.shape[1]), config.activation, config.residual)
    rng = Rng(config.seed).spawn("head", head_cls.kind)
    fit_rows, val_rows = validation_rows(split.m, config, rng.spawn("validation"))
    params = start_at_mean(init_params(spec, rng.spawn("init")), spec, y[fit_rows].mean(axis=0))
    shuffle = rng.spawn("shuffle")
    state = AdamState.zeros(spec.n_params)
    xs = (x - mean) / std
    x_fit, y_fit, x_val, y_val = xs[fit_rows], y[fit_rows], xs[val_rows], y[val_rows]

    def val_mse(p):
        return float(np.mean((mlp_forward(p, spec, x_val) - y_val) ** 2))

    best, best_epoch = params, 0
    best_val = val_mse(params) if val_rows.size else np.inf
    m = x_fit.shape[0]
    for epoch in range(1, config.epochs + 1):
        order = shuffle.permutation(m)
        for start in range(0, m, config.batch_size):
            idx = order[start:start + config.batch_size]
            resid = mlp_forward(params, spec, x_fit[idx]) - y_fit[idx]
            grads, _ = mlp_backward(params, spec, x_fit[idx], 2.0 * resid / resid.size)
            params, state = adam_step(params, grads + config.weight_decay * params, state, config.lr)
        if not val_rows.size:
            best, best_epoch = params, epoch
            continue
        loss = val_mse(params)
        if loss < best_val:
            best, best_val, best_epoch = params, loss, epoch
        elif epoch - best_epoch >= config.patience:
            break

    head = head_cls(spec, best, mean, std)
    train_mse = float(np.mean((head.predict(x) - y) ** 2))
    evaluation = evaluate_head(head, features, actions, split.held_out)
    logger.info("%s head  M=%d  epoch=%d  train mse=%.6g  held-out mse=%.6g", head_cls.kind, split.m, best_epoch,
                train_mse, evaluation.mse)
    return HeadFit(head, train_mse, evaluation)
