from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import ClassVar, Dict, Tuple, Type

import numpy as np

from ibac.errors import ConfigError, EmptyDatasetError, ShapeError
from ibac.tensor_core import Rng, as_matrix

HEAD_REGISTRY: Dict[str, Type["ActionHead"]] = {}


class ActionHead(ABC):
    """
    Maps latents (or other frozen features) to true actions. Subclasses are
    registered by ``kind`` so checkpoints can rebuild them.
    """
    kind: ClassVar[str] = ""

    def __init_subclass__(cls, **kwargs):
        super().__init_subclass__(**kwargs)
        if cls.kind:
            HEAD_REGISTRY[cls.kind] = cls

    @abstractmethod
    def predict(self, features: np.ndarray) -> np.ndarray:
        raise NotImplementedError("Please implement predict() in your derived head.")

    @abstractmethod
    def to_state(self) -> Tuple[dict, np.ndarray]:
        raise NotImplementedError("Please implement to_state() in your derived head.")

    @classmethod
    @abstractmethod
    def from_state(cls, header: dict, vector: np.ndarray) -> "ActionHead":
        raise NotImplementedError("Please implement from_state() in your derived head.")


@dataclass(frozen=True)
class FewShotSplit:
    """
    ``labeled``: the M rows whose actions a head may read. ``held_out``: the
    evaluation rows. A fixed share of the rows is held out first and the
    labeled rows are the front of the remaining permutation, so splits with
    the same seed are nested in M and share their held-out set.
    """
    labeled: np.ndarray
    held_out: np.ndarray
    seed: int

    def __post_init__(self):
        if self.labeled.shape[0] < 1:
            raise ConfigError("head.m: need at least one labeled row")
        if np.intersect1d(self.labeled, self.held_out).size:
            raise ShapeError("labeled and held-out indices overlap")

    @property
    def m(self) -> int:
        return int(self.labeled.shape[0])

    @staticmethod
    def labelable(n: int, eval_fraction: float = 0.2) -> int:
        return n - max(1, int(round(n * eval_fraction)))

    @classmethod
    def draw(cls, n: int, m: int, seed: int, eval_fraction: float = 0.2) -> "FewShotSplit":
        if n < 2:
            raise EmptyDatasetError(f"a few-shot split needs at least 2 rows, dataset has {n}")
        pool = cls.labelable(n, eval_fraction)
        if m < 1:
            raise ConfigError(f"head.m: must be >= 1, got {m}")
        if m > pool:
            raise ConfigError(f"head.m: M={m} exceeds the {pool} labelable rows of a {n}-row dataset")
        perm = Rng(seed).spawn("few_shot_split").permutation(n)
        return cls(labeled=perm[:m], held_out=perm[pool:], seed=seed)

    def nested(self, m: int) -> "FewShotSplit":
        if m > self.m:
            raise ConfigError(f"head.m: nested split of M={m} from a split with M={self.m}")
        return FewShotSplit(self.labeled[:m], self.held_out, self.seed)


@dataclass(frozen=True)
class HeadEvaluation:
    mse: float
    per_channel_mse: np.ndarray
    n: int


def evaluate_head(head: ActionHead, features: np.ndarray, actions: np.ndarray, indices) -> HeadEvaluation:
    """Squared error of ``head`` on the indexed rows, overall and per action channel."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size == 0:
        raise EmptyDatasetError("evaluate_head needs at least one row")
    features = as_matrix(features, name="features")
    actions = as_matrix(actions, name="actions")
    if features.shape[0] != actions.shape[0]:
        raise ShapeError(f"features have {features.shape[0]} rows, actions have {actions.shape[0]}")
    if indices.min() < 0 or indices.max() >= features.shape[0]:
        raise ShapeError(f"indices out of range for {features.shape[0]} rows")
    err = (head.predict(features[indices]) - actions[indices]) ** 2
    return HeadEvaluation(float(err.mean()), err.mean(axis=0), int(indices.size))


class MeanActionHead(ActionHead):
    """Predicts the labeled mean action for every input."""
    kind = "mean"

    def __init__(self, mean: np.ndarray):
        self.mean = np.asarray(mean, dtype=np.float64).ravel()

    def predict(self, features):
        features = as_matrix(features, name="features")
        return np.tile(self.mean, (features.shape[0], 1))

    def to_state(self):
        return {"d_a": int(self.mean.shape[0])}, self.mean

    @classmethod
    def from_state(cls, header, vector):
        if vector.shape != (header["d_a"],):
            raise ValueError(f"mean head expects {header['d_a']} values, got {vector.shape}")
        return cls(vector)


def fit_mean(actions: np.ndarray, split: FewShotSplit) -> MeanActionHead:
    actions = as_matrix(actions, name="actions")
    return MeanActionHead(actions[split.labeled].mean(axis=0))
