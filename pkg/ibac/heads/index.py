"""
Discrete-index head: quantize latents with a k-means codebook, learn a
classifier from frozen features to the code index (self-supervised, no
actions involved), and decode a predicted index to the mean labeled action
of that code.
"""
import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.cluster import KMeans
from sklearn.exceptions import ConvergenceWarning

from ibac.config import HeadConfig
from ibac.errors import EmptyCodebookError, ShapeError
from ibac.heads.base import ActionHead, FewShotSplit, HeadEvaluation, evaluate_head
from ibac.heads.direct import input_standardization
from ibac.logs import get_logger
from ibac.tensor_core import (AdamState, MlpSpec, Rng, adam_step, as_matrix, init_params, mlp_backward,
                              mlp_forward, softmax_cross_entropy)

logger = get_logger(__name__)


def nearest_centroid(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Index of the closest centroid per row; ties go to the lowest index."""
    d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=-1)
    return np.argmin(d2, axis=1)


@dataclass(frozen=True)
class Codebook:
    centroids: np.ndarray
    empty: np.ndarray

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def d_z(self) -> int:
        return self.centroids.shape[1]

    def assign(self, latents: np.ndarray) -> np.ndarray:
        return nearest_centroid(as_matrix(latents, self.d_z, name="latents"), self.centroids)


def build_codebook(latents: np.ndarray, k: int, seed: int, max_iter: int = 100) -> Codebook:
    """
    k-means++ seeding, one initialisation, Lloyd iterations capped at
    ``max_iter``. Centroids that no latent is nearest to are flagged empty
    (identical latents leave a single effective cluster).
    """
    latents = as_matrix(latents, name="latents")
    if k < 1:
        raise ShapeError(f"codebook size must be >= 1, got {k}")
    if latents.shape[0] < k:
        raise ShapeError(f"need at least K={k} latents, got {latents.shape[0]}")
    km = KMeans(n_clusters=k, init="k-means++", n_init=1, max_iter=max_iter, algorithm="lloyd",
                random_state=int(seed) % (2 ** 32))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        km.fit(latents)
    centroids = np.asarray(km.cluster_centers_, dtype=np.float64)
    counts = np.bincount(nearest_centroid(latents, centroids), minlength=k)
    empty = counts == 0
    if empty.any():
        logger.warning("codebook: %d of %d centroids have no members", int(empty.sum()), k)
    return Codebook(centroids, empty)


class QuantizedIndexHead(ActionHead):
    kind = "index"

    def __init__(self, codebook: Codebook, spec: MlpSpec, params: np.ndarray, in_mean: np.ndarray,
                 in_std: np.ndarray, action_table: np.ndarray, fallback: np.ndarray):
        if codebook.k < 1:
            raise EmptyCodebookError("index head needs a nonempty codebook")
        if spec.n_out != codebook.k or action_table.shape[0] != codebook.k:
            raise ShapeError(f"classifier ({spec.n_out} logits) and action table ({action_table.shape[0]} rows) "
                             f"must match codebook size {codebook.k}")
        self.codebook = codebook
        self.spec = spec
        self.params = np.asarray(params, dtype=np.float64)
        self.in_mean = np.asarray(in_mean, dtype=np.float64)
        self.in_std = np.asarray(in_std, dtype=np.float64)
        self.action_table = np.asarray(action_table, dtype=np.float64)
        self.fallback = np.asarray(fallback, dtype=bool)

    @property
    def k(self) -> int:
        return self.codebook.k

    def logits(self, features: np.ndarray) -> np.ndarray:
        x = (as_matrix(features, self.spec.n_in, name="features") - self.in_mean) / self.in_std
        return mlp_forward(self.params, self.spec, x)

    def predict_index(self, features: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(features), axis=1)

    def predict(self, features):
        return self.action_table[self.predict_index(features)]

    def to_state(self):
        header = {"k": self.k, "d_z": self.codebook.d_z, "d_a": int(self.action_table.shape[1]),
                  "spec": self.spec.to_dict()}
        vector = np.concatenate([self.codebook.centroids.ravel(), self.codebook.empty.astype(np.float64),
                                 self.params, self.in_mean, self.in_std, self.action_table.ravel(),
                                 self.fallback.astype(np.float64)])
        return header, vector

    @classmethod
    def from_state(cls, header, vector):
        k, d_z, d_a = int(header["k"]), int(header["d_z"]), int(header["d_a"])
        spec = MlpSpec.from_dict(header["spec"])
        sizes = [k * d_z, k, spec.n_params, spec.n_in, spec.n_in, k * d_a, k]
        if vector.shape != (sum(sizes),):
            raise ValueError(f"index head expects {sum(sizes)} values, got {vector.shape}")
        parts = np.split(vector, np.cumsum(sizes)[:-1])
        codebook = Codebook(parts[0].reshape(k, d_z), parts[1] > 0)
        return cls(codebook, spec, parts[2], parts[3], parts[4], parts[5].reshape(k, d_a), parts[6] > 0)


@dataclass
class IndexHeadFit:
    head: QuantizedIndexHead
    index_accuracy: float
    evaluation: HeadEvaluation

    @property
    def mse(self) -> float:
        return self.evaluation.mse


def train_index_classifier(features: np.ndarray, assignments: np.ndarray, k: int, rows: np.ndarray,
                           config: HeadConfig):
    """Cross-entropy classifier from features to code indices on ``rows``."""
    x = features[rows]
    targets = assignments[rows]
    mean, std = input_standardization(x)
    xs = (x - mean) / std
    spec = MlpSpec((x.shape[1], *config.hidden, k), config.activation, config.residual)
    rng = Rng(config.seed).spawn("head", "index")
    params = init_params(spec, rng.spawn("init"))
    shuffle = rng.spawn("shuffle")
    state = AdamState.zeros(spec.n_params)
    n = x.shape[0]
    for _ in range(config.classifier_epochs):
        order = shuffle.permutation(n)
        for start in range(0, n, config.classifier_batch_size):
            idx = order[start:start + config.classifier_batch_size]
            _, d_logits = softmax_cross_entropy(mlp_forward(params, spec, xs[idx]), targets[idx])
            grads, _ = mlp_backward(params, spec, xs[idx], d_logits)
            params, state = adam_step(params, grads + config.weight_decay * params, state, config.lr)
    return spec, params, mean, std


def action_table(assignments: np.ndarray, labeled_actions: np.ndarray, k: int):
    """
    Per-code mean of the labeled actions. Codes without a labeled member fall
    back to the overall labeled mean and are flagged.
    """
    table = np.tile(labeled_actions.mean(axis=0), (k, 1))
    fallback = np.ones(k, dtype=bool)
    for code in np.unique(assignments):
        table[code] = labeled_actions[assignments == code].mean(axis=0)
        fallback[code] = False
    return table, fallback


def fit_index_head(features: np.ndarray, assignments: np.ndarray, codebook: Codebook, labeled_actions: np.ndarray,
                   split: FewShotSplit, config: HeadConfig = HeadConfig()) -> QuantizedIndexHead:
    """
    The classifier trains on every row outside ``split.held_out`` against the
    codebook assignments, not on all rows: held-out accuracy would otherwise
    score rows the classifier was fit on. Only ``labeled_actions`` (the
    actions of ``split.labeled``, in that order) are ever read.
    """
    if codebook.k < 1 or codebook.empty.all():
        raise EmptyCodebookError("codebook has no usable centroids")
    features = as_matrix(features, name="features")
    assignments = np.asarray(assignments, dtype=np.int64)
    labeled_actions = as_matrix(labeled_actions, name="labeled actions")
    if assignments.shape != (features.shape[0],):
        raise ShapeError(f"{assignments.shape[0]} assignments for {features.shape[0]} feature rows")
    if labeled_actions.shape[0] != split.m:
        raise ShapeError(f"{labeled_actions.shape[0]} labeled actions for a split with M={split.m}")

    train_rows = np.setdiff1d(np.arange(features.shape[0]), split.held_out)
    spec, params, mean, std = train_index_classifier(features, assignments, codebook.k, train_rows, config)
    table, fallback = action_table(assignments[split.labeled], labeled_actions, codebook.k)
    if fallback.any():
        logger.info("index head: %d of %d codes use the labeled-mean fallback", int(fallback.sum()), codebook.k)
    return QuantizedIndexHead(codebook, spec, params, mean, std, table, fallback)


def evaluate_index_head(head: QuantizedIndexHead, features: np.ndarray, assignments: np.ndarray,
                        actions: np.ndarray, split: FewShotSplit) -> IndexHeadFit:
    """Held-out index accuracy against the codebook, and held-out action error."""
    held = split.held_out
    accuracy = float(np.mean(head.predict_index(features[held]) == np.asarray(assignments)[held]))
    evaluation = evaluate_head(head, features, actions, held)
    logger.info("index head  K=%d  M=%d  index accuracy=%.4f  held-out mse=%.6g", head.k, split.m, accuracy,
                evaluation.mse)
    return IndexHeadFit(head, accuracy, evaluation)
