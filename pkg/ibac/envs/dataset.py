"""
Synthetic transition datasets.

A dataset stores raw observations (O_t, O_{t+k}) and the hidden action labels
row by row, episode after episode, ``episode_len - k`` rows per episode.
Training code receives only an ``ObservationPairs`` view (standardized
observations, no labels); the labels are reachable through ``actions`` for
evaluation.
"""
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Type

import numpy as np

from ibac.config import LABEL_REDUCTIONS, EnvConfig, plain
from ibac.containers import read_container, write_container
from ibac.envs.arm2link import Arm2LinkEnv
from ibac.envs.base import BaseEnv
from ibac.envs.pointmass import PointMassEnv
from ibac.errors import ConfigError, EmptyDatasetError, FormatError, HeaderMismatchError, ShapeError
from ibac.logs import get_logger
from ibac.tensor_core import Rng

logger = get_logger(__name__)

DATASET_MAGIC = b"IBDS"
DATASET_VERSION = 1

ENVS: Dict[str, Type[BaseEnv]] = {"pointmass": PointMassEnv, "arm2link": Arm2LinkEnv}


def make_env(config: EnvConfig) -> BaseEnv:
    return ENVS[config.kind](config)


@dataclass(frozen=True)
class ObservationPairs:
    """Label-free, standardized (O_t, O_{t+k}) rows: everything training sees."""
    obs_t: np.ndarray
    obs_next: np.ndarray

    def __post_init__(self):
        if self.obs_t.shape != self.obs_next.shape or self.obs_t.ndim != 2:
            raise ShapeError(f"O_t {self.obs_t.shape} and O_next {self.obs_next.shape} must have equal 2-D shapes")

    def __len__(self):
        return self.obs_t.shape[0]

    @property
    def d_obs(self) -> int:
        return self.obs_t.shape[1]

    def take(self, indices) -> "ObservationPairs":
        return ObservationPairs(self.obs_t[indices], self.obs_next[indices])

    def stacked(self) -> np.ndarray:
        return np.hstack([self.obs_t, self.obs_next])


@dataclass
class TransitionDataset:
    obs_t: np.ndarray
    obs_next: np.ndarray
    actions: np.ndarray
    offset: int
    config: EnvConfig
    obs_mean: np.ndarray
    obs_std: np.ndarray
    label_reduction: str = "first"

    def __post_init__(self):
        n = self.obs_t.shape[0]
        if self.obs_next.shape != self.obs_t.shape or self.actions.shape[0] != n:
            raise ShapeError(f"row counts differ: O_t {self.obs_t.shape}, O_next {self.obs_next.shape}, "
                             f"actions {self.actions.shape}")
        if self.offset < 1:
            raise ShapeError(f"offset must be >= 1, got {self.offset}")

    def __len__(self):
        return self.obs_t.shape[0]

    def __repr__(self):
        return (f"TransitionDataset(kind={self.config.kind}, N={len(self)}, d_obs={self.d_obs}, "
                f"d_a={self.d_a}, k={self.offset}, seed={self.seed})")

    @property
    def seed(self) -> int:
        return self.config.seed

    @property
    def d_obs(self) -> int:
        return self.obs_t.shape[1]

    @property
    def d_a(self) -> int:
        return self.actions.shape[1]

    @property
    def rows_per_episode(self) -> int:
        return self.config.episode_len - self.offset

    @property
    def episode_index(self) -> np.ndarray:
        return np.repeat(np.arange(self.config.episodes), self.rows_per_episode)

    def standardize(self, obs: np.ndarray) -> np.ndarray:
        return (obs - self.obs_mean) / self.obs_std

    def observation_pairs(self) -> ObservationPairs:
        return ObservationPairs(self.standardize(self.obs_t), self.standardize(self.obs_next))

    def summary(self) -> dict:
        return {"kind": self.config.kind, "n": len(self), "d_obs": self.d_obs, "d_a": self.d_a,
                "offset": self.offset, "episodes": self.config.episodes, "seed": self.seed}


def _action_process(config: EnvConfig, rng: Rng) -> np.ndarray:
    e, steps, d_a = config.episodes, config.episode_len - 1, config.action_dim
    if config.action_mode == "iid":
        return rng.uniform((e, steps, d_a), -1.0, 1.0)
    n_seg = -(-steps // config.segment_len)
    segments = rng.uniform((e, n_seg, d_a), -1.0, 1.0)
    return np.repeat(segments, config.segment_len, axis=1)[:, :steps]


def _nuisance(config: EnvConfig, rng: Rng) -> np.ndarray:
    """
    ``static``: one N(0, 1) draw per episode. ``drift``: that draw plus a
    Gaussian random walk. ``flicker``: a stationary AR(1) with unit variance
    and lag-one correlation ``nuisance_rho``, so each frame carries a fresh
    innovation that the previous frame cannot predict.
    """
    e, length, d = config.episodes, config.episode_len, config.nuisance_dim
    start = rng.normal((e, 1, d))
    if config.nuisance_mode == "static":
        return np.repeat(start, length, axis=1)
    if config.nuisance_mode == "flicker":
        rho = config.nuisance_rho
        innovations = np.sqrt(1.0 - rho * rho) * rng.normal((e, length - 1, d))
        out = np.empty((e, length, d))
        out[:, 0] = start[:, 0]
        for t in range(1, length):
            out[:, t] = rho * out[:, t - 1] + innovations[:, t - 1]
        return out
    steps = config.nuisance_drift_sigma * rng.normal((e, length - 1, d))
    walk = np.concatenate([np.zeros((e, 1, d)), np.cumsum(steps, axis=1)], axis=1)
    return start + walk


def generate(config: EnvConfig) -> TransitionDataset:
    """
    Roll out ``episodes`` independent episodes and return the k=1 dataset.
    Deterministic in the config (seed included).
    """
    config = config.validate()
    env = make_env(config)
    rng = Rng(config.seed)
    actions = _action_process(config, rng.spawn("actions"))

    states = np.empty((config.episodes, config.episode_len, config.state_dim))
    states[:, 0] = env.initial_states(rng.spawn("initial_state"), config.episodes)
    for t in range(config.episode_len - 1):
        states[:, t + 1] = env.step(states[:, t], actions[:, t])

    blocks = [env.state_features(states)]
    if config.velocity_features:
        vel = np.zeros(states.shape[:2] + (env.n_velocity_features,))
        vel[:, 1:] = env.velocity(states[:, 1:], states[:, :-1])
        blocks.append(vel)
    if config.nuisance_dim:
        blocks.append(_nuisance(config, rng.spawn("nuisance")))
    frames = np.concatenate(blocks, axis=-1)
    if config.obs_noise_sigma > 0:
        frames = frames + config.obs_noise_sigma * rng.spawn("obs_noise").normal(frames.shape)

    flat = frames.reshape(-1, frames.shape[-1])
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    std = np.where(std > 0, std, 1.0)

    dataset = TransitionDataset(
        obs_t=frames[:, :-1].reshape(-1, frames.shape[-1]),
        obs_next=frames[:, 1:].reshape(-1, frames.shape[-1]),
        actions=actions.reshape(-1, config.action_dim),
        offset=1, config=config, obs_mean=mean, obs_std=std)
    logger.info("generated %s", dataset)
    return dataset


def recover_action(config: EnvConfig, obs_t: np.ndarray, obs_next: np.ndarray) -> np.ndarray:
    return make_env(config).recover_action(obs_t, obs_next)


def offset_pairs(dataset: TransitionDataset, k: int, reduction: str = "first") -> TransitionDataset:
    """
    Re-pair a k=1 dataset as (O_t, O_{t+k}) within each episode. The label is
    a_t (``first``), or the sum or mean of a_t..a_{t+k-1}.
    """
    if dataset.offset != 1:
        raise ConfigError(f"offset_pairs needs a k=1 source dataset, got k={dataset.offset}")
    if k < 1:
        raise ConfigError(f"offset: must be >= 1, got {k}")
    if reduction not in LABEL_REDUCTIONS:
        raise ConfigError(f"label_reduction: must be one of {LABEL_REDUCTIONS}, got {reduction!r}")
    length = dataset.config.episode_len
    if k >= length:
        raise EmptyDatasetError(f"offset k={k} leaves no pairs in episodes of length {length}")
    if k == 1:
        return TransitionDataset(dataset.obs_t.copy(), dataset.obs_next.copy(), dataset.actions.copy(),
                                 1, dataset.config, dataset.obs_mean, dataset.obs_std, reduction)

    e, rows = dataset.config.episodes, length - 1
    obs_t = dataset.obs_t.reshape(e, rows, -1)
    obs_next = dataset.obs_next.reshape(e, rows, -1)
    acts = dataset.actions.reshape(e, rows, -1)
    keep = length - k
    if reduction == "first":
        labels = acts[:, :keep]
    else:
        labels = sum(acts[:, j:j + keep] for j in range(k))
        if reduction == "mean":
            labels = labels / k
    return TransitionDataset(
        obs_t=obs_t[:, :keep].reshape(e * keep, -1),
        obs_next=obs_next[:, k - 1:k - 1 + keep].reshape(e * keep, -1),
        actions=np.ascontiguousarray(labels).reshape(e * keep, -1),
        offset=k, config=dataset.config, obs_mean=dataset.obs_mean, obs_std=dataset.obs_std,
        label_reduction=reduction)


def save_dataset(dataset: TransitionDataset, path) -> Path:
    header = {
        "config": plain(dataset.config),
        "seed": dataset.seed,
        "offset": dataset.offset,
        "label_reduction": dataset.label_reduction,
        "n": len(dataset),
        "d_obs": dataset.d_obs,
        "d_a": dataset.d_a,
        "obs_mean": [float(v) for v in dataset.obs_mean],
        "obs_std": [float(v) for v in dataset.obs_std],
        "dtype": "<f4",
    }
    payload = b"".join(np.ascontiguousarray(block, dtype="<f4").tobytes()
                       for block in (dataset.obs_t, dataset.obs_next, dataset.actions))
    return write_container(path, DATASET_MAGIC, DATASET_VERSION, header, payload)


def load_dataset(path) -> TransitionDataset:
    _, header, payload = read_container(path, DATASET_MAGIC, DATASET_VERSION)
    try:
        config = EnvConfig.from_dict(header["config"])
        n, d_obs, d_a, k = int(header["n"]), int(header["d_obs"]), int(header["d_a"]), int(header["offset"])
        mean = np.asarray(header["obs_mean"], dtype=np.float64)
        std = np.asarray(header["obs_std"], dtype=np.float64)
        reduction = header.get("label_reduction", "first")
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: malformed dataset header ({exc})")

    if config.episodes * (config.episode_len - k) != n:
        raise HeaderMismatchError(f"{path}: header says N={n} but episodes x (episode_len - k) = "
                                  f"{config.episodes} x ({config.episode_len} - {k})")
    if mean.shape != (d_obs,) or std.shape != (d_obs,):
        raise HeaderMismatchError(f"{path}: standardization constants do not match d_obs={d_obs}")
    expected = 4 * n * (2 * d_obs + d_a)
    if len(payload) != expected:
        raise HeaderMismatchError(f"{path}: payload has {len(payload)} bytes, header implies {expected}")

    values = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    cut1, cut2 = n * d_obs, 2 * n * d_obs
    return TransitionDataset(
        obs_t=values[:cut1].reshape(n, d_obs),
        obs_next=values[cut1:cut2].reshape(n, d_obs),
        actions=values[cut2:].reshape(n, d_a),
        offset=k, config=config, obs_mean=mean, obs_std=std, label_reduction=reduction)
