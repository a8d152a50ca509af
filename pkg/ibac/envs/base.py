from abc import ABC, abstractmethod

import numpy as np

from ibac.config import EnvConfig
from ibac.errors import UnsupportedObservationError
from ibac.tensor_core import Rng


class BaseEnv(ABC):
    """
    Deterministic first-order dynamics s_{t+1} = f(s_t, a_t) whose action is
    recoverable from two consecutive noise-free observations.

    Observation layout is [state features; velocity features (optional);
    nuisance features].
    """

    def __init__(self, config: EnvConfig):
        self.config = config

    @property
    @abstractmethod
    def n_state_features(self) -> int:
        raise NotImplementedError("Please implement n_state_features in your derived env.")

    @property
    @abstractmethod
    def n_velocity_features(self) -> int:
        raise NotImplementedError("Please implement n_velocity_features in your derived env.")

    @property
    def obs_dim(self) -> int:
        vel = self.n_velocity_features if self.config.velocity_features else 0
        return self.n_state_features + vel + self.config.nuisance_dim

    @abstractmethod
    def initial_states(self, rng: Rng, n: int) -> np.ndarray:
        raise NotImplementedError("Please implement initial_states() in your derived env.")

    @abstractmethod
    def step(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        raise NotImplementedError("Please implement step() in your derived env.")

    @abstractmethod
    def state_features(self, states: np.ndarray) -> np.ndarray:
        raise NotImplementedError("Please implement state_features() in your derived env.")

    @abstractmethod
    def velocity(self, states: np.ndarray, previous: np.ndarray) -> np.ndarray:
        raise NotImplementedError("Please implement velocity() in your derived env.")

    @abstractmethod
    def action_from_features(self, feat_t: np.ndarray, feat_next: np.ndarray) -> np.ndarray:
        raise NotImplementedError("Please implement action_from_features() in your derived env.")

    def recover_action(self, obs_t: np.ndarray, obs_next: np.ndarray) -> np.ndarray:
        """
        Invert the dynamics from raw (unstandardized) observations.
        """
        obs_t = np.atleast_2d(np.asarray(obs_t, dtype=np.float64))
        obs_next = np.atleast_2d(np.asarray(obs_next, dtype=np.float64))
        for name, obs in (("O_t", obs_t), ("O_next", obs_next)):
            if obs.shape[1] != self.obs_dim:
                raise UnsupportedObservationError(
                    f"{name} has {obs.shape[1]} features, {self.config.kind} observations carry {self.obs_dim} "
                    f"({self.n_state_features} state features); the state is not recoverable")
        if self.n_state_features == 0:
            raise UnsupportedObservationError("observation has no state features to recover an action from")
        f = self.n_state_features
        return self.action_from_features(obs_t[:, :f], obs_next[:, :f])
