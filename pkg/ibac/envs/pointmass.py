import numpy as np

from ibac.envs.base import BaseEnv
from ibac.tensor_core import Rng


class PointMassEnv(BaseEnv):
    """
    s_{t+1} = s_t + a_t. The state is observed directly, so the action is
    the difference of the state features.
    """

    @property
    def n_state_features(self) -> int:
        return self.config.state_dim

    @property
    def n_velocity_features(self) -> int:
        return self.config.state_dim

    def initial_states(self, rng: Rng, n: int) -> np.ndarray:
        return rng.uniform((n, self.config.state_dim), -1.0, 1.0)

    def step(self, states, actions):
        return states + actions

    def state_features(self, states):
        return states

    def velocity(self, states, previous):
        return states - previous

    def action_from_features(self, feat_t, feat_next):
        return feat_next - feat_t
