import numpy as np

from ibac.envs.base import BaseEnv
from ibac.tensor_core import Rng


def wrap_angle(x: np.ndarray) -> np.ndarray:
    return np.arctan2(np.sin(x), np.cos(x))


class Arm2LinkEnv(BaseEnv):
    """
    Planar two-link arm. Joint angles advance by ``joint_step * a_t``; the
    observation carries the end-effector position followed by
    [sin q1, cos q1, sin q2, cos q2].
    """

    @property
    def n_state_features(self) -> int:
        return 6

    @property
    def n_velocity_features(self) -> int:
        return 2

    def initial_states(self, rng: Rng, n: int) -> np.ndarray:
        return rng.uniform((n, 2), -np.pi, np.pi)

    def step(self, states, actions):
        return states + self.config.joint_step * actions

    def endpoint(self, q: np.ndarray) -> np.ndarray:
        l1, l2 = self.config.link_lengths
        q1, q12 = q[..., 0], q[..., 0] + q[..., 1]
        return np.stack([l1 * np.cos(q1) + l2 * np.cos(q12), l1 * np.sin(q1) + l2 * np.sin(q12)], axis=-1)

    def jacobian(self, q: np.ndarray) -> np.ndarray:
        """d endpoint / d q, shape (..., 2, 2)."""
        l1, l2 = self.config.link_lengths
        q1, q12 = q[..., 0], q[..., 0] + q[..., 1]
        j = np.empty(q.shape[:-1] + (2, 2))
        j[..., 0, 0] = -l1 * np.sin(q1) - l2 * np.sin(q12)
        j[..., 0, 1] = -l2 * np.sin(q12)
        j[..., 1, 0] = l1 * np.cos(q1) + l2 * np.cos(q12)
        j[..., 1, 1] = l2 * np.cos(q12)
        return j

    def state_features(self, states):
        q = states
        return np.concatenate([self.endpoint(q), np.sin(q[..., :1]), np.cos(q[..., :1]),
                               np.sin(q[..., 1:2]), np.cos(q[..., 1:2])], axis=-1)

    def velocity(self, states, previous):
        return wrap_angle(states - previous)

    def joint_angles(self, feat: np.ndarray) -> np.ndarray:
        # atan2 is the least-squares angle for a (sin, cos) pair
        return np.stack([np.arctan2(feat[:, 2], feat[:, 3]), np.arctan2(feat[:, 4], feat[:, 5])], axis=-1)

    def action_from_features(self, feat_t, feat_next):
        dq = wrap_angle(self.joint_angles(feat_next) - self.joint_angles(feat_t))
        return dq / self.config.joint_step
