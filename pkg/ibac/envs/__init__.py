from ibac.envs.arm2link import Arm2LinkEnv
from ibac.envs.base import BaseEnv
from ibac.envs.dataset import (ObservationPairs, TransitionDataset, generate, load_dataset, make_env,
                               offset_pairs, recover_action, save_dataset)
from ibac.envs.pointmass import PointMassEnv
