"""Stochastic neural network skills with a count-based information bonus,
and a hierarchical manager that reuses them on sparse-reward tasks."""
from ._kernels import backend, use_backend
from .core import RngStream, Trajectory, TrajectoryBatch, discounted_return
from .envs import DynamicsConfig, MazeSpec, GatherSpec, make_env, make_maze
from .mi import MiConfig, VisitationGrid, apply_mi_bonus
from .policy import GaussianMlpPolicy, ManagerPolicy, SkillBank, SnnPolicy
from .trpo import TrpoConfig, trpo_step

__version__ = "0.1.0"
