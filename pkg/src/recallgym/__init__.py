"""recallgym package.

Proactive retrieval for lifelong-learning agents, at desk scale:
a policy that decides when to consult its own experience base, trained on branched rollouts.
"""

from __future__ import annotations

from recallgym.cli import main
from recallgym.config import RunConfig, load_config
from recallgym.env import CombinationLock, EnvConfig, TaskInstance
from recallgym.errors import RecallGymError
from recallgym.expbase import ExperienceBase, RetrievalBudget
from recallgym.policy import ActionSpace, PolicyParams
from recallgym.rollout import build_pair, run_episode
from recallgym.trainer import Trainer, run_evolution

__all__: list[str] = [
    "ActionSpace",
    "CombinationLock",
    "EnvConfig",
    "ExperienceBase",
    "PolicyParams",
    "RecallGymError",
    "RetrievalBudget",
    "RunConfig",
    "TaskInstance",
    "Trainer",
    "build_pair",
    "load_config",
    "main",
    "run_episode",
    "run_evolution",
]
