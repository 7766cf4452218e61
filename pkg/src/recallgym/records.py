"""Run-directory artifacts: JSON-lines logs, checkpoints and trajectory replay.

A run directory holds:

- `config.toml`: the effective configuration;
- `metrics.jsonl`: one metrics record per iteration;
- `trajectories.jsonl`: one record per rollout, branches included;
- `checkpoints/iter-XXXXXX/` and `checkpoints/final/`: `policy.bin`, `base.jsonl` and `stats.json`.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Any, TextIO

from recallgym.env import CombinationLock, Goal, TaskInstance
from recallgym.errors import CheckpointError, ProtocolError, ReplayError
from recallgym.expbase import ExperienceBase
from recallgym.policy import PolicyParams
from recallgym.reward import GoalLengthStats
from recallgym.types import Action

if TYPE_CHECKING:
    from collections.abc import Iterator
    from types import TracebackType

    from recallgym.env import EnvConfig
    from recallgym.policy import ActionSpace
    from recallgym.reward import RewardBreakdown
    from recallgym.types import Trajectory

logger = logging.getLogger(__name__)

CONFIG_FILE = "config.toml"
METRICS_FILE = "metrics.jsonl"
TRAJECTORIES_FILE = "trajectories.jsonl"
VERIFY_FILE = "verify.json"
CHECKPOINTS_DIR = "checkpoints"
FINAL_CHECKPOINT = "final"


def dumps(record: dict[str, Any]) -> str:
    """Serialize a record on one line, keys sorted.

    Parameters:
        record: A JSON-compatible dictionary.

    Returns:
        The line, without its newline.
    """
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


class JsonlWriter:
    """Append records to a JSON-lines file."""

    def __init__(self, path: str | Path) -> None:
        """Initialize the writer.

        Parameters:
            path: Destination file, truncated on open.
        """
        self.path = Path(path)
        self._file: TextIO | None = None

    def __enter__(self) -> JsonlWriter:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._file = self.path.open("w", encoding="utf8")
        return self

    def __exit__(
        self,
        exc_type: type[BaseException] | None,
        exc_value: BaseException | None,
        traceback: TracebackType | None,
    ) -> None:
        if self._file is not None:
            self._file.close()
            self._file = None

    def write(self, record: dict[str, Any]) -> None:
        """Write one record and flush it.

        Parameters:
            record: A JSON-compatible dictionary.
        """
        if self._file is None:
            raise RuntimeError(f"{self.path} is not open")
        self._file.write(dumps(record) + "\n")
        self._file.flush()


def read_jsonl(path: str | Path) -> Iterator[dict[str, Any]]:
    """Read a JSON-lines file.

    Parameters:
        path: Source file.

    Yields:
        One record per non-empty line.
    """
    with Path(path).open(encoding="utf8") as file:
        for line in file:
            if line.strip():
                yield json.loads(line)


def trajectory_record(
    trajectory: Trajectory,
    *,
    run_id: str,
    iteration: int,
    breakdown: RewardBreakdown | None = None,
) -> dict[str, Any]:
    """Everything needed to audit and replay a rollout.

    Parameters:
        trajectory: The rollout.
        run_id: Run identifier.
        iteration: Iteration that produced it.
        breakdown: Its reward terms, when scored.

    Returns:
        A JSON-compatible dictionary.
    """
    return {
        "run_id": run_id,
        "iteration": iteration,
        "traj_id": trajectory.traj_id,
        "task_id": trajectory.task.task_id,
        "family": trajectory.family,
        "horizon": trajectory.task.horizon,
        "T": trajectory.T,
        "success": trajectory.success,
        "R_env": trajectory.env_return,
        "retrieval_enabled": trajectory.retrieval_enabled,
        "retrieval_steps": [[t, query] for t, query in trajectory.retrieval_steps],
        "branch_of": list(trajectory.branch_of) if trajectory.branch_of else None,
        "initial_context_ids": list(trajectory.initial_context_ids),
        "actions": [step.action.label for step in trajectory.steps],
        "masked": [step.mask_retrieval for step in trajectory.steps],
        "retrieved_ids": [list(step.retrieved_ids) for step in trajectory.steps],
        "rewards": [step.reward for step in trajectory.steps],
        "observations": [
            None if step.observation is None else [step.observation.cursor_position, step.observation.last_feedback.value]
            for step in trajectory.steps
        ],
        "breakdown": breakdown.as_dict() if breakdown else None,
    }


def find_trajectory(path: str | Path, traj_id: str) -> dict[str, Any]:
    """Look up a trajectory record by id.

    Parameters:
        path: A trajectory log.
        traj_id: The trajectory id.

    Raises:
        ReplayError: When the id is not in the log.

    Returns:
        The record.
    """
    for record in read_jsonl(path):
        if record["traj_id"] == traj_id:
            return record
    raise ReplayError(f"No trajectory {traj_id!r} in {path}")


@dataclass
class ReplayStep:
    """One replayed step, next to its logged counterpart."""

    t: int
    label: str
    logged_reward: float
    reward: float
    logged_observation: list | None
    observation: list | None

    @property
    def matches(self) -> bool:
        """Whether the replay agrees with the log."""
        return self.reward == self.logged_reward and self.observation == self.logged_observation


def replay_record(record: dict[str, Any], env_config: EnvConfig) -> list[ReplayStep]:
    """Re-execute a logged trajectory against a fresh environment.

    Retrievals do not touch the environment, they are replayed as zero-reward steps.

    Parameters:
        record: A record written by [`trajectory_record`][recallgym.records.trajectory_record].
        env_config: The run's environment configuration.

    Raises:
        ReplayError: When any reward or observation differs from the log.

    Returns:
        The replayed steps.
    """
    env = CombinationLock(env_config)
    env.reset(TaskInstance(record["task_id"], Goal(record["family"]), horizon=record["horizon"]))
    steps = []
    for t, (label, reward, observation) in enumerate(zip(record["actions"], record["rewards"], record["observations"])):
        action = Action.parse(label)
        if action.is_retrieval:
            steps.append(ReplayStep(t, label, reward, 0.0, observation, None))
            continue
        try:
            result = env.step(action)
        except ProtocolError as error:
            raise ReplayError(f"{record['traj_id']}: step {t} ({label}): {error}") from error
        replayed = [result.observation.cursor_position, result.observation.last_feedback.value]
        steps.append(ReplayStep(t, label, reward, result.reward, observation, replayed))
    mismatches = [step for step in steps if not step.matches]
    if mismatches:
        first = mismatches[0]
        raise ReplayError(
            f"{record['traj_id']}: step {first.t} ({first.label}) replayed reward {first.reward} "
            f"and observation {first.observation}, logged {first.logged_reward} and {first.logged_observation}",
        )
    return steps


def checkpoint_dir(run_dir: str | Path, iteration: int | None = None) -> Path:
    """Directory of a checkpoint.

    Parameters:
        run_dir: The run directory.
        iteration: Iteration count at save time, `None` for the final state.

    Returns:
        The path.
    """
    name = FINAL_CHECKPOINT if iteration is None else f"iter-{iteration:06d}"
    return Path(run_dir) / CHECKPOINTS_DIR / name


def save_checkpoint(directory: str | Path, params: PolicyParams, base: ExperienceBase, stats: GoalLengthStats) -> None:
    """Write the policy, the experience base and the length statistics.

    Parameters:
        directory: Destination directory, created if needed.
        params: Policy parameters.
        base: Experience base.
        stats: Successful-length statistics.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    params.save(directory / "policy.bin")
    base.save(directory / "base.jsonl")
    (directory / "stats.json").write_text(json.dumps(stats.to_dict(), sort_keys=True) + "\n", encoding="utf8")
    logger.info("Checkpoint written to %s", directory)


def load_checkpoint(
    directory: str | Path,
    space: ActionSpace,
    dim: int,
) -> tuple[PolicyParams, ExperienceBase, GoalLengthStats]:
    """Read a checkpoint written by [`save_checkpoint`][recallgym.records.save_checkpoint].

    Parameters:
        directory: Checkpoint directory.
        space: The action space the policy must match.
        dim: Embedding dimension.

    Raises:
        CheckpointError: When a file is missing or does not match.

    Returns:
        The policy parameters, the experience base and the statistics.
    """
    directory = Path(directory)
    for name in ("policy.bin", "base.jsonl", "stats.json"):
        if not (directory / name).is_file():
            raise CheckpointError(f"{directory}: missing {name}")
    params = PolicyParams.load(directory / "policy.bin", space)
    try:
        base = ExperienceBase.load(directory / "base.jsonl", dim)
    except (KeyError, ValueError) as error:
        raise CheckpointError(f"{directory / 'base.jsonl'}: {error}") from error
    stats = GoalLengthStats.from_dict(json.loads((directory / "stats.json").read_text(encoding="utf8")))
    return params, base, stats


__all__ = [
    "CHECKPOINTS_DIR",
    "CONFIG_FILE",
    "METRICS_FILE",
    "TRAJECTORIES_FILE",
    "VERIFY_FILE",
    "JsonlWriter",
    "ReplayStep",
    "checkpoint_dir",
    "dumps",
    "find_trajectory",
    "load_checkpoint",
    "read_jsonl",
    "replay_record",
    "save_checkpoint",
    "trajectory_record",
]
