"""The combination-lock environment.

Each goal family owns a hidden code of `code_length` symbols, fixed for the whole run by the configuration seed.
The agent opens the lock by trying symbols one at a time: a correct symbol advances the cursor, a wrong one
resets it to zero. Because codes persist across episodes of the same family, remembering them pays off.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, field
from typing import TYPE_CHECKING, Any

import numpy as np

from recallgym.errors import ConfigError, ProtocolError
from recallgym.types import Action, ActionKind, Feedback, History, StepRecord, Trajectory

if TYPE_CHECKING:
    from collections.abc import Sequence


@dataclass(frozen=True)
class EnvConfig:
    """Environment block of the run configuration."""

    code_length: int = 3
    alphabet_size: int = 5
    n_families: int = 30
    horizon: int = 0
    """Maximum number of agent steps. Zero means `4 * code_length * alphabet_size`."""
    gamma: float = 0.99
    """Discount factor. Kept for completeness, returns are undiscounted."""
    seed: int = 0

    def __post_init__(self) -> None:
        if self.code_length < 1:
            raise ConfigError("must be at least 1", "env.code_length")
        if self.alphabet_size < 2:  # noqa: PLR2004
            raise ConfigError("must be at least 2", "env.alphabet_size")
        if self.n_families < 1:
            raise ConfigError("must be at least 1", "env.n_families")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError("must be in [0, 1)", "env.gamma")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("must be an unsigned 64-bit integer", "env.seed")
        if self.horizon < 0:
            raise ConfigError("must be positive", "env.horizon")
        if self.horizon == 0:
            object.__setattr__(self, "horizon", 4 * self.code_length * self.alphabet_size)

    @property
    def fingerprint(self) -> str:
        """A digest identifying this configuration."""
        raw = f"{self.code_length}:{self.alphabet_size}:{self.n_families}:{self.horizon}:{self.seed}"
        return hashlib.blake2b(raw.encode(), digest_size=8).hexdigest()


@dataclass(frozen=True)
class Goal:
    """A goal: open the lock of a family."""

    family: int

    @property
    def text(self) -> str:
        """Natural-language goal, used as the initial retrieval query."""
        return f"unlock a lock for family {self.family}"


@dataclass(frozen=True)
class Observation:
    """What the agent sees of the lock."""

    cursor_position: int
    last_feedback: Feedback = Feedback.NONE
    step_index: int = 0


@dataclass(frozen=True)
class TaskInstance:
    """One goal-conditioned episode to play."""

    task_id: str
    goal: Goal
    initial_observation: Observation = field(default_factory=lambda: Observation(0))
    horizon: int = 1


@dataclass(frozen=True)
class StepResult:
    """Outcome of one environment step."""

    observation: Observation
    reward: float
    done: bool
    success: bool


@dataclass(frozen=True)
class EnvState:
    """Immutable snapshot of the full latent state of a lock."""

    fingerprint: str
    task_id: str
    family: int
    code: tuple[int, ...]
    cursor: int
    feedback: Feedback
    step_index: int
    done: bool

    def to_dict(self) -> dict[str, Any]:
        """Serialize the snapshot.

        Returns:
            A JSON-compatible dictionary.
        """
        data = asdict(self)
        data["code"] = list(self.code)
        data["feedback"] = self.feedback.value
        return data

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> EnvState:
        """Deserialize a snapshot.

        Parameters:
            data: A dictionary produced by [`to_dict`][recallgym.env.EnvState.to_dict].

        Returns:
            The snapshot.
        """
        return cls(**{**data, "code": tuple(data["code"]), "feedback": Feedback(data["feedback"])})


def family_code(config: EnvConfig, family: int) -> tuple[int, ...]:
    """Return the hidden code of a family.

    The code is a pure function of the configuration seed and the family id.

    Parameters:
        config: The environment configuration.
        family: The goal family.

    Raises:
        ConfigError: When the family is not configured.

    Returns:
        The code, as a tuple of symbols.
    """
    if not 0 <= family < config.n_families:
        raise ConfigError(f"unknown goal family {family}", "env.n_families")
    rng = np.random.default_rng([config.seed, family])
    return tuple(int(symbol) for symbol in rng.integers(0, config.alphabet_size, size=config.code_length))


def task_stream(config: EnvConfig, n: int) -> list[TaskInstance]:
    """Generate a deterministic stream of tasks.

    Families follow a seeded permutation, repeated round-robin, so every family recurs.

    Parameters:
        config: The environment configuration.
        n: Number of tasks.

    Raises:
        ValueError: When `n` is not positive.

    Returns:
        The tasks.
    """
    if n < 1:
        raise ValueError("A task stream needs at least one task")
    order = np.random.default_rng([config.seed, config.n_families]).permutation(config.n_families)
    tasks = []
    for index in range(n):
        family = int(order[index % config.n_families])
        tasks.append(
            TaskInstance(
                task_id=f"task-{index:06d}-f{family}",
                goal=Goal(family),
                initial_observation=Observation(0),
                horizon=config.horizon,
            ),
        )
    return tasks


class CombinationLock:
    """A replayable combination lock.

    One instance is owned by a single rollout worker. Snapshots are immutable values
    and can be restored in any instance built from the same configuration.
    """

    def __init__(self, config: EnvConfig) -> None:
        """Initialize the environment.

        Parameters:
            config: The environment configuration.
        """
        self.config = config
        self._state: EnvState | None = None

    @property
    def state(self) -> EnvState:
        """Current latent state.

        Raises:
            ProtocolError: Before the first reset.
        """
        if self._state is None:
            raise ProtocolError("Environment was never reset")
        return self._state

    @property
    def observation(self) -> Observation:
        """Current observation."""
        state = self.state
        return Observation(state.cursor, state.feedback, state.step_index)

    def reset(self, task: TaskInstance) -> Observation:
        """Start an episode.

        Parameters:
            task: The task to play.

        Returns:
            The initial observation.
        """
        family = task.goal.family
        self._state = EnvState(
            fingerprint=self.config.fingerprint,
            task_id=task.task_id,
            family=family,
            code=family_code(self.config, family),
            cursor=0,
            feedback=Feedback.NONE,
            step_index=0,
            done=False,
        )
        return self.observation

    def step(self, action: Action) -> StepResult:
        """Try one symbol.

        Parameters:
            action: A `try(symbol)` action.

        Raises:
            ProtocolError: When the episode is over or the action is not a valid environment action.

        Returns:
            The step result.
        """
        state = self.state
        if state.done:
            raise ProtocolError(f"Episode {state.task_id} is done, reset before stepping")
        if action.kind is not ActionKind.TRY or action.symbol is None:
            raise ProtocolError(f"Not an environment action: {action.label}")
        if not 0 <= action.symbol < self.config.alphabet_size:
            raise ProtocolError(f"Symbol {action.symbol} is outside the alphabet")

        if action.symbol == state.code[state.cursor]:
            cursor, feedback = state.cursor + 1, Feedback.ADVANCE
        else:
            cursor, feedback = 0, Feedback.RESET
        step_index = state.step_index + 1
        success = cursor == len(state.code)
        done = success or step_index >= self.config.horizon
        self._state = EnvState(
            fingerprint=state.fingerprint,
            task_id=state.task_id,
            family=state.family,
            code=state.code,
            cursor=cursor,
            feedback=feedback,
            step_index=step_index,
            done=done,
        )
        return StepResult(self.observation, 1.0 if success else 0.0, done, success)

    def snapshot(self) -> EnvState:
        """Capture the latent state.

        Returns:
            An immutable snapshot.
        """
        return self.state

    def restore(self, state: EnvState) -> None:
        """Reinstate a snapshot.

        Parameters:
            state: A snapshot taken from an environment with the same configuration.

        Raises:
            ProtocolError: When the snapshot comes from another configuration.
        """
        if state.fingerprint != self.config.fingerprint:
            raise ProtocolError("Snapshot was taken with a different environment configuration")
        self._state = state

    def replay(self, actions: Sequence[Action]) -> list[StepResult]:
        """Play environment actions, skipping retrievals.

        Parameters:
            actions: Actions to play from the current state.

        Returns:
            One result per environment action.
        """
        return [self.step(action) for action in actions if not action.is_retrieval]


def scripted_demo(task: TaskInstance, code: Sequence[int], config: EnvConfig) -> Trajectory:
    """Build an oracle demonstration: retrieve the family code once, then play it.

    Parameters:
        task: The task.
        code: The true code of the task's family.
        config: The environment configuration.

    Returns:
        A successful trajectory of length `1 + code_length`.
    """
    from recallgym.expbase import EntryType, make_entry  # noqa: PLC0415
    from recallgym.policy import ActionSpace, featurize  # noqa: PLC0415

    space = ActionSpace(config)
    family = task.goal.family
    query = space.family_query(family)
    known = make_entry(EntryType.FACTUAL, query, {"family": family, "prefix": list(code)}, entry_id=f"demo-f{family}")

    history = History(family=family, cursor=0, feedback=Feedback.NONE, step=0, horizon=task.horizon)
    retrieve = Action.retrieve(query)
    steps = [
        StepRecord(
            t=0,
            action=retrieve,
            action_index=space.index(retrieve),
            features=featurize(space, history, ()),
            mask_retrieval=False,
            retrieved_ids=(known.id,),
        ),
    ]
    cursor, feedback = 0, Feedback.NONE
    for t, symbol in enumerate(code, start=1):
        history = History(
            family=family,
            cursor=cursor,
            feedback=feedback,
            step=t,
            horizon=task.horizon,
            n_retrievals=1,
            previous=steps[-1].action.kind,
        )
        action = Action.try_symbol(symbol)
        cursor, feedback = cursor + 1, Feedback.ADVANCE
        steps.append(
            StepRecord(
                t=t,
                action=action,
                action_index=space.index(action),
                features=featurize(space, history, (known,)),
                mask_retrieval=False,
                reward=1.0 if cursor == len(code) else 0.0,
                observation=Observation(cursor, feedback, t),
            ),
        )
    return Trajectory(traj_id=f"demo-{task.task_id}", task=task, retrieval_enabled=True, steps=steps, success=True)


__all__ = [
    "CombinationLock",
    "EnvConfig",
    "EnvState",
    "Goal",
    "Observation",
    "StepResult",
    "TaskInstance",
    "family_code",
    "scripted_demo",
    "task_stream",
]
