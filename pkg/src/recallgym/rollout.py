"""Episode execution and paired-branch construction."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Protocol

from recallgym.env import Goal, TaskInstance, family_code
from recallgym.errors import ProtocolError
from recallgym.expbase import ExpBaseConfig
from recallgym.policy import ActionSpace, PolicyParams, featurize, known_prefix, sample_action
from recallgym.types import Action, ActionKind, BranchPair, BranchPoint, Feedback, History, StepRecord, Trajectory

if TYPE_CHECKING:
    from collections.abc import Sequence

    import numpy as np

    from recallgym.env import CombinationLock
    from recallgym.expbase import Entry, ExperienceBase

logger = logging.getLogger(__name__)

INTERIOR_MIN_RETRIEVALS = 3
"""Below this many retrievals, branching falls back to the first retrieval step."""


class Agent(Protocol):
    """Anything that picks action indices."""

    def act(
        self,
        history: History,
        features: np.ndarray,
        context: Sequence[Entry],
        mask_retrieval: bool,  # noqa: FBT001
        rng: np.random.Generator,
    ) -> int:
        """Pick an action index (never a retrieval when `mask_retrieval` is set)."""
        ...


@dataclass
class SoftmaxAgent:
    """Samples from the softmax policy (or takes its argmax)."""

    params: PolicyParams
    greedy: bool = False

    def act(  # noqa: D102
        self,
        history: History,  # noqa: ARG002
        features: np.ndarray,
        context: Sequence[Entry],  # noqa: ARG002
        mask_retrieval: bool,  # noqa: FBT001
        rng: np.random.Generator,
    ) -> int:
        return sample_action(self.params, features, mask_retrieval, rng, greedy=self.greedy)


@dataclass
class UniformAgent:
    """Uniform over unmasked actions."""

    space: ActionSpace

    def act(  # noqa: D102
        self,
        history: History,  # noqa: ARG002
        features: np.ndarray,  # noqa: ARG002
        context: Sequence[Entry],  # noqa: ARG002
        mask_retrieval: bool,  # noqa: FBT001
        rng: np.random.Generator,
    ) -> int:
        high = self.space.n_env if mask_retrieval else len(self.space)
        return int(rng.integers(0, high))


@dataclass
class _ScriptedAgent:
    space: ActionSpace

    def _retrieve(self, history: History) -> int:
        return self.space.index(Action.retrieve(self.space.family_query(history.family)))

    def _try_known(self, history: History, context: Sequence[Entry], rng: np.random.Generator) -> int:
        prefix = known_prefix(history.family, context)
        if history.cursor < len(prefix):
            return self.space.index(Action.try_symbol(prefix[history.cursor]))
        return int(rng.integers(0, self.space.n_env))


class OracleAgent(_ScriptedAgent):
    """Retrieves the family code once, then plays the true code."""

    def act(  # noqa: D102
        self,
        history: History,
        features: np.ndarray,  # noqa: ARG002
        context: Sequence[Entry],  # noqa: ARG002
        mask_retrieval: bool,  # noqa: FBT001
        rng: np.random.Generator,  # noqa: ARG002
    ) -> int:
        if history.n_retrievals == 0 and not mask_retrieval:
            return self._retrieve(history)
        code = family_code(self.space.config, history.family)
        return self.space.index(Action.try_symbol(code[history.cursor]))


class RetrieveEveryStepAgent(_ScriptedAgent):
    """Retrieves before every environment action, then tries the known symbol (or a random one)."""

    def act(  # noqa: D102
        self,
        history: History,
        features: np.ndarray,  # noqa: ARG002
        context: Sequence[Entry],
        mask_retrieval: bool,  # noqa: FBT001
        rng: np.random.Generator,
    ) -> int:
        if not mask_retrieval and history.previous is not ActionKind.RETRIEVE:
            return self._retrieve(history)
        return self._try_known(history, context, rng)


class StaticAgent(_ScriptedAgent):
    """Never retrieves: plays what the initial context knows, random symbols otherwise."""

    def act(  # noqa: D102
        self,
        history: History,
        features: np.ndarray,  # noqa: ARG002
        context: Sequence[Entry],
        mask_retrieval: bool,  # noqa: FBT001, ARG002
        rng: np.random.Generator,
    ) -> int:
        return self._try_known(history, context, rng)


@dataclass
class _Cursor:
    """Mutable agent-side state of an episode in progress."""

    history: History
    context: list[Entry] = field(default_factory=list)
    queries: list[str] = field(default_factory=list)

    @classmethod
    def from_point(cls, point: BranchPoint) -> _Cursor:
        return cls(point.history, list(point.context), list(point.queries))


def _as_agent(policy: PolicyParams | Agent, *, greedy: bool) -> Agent:
    if isinstance(policy, PolicyParams):
        return SoftmaxAgent(policy, greedy=greedy)
    return policy


def _play(
    agent: Agent,
    env: CombinationLock,
    base: ExperienceBase,
    search: ExpBaseConfig,
    trajectory: Trajectory,
    cursor: _Cursor,
    rng: np.random.Generator,
    *,
    masked_step: int | None = None,
    forced: Action | None = None,
) -> Trajectory:
    space = ActionSpace(env.config)
    history = cursor.history
    start = history.step
    done = env.state.done
    while not done and history.step < history.horizon:
        t = history.step
        mask = not trajectory.retrieval_enabled or t == masked_step
        features = featurize(space, history, cursor.context)
        if forced is not None and t == start:
            index = space.index(forced)
        else:
            index = agent.act(history, features, cursor.context, mask, rng)
        action = space.actions[index]

        if action.is_retrieval:
            if mask:
                raise ProtocolError(f"Agent chose {action.label} while retrieval is masked at step {t}")
            trajectory.branch_points[t] = BranchPoint(
                env.snapshot(),
                history,
                tuple(cursor.context),
                tuple(cursor.queries),
            )
            found = base.search(action.query or "", search)
            cursor.context.extend(found)
            cursor.queries.append(action.query or "")
            trajectory.steps.append(
                StepRecord(t, action, index, features, mask, retrieved_ids=tuple(entry.id for entry in found)),
            )
            history = replace(history, step=t + 1, n_retrievals=history.n_retrievals + 1, previous=action.kind)
        else:
            result = env.step(action)
            trajectory.steps.append(
                StepRecord(t, action, index, features, mask, reward=result.reward, observation=result.observation),
            )
            trajectory.success = result.success
            done = result.done
            history = replace(
                history,
                cursor=result.observation.cursor_position,
                feedback=result.observation.last_feedback,
                step=t + 1,
                previous=action.kind,
            )
    cursor.history = history
    return trajectory


def run_episode(
    policy: PolicyParams | Agent,
    env: CombinationLock,
    task: TaskInstance,
    base: ExperienceBase,
    retrieval_enabled: bool,  # noqa: FBT001
    rng: np.random.Generator,
    *,
    search: ExpBaseConfig | None = None,
    initial_context: bool = True,
    greedy: bool = False,
    traj_id: str = "",
) -> Trajectory:
    """Play one episode.

    With retrieval enabled, the initial context is retrieved with the goal text, unless `initial_context` is off.
    Retrieval-disabled episodes start with an empty context. A retrieval consumes one agent step
    but leaves the lock untouched, and a snapshot is kept at every retrieval step for later branching.

    Parameters:
        policy: Policy parameters or a scripted agent.
        env: The environment (reset here).
        task: The task.
        base: The experience base, read only.
        retrieval_enabled: Whether retrieval actions are allowed.
        rng: Random generator, the only source of randomness.
        search: Retrieval settings.
        initial_context: Whether to retrieve the initial context.
        greedy: Argmax decoding when `policy` is a parameter set.
        traj_id: Trajectory identifier.

    Returns:
        The trajectory.
    """
    search = search or ExpBaseConfig()
    env.reset(task)
    cursor = _Cursor(History(family=task.goal.family, cursor=0, feedback=Feedback.NONE, step=0, horizon=task.horizon))
    trajectory = Trajectory(traj_id=traj_id or task.task_id, task=task, retrieval_enabled=retrieval_enabled)
    if retrieval_enabled and initial_context:
        found = base.search(task.goal.text, search)
        cursor.context.extend(found)
        trajectory.initial_context_ids = tuple(entry.id for entry in found)
    return _play(_as_agent(policy, greedy=greedy), env, base, search, trajectory, cursor, rng)


def select_branch_step(trajectory: Trajectory, rng: np.random.Generator) -> int | None:
    """Pick the branching step of a trajectory.

    Uniform over interior retrieval steps when there are at least three retrievals,
    the first retrieval step otherwise.

    Parameters:
        trajectory: A retrieval-enabled trajectory.
        rng: Random generator.

    Returns:
        The step index, or `None` without any retrieval.
    """
    if not trajectory.retrieval_enabled:
        return None
    steps = [t for t, _ in trajectory.retrieval_steps]
    if not steps:
        return None
    if len(steps) >= INTERIOR_MIN_RETRIEVALS:
        return steps[int(rng.integers(1, len(steps) - 1))]
    logger.debug("%s: %d retrieval(s), branching at first retrieval step %d", trajectory.traj_id, len(steps), steps[0])
    return steps[0]


def build_pair(
    trajectory: Trajectory,
    env: CombinationLock,
    policy: PolicyParams | Agent,
    base: ExperienceBase,
    rng: np.random.Generator,
    *,
    search: ExpBaseConfig | None = None,
    t_b: int | None = None,
) -> BranchPair | None:
    """Build the matched no-retrieval continuation of a trajectory.

    The environment is restored at the branching step, a retrieval-masked action is sampled there,
    then the episode continues under the policy with retrieval allowed again.

    Parameters:
        trajectory: The retrieval trajectory, with its snapshots.
        env: An environment built from the same configuration.
        policy: Policy parameters or agent.
        base: The experience base, read only.
        rng: Random generator.
        search: Retrieval settings.
        t_b: Branching step. Selected with [`select_branch_step`][recallgym.rollout.select_branch_step] when omitted.

    Raises:
        ProtocolError: When no snapshot exists at the branching step.

    Returns:
        The pair, or `None` when the trajectory has no retrieval.
    """
    if t_b is None:
        t_b = select_branch_step(trajectory, rng)
        if t_b is None:
            return None
    point = trajectory.branch_points.get(t_b)
    if point is None:
        raise ProtocolError(f"{trajectory.traj_id}: no snapshot at step {t_b}")
    env.restore(point.env_state)
    noret = Trajectory(
        traj_id=f"{trajectory.traj_id}/noret@{t_b}",
        task=trajectory.task,
        retrieval_enabled=True,
        steps=list(trajectory.steps[:t_b]),
        initial_context_ids=trajectory.initial_context_ids,
        branch_of=(trajectory.traj_id, t_b),
    )
    noret.branch_points.update({t: bp for t, bp in trajectory.branch_points.items() if t < t_b})
    _play(
        _as_agent(policy, greedy=False),
        env,
        base,
        search or ExpBaseConfig(),
        noret,
        _Cursor.from_point(point),
        rng,
        masked_step=t_b,
    )
    return BranchPair(trajectory, noret, t_b)


def estimate_marginal_utility(
    point: BranchPoint,
    query: str,
    policy: PolicyParams | Agent,
    env: CombinationLock,
    base: ExperienceBase,
    n_samples: int,
    rng: np.random.Generator,
    *,
    search: ExpBaseConfig | None = None,
) -> float:
    """Monte Carlo estimate of the environment-level value of retrieving `query` at a branch point.

    Parameters:
        point: Where to branch.
        query: The query text to force.
        policy: Policy parameters or agent.
        env: An environment built from the same configuration.
        base: The experience base, read only.
        n_samples: Continuations per arm.
        rng: Random generator.
        search: Retrieval settings.

    Raises:
        ValueError: When `n_samples` is not positive.

    Returns:
        Mean return with the forced retrieval minus mean return with retrieval masked at the branch point.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    search = search or ExpBaseConfig()
    agent = _as_agent(policy, greedy=False)
    state = point.env_state
    task = TaskInstance(state.task_id, Goal(state.family), horizon=point.history.horizon)

    def arm(**options: object) -> float:
        total = 0.0
        for _ in range(n_samples):
            env.restore(state)
            trajectory = Trajectory(traj_id=state.task_id, task=task, retrieval_enabled=True)
            _play(agent, env, base, search, trajectory, _Cursor.from_point(point), rng, **options)  # type: ignore[arg-type]
            total += trajectory.env_return
        return total / n_samples

    return arm(forced=Action.retrieve(query)) - arm(masked_step=point.history.step)


__all__ = [
    "Agent",
    "OracleAgent",
    "RetrieveEveryStepAgent",
    "SoftmaxAgent",
    "StaticAgent",
    "UniformAgent",
    "build_pair",
    "estimate_marginal_utility",
    "run_episode",
    "select_branch_step",
]
