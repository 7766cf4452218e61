"""Records shared by the environment, the policy and the rollout machinery.

Attributes:
    EntryIds: Type for an ordered tuple of experience entry ids.
"""

from __future__ import annotations

import enum
import hashlib
import re
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from recallgym.env import EnvState, Observation, TaskInstance
    from recallgym.expbase import Entry

EntryIds = tuple[str, ...]

_LABEL_RE = re.compile(r"^(try|retrieve)\((.*)\)$")


class Feedback(enum.Enum):
    """Feedback returned by the lock after the last action."""

    NONE: str = "none"
    ADVANCE: str = "advance"
    RESET: str = "reset"

    def __str__(self):
        return self.value

    @property
    def index(self) -> int:
        """Position of this feedback in one-hot encodings."""
        return _FEEDBACK_ORDER.index(self)


_FEEDBACK_ORDER = (Feedback.NONE, Feedback.ADVANCE, Feedback.RESET)


class ActionKind(enum.Enum):
    """Kinds of actions of the augmented action space."""

    TRY: str = "try"
    RETRIEVE: str = "retrieve"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class Action:
    """One action: either an environment action `try(symbol)` or a `retrieve(query)`."""

    kind: ActionKind
    symbol: int | None = None
    query: str | None = None

    @classmethod
    def try_symbol(cls, symbol: int) -> Action:
        """Build an environment action.

        Parameters:
            symbol: The symbol to try.

        Returns:
            The action.
        """
        return cls(ActionKind.TRY, symbol=int(symbol))

    @classmethod
    def retrieve(cls, query: str) -> Action:
        """Build a retrieval action.

        Parameters:
            query: The query text.

        Returns:
            The action.
        """
        return cls(ActionKind.RETRIEVE, query=query)

    @classmethod
    def parse(cls, label: str) -> Action:
        """Parse a label produced by [`label`][recallgym.types.Action.label].

        Parameters:
            label: An action label like `try(3)` or `retrieve(code for family 2)`.

        Raises:
            ValueError: When the label is malformed.

        Returns:
            The action.
        """
        match = _LABEL_RE.match(label)
        if not match:
            raise ValueError(f"Malformed action label: {label!r}")
        kind, argument = match.groups()
        if kind == "try":
            return cls.try_symbol(int(argument))
        return cls.retrieve(argument)

    @property
    def is_retrieval(self) -> bool:
        """Whether this is a retrieval action."""
        return self.kind is ActionKind.RETRIEVE

    @property
    def label(self) -> str:
        """A printable, parseable label."""
        if self.is_retrieval:
            return f"retrieve({self.query})"
        return f"try({self.symbol})"


@dataclass(frozen=True)
class History:
    """What the policy knows about the episode at decision time, apart from the retrieved context."""

    family: int
    cursor: int
    feedback: Feedback
    step: int
    horizon: int
    n_retrievals: int = 0
    previous: ActionKind | None = None


@dataclass
class StepRecord:
    """One agent step of a trajectory."""

    t: int
    """Agent step index (retrievals included)."""
    action: Action
    action_index: int
    features: np.ndarray = field(repr=False)
    """Features of the history the action was sampled from."""
    mask_retrieval: bool
    """Whether retrieval actions were masked when sampling."""
    reward: float = 0.0
    retrieved_ids: EntryIds = ()
    observation: Observation | None = None
    """Observation after an environment action, `None` for retrievals."""

    @property
    def digest(self) -> str:
        """Short hash of the features, for logs."""
        return hashlib.blake2b(np.ascontiguousarray(self.features).tobytes(), digest_size=8).hexdigest()

    def same_as(self, other: StepRecord) -> bool:
        """Field-by-field equality, comparing features exactly.

        Parameters:
            other: The record to compare to.

        Returns:
            Whether both records are identical.
        """
        return (
            self.t == other.t
            and self.action == other.action
            and self.action_index == other.action_index
            and self.mask_retrieval == other.mask_retrieval
            and self.reward == other.reward
            and self.retrieved_ids == other.retrieved_ids
            and self.observation == other.observation
            and np.array_equal(self.features, other.features)
        )


@dataclass(frozen=True)
class BranchPoint:
    """Everything needed to resume an episode at a given agent step."""

    env_state: EnvState
    history: History
    context: tuple[Entry, ...]
    queries: tuple[str, ...]


@dataclass
class Trajectory:
    """The full interaction record of one episode."""

    traj_id: str
    task: TaskInstance
    retrieval_enabled: bool
    steps: list[StepRecord] = field(default_factory=list)
    success: bool = False
    initial_context_ids: EntryIds = ()
    branch_of: tuple[str, int] | None = None
    branch_points: dict[int, BranchPoint] = field(default_factory=dict, repr=False)

    @property
    def T(self) -> int:  # noqa: N802
        """Number of agent steps."""
        return len(self.steps)

    @property
    def env_return(self) -> float:
        """Sum of environment rewards."""
        return float(sum(step.reward for step in self.steps))

    @property
    def retrieval_steps(self) -> list[tuple[int, str]]:
        """Indices of retrieval steps with their verbatim query texts."""
        return [(step.t, step.action.query or "") for step in self.steps if step.action.is_retrieval]

    @property
    def queries(self) -> list[str]:
        """Verbatim query texts, in order."""
        return [query for _, query in self.retrieval_steps]

    @property
    def retrieved_ids(self) -> EntryIds:
        """Unique ids of every entry retrieved during the episode, initial context included."""
        seen: dict[str, None] = dict.fromkeys(self.initial_context_ids)
        for step in self.steps:
            seen.update(dict.fromkeys(step.retrieved_ids))
        return tuple(seen)

    @property
    def family(self) -> int:
        """Goal family of the task."""
        return self.task.goal.family


@dataclass
class BranchPair:
    """A retrieval trajectory and its matched no-retrieval continuation."""

    ret: Trajectory
    noret: Trajectory
    t_b: int

    def shares_prefix(self) -> bool:
        """Check step-wise equality of both members before the branching step.

        Returns:
            Whether the prefixes are identical.
        """
        if len(self.ret.steps) < self.t_b or len(self.noret.steps) < self.t_b:
            return False
        return all(a.same_as(b) for a, b in zip(self.ret.steps[: self.t_b], self.noret.steps[: self.t_b]))


__all__ = [
    "Action",
    "ActionKind",
    "BranchPair",
    "BranchPoint",
    "EntryIds",
    "Feedback",
    "History",
    "StepRecord",
    "Trajectory",
]
