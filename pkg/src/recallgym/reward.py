"""Trajectory rewards.

A trajectory's reward is `R_env + r_proc + r_eff`:

- `R_env`: the environment return (1 on success, 0 otherwise);
- `r_proc`: `+alpha` or `-alpha` for the retrieval member of a branch pair, following the sign of its margin;
- `r_eff`: a repeated-query penalty plus a clipped bonus for being shorter than the family's average success.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import TYPE_CHECKING, Any

from recallgym.errors import ConfigError

if TYPE_CHECKING:
    from recallgym.types import BranchPair, Trajectory


@dataclass(frozen=True)
class RewardWeights:
    """Reward block of the run configuration."""

    alpha: float = 0.5
    lambda_T: float = 0.5  # noqa: N815
    w_q: float = 0.5
    w_t: float = 0.25
    eps_std: float = 1e-6

    def __post_init__(self) -> None:
        if self.alpha < 0:
            raise ConfigError("must be non-negative", "reward.alpha")
        if self.eps_std <= 0:
            raise ConfigError("must be positive", "reward.eps_std")


@dataclass(frozen=True)
class RewardBreakdown:
    """The terms of a trajectory reward."""

    R_env: float  # noqa: N815
    delta: float | None
    r_proc: float
    r_eff: float
    R_traj: float  # noqa: N815

    @classmethod
    def compose(cls, R_env: float, delta: float | None, r_proc: float, r_eff: float) -> RewardBreakdown:  # noqa: N803
        """Build a breakdown whose total is the exact sum of its terms.

        Parameters:
            R_env: Environment return.
            delta: Rollout margin, if the trajectory heads a pair.
            r_proc: Process reward.
            r_eff: Efficiency reward.

        Returns:
            The breakdown.
        """
        return cls(R_env, delta, r_proc, r_eff, R_env + r_proc + r_eff)

    def as_dict(self) -> dict[str, Any]:
        """Serialize the breakdown.

        Returns:
            A JSON-compatible dictionary.
        """
        return asdict(self)


@dataclass
class GoalLengthStats:
    """Running mean length of successful trajectories, per goal family."""

    totals: dict[int, int] = field(default_factory=dict)
    counts: dict[int, int] = field(default_factory=dict)

    def mean(self, family: int) -> float | None:
        """Mean successful length of a family.

        Parameters:
            family: The goal family.

        Returns:
            The mean, or `None` before the first success.
        """
        count = self.counts.get(family, 0)
        if count == 0:
            return None
        return self.totals[family] / count

    def update(self, trajectory: Trajectory) -> None:
        """Incorporate a trajectory (no-op unless it succeeded).

        Parameters:
            trajectory: The trajectory.
        """
        if not trajectory.success:
            return
        family = trajectory.family
        self.totals[family] = self.totals.get(family, 0) + trajectory.T
        self.counts[family] = self.counts.get(family, 0) + 1

    def to_dict(self) -> dict[str, Any]:
        """Serialize the statistics.

        Returns:
            A JSON-compatible dictionary.
        """
        return {str(family): {"total": self.totals[family], "count": self.counts[family]} for family in sorted(self.counts)}

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> GoalLengthStats:
        """Deserialize statistics.

        Parameters:
            data: A dictionary produced by [`to_dict`][recallgym.reward.GoalLengthStats.to_dict].

        Returns:
            The statistics.
        """
        stats = cls()
        for family, values in data.items():
            stats.totals[int(family)] = values["total"]
            stats.counts[int(family)] = values["count"]
        return stats


def env_return(trajectory: Trajectory) -> float:
    """Cumulative environment reward.

    Parameters:
        trajectory: The trajectory.

    Returns:
        The sum of step rewards.
    """
    return trajectory.env_return


def margin(ret_return: float, ret_length: int, noret_return: float, noret_length: int, lambda_T: float) -> float:  # noqa: N803
    """Outcome-plus-length advantage of a retrieval branch over its counterpart.

    Parameters:
        ret_return: Return of the retrieval branch.
        ret_length: Length of the retrieval branch.
        noret_return: Return of the matched branch.
        noret_length: Length of the matched branch.
        lambda_T: Weight of the length term.

    Returns:
        The margin.
    """
    return (ret_return - noret_return) + lambda_T * (noret_length - ret_length) / max(noret_length, 1)


def rollout_margin(pair: BranchPair, weights: RewardWeights) -> float:
    """Margin of a pair's retrieval member.

    Parameters:
        pair: The branch pair.
        weights: Reward weights.

    Returns:
        The margin.
    """
    return margin(pair.ret.env_return, pair.ret.T, pair.noret.env_return, pair.noret.T, weights.lambda_T)


def process_reward(z: int, delta: float, weights: RewardWeights) -> float:
    """Step-level reward of a retrieval branch.

    Parameters:
        z: 1 if the trajectory retrieved, 0 otherwise.
        delta: Rollout margin.
        weights: Reward weights.

    Returns:
        `+alpha` for a positive margin, `-alpha` for a negative one, 0 otherwise.
    """
    if z > 0 and delta > 0:
        return weights.alpha
    if z > 0 and delta < 0:
        return -weights.alpha
    return 0.0


def has_repeated_query(trajectory: Trajectory) -> bool:
    """Whether any verbatim query occurs at least twice.

    Parameters:
        trajectory: The trajectory.

    Returns:
        True on repeats.
    """
    return any(count >= 2 for count in Counter(trajectory.queries).values())  # noqa: PLR2004


def efficiency_reward(trajectory: Trajectory, stats: GoalLengthStats, weights: RewardWeights) -> float:
    """Repeat penalty plus clipped length bonus.

    The length term is 0 while the family has no recorded success.

    Parameters:
        trajectory: The trajectory.
        stats: Successful-length statistics.
        weights: Reward weights.

    Returns:
        The efficiency reward.
    """
    penalty = -weights.w_q if has_repeated_query(trajectory) else 0.0
    mean_length = stats.mean(trajectory.family)
    if mean_length is None:
        return penalty
    bound = abs(weights.w_t)
    bonus = weights.w_t * (mean_length - trajectory.T) / max(mean_length, 1.0)
    return penalty + min(bound, max(-bound, bonus))


def trajectory_reward(
    trajectory: Trajectory,
    pair: BranchPair | None,
    stats: GoalLengthStats,
    weights: RewardWeights,
) -> RewardBreakdown:
    """Full reward of a trajectory.

    Only the retrieval member of a pair gets a margin and a process reward.

    Parameters:
        trajectory: The trajectory.
        pair: The pair the trajectory belongs to, if any.
        stats: Successful-length statistics.
        weights: Reward weights.

    Returns:
        The breakdown.
    """
    delta = None
    r_proc = 0.0
    if pair is not None and trajectory is pair.ret:
        delta = rollout_margin(pair, weights)
        r_proc = process_reward(1 if trajectory.retrieval_steps else 0, delta, weights)
    return RewardBreakdown.compose(trajectory.env_return, delta, r_proc, efficiency_reward(trajectory, stats, weights))


def update_length_stats(stats: GoalLengthStats, trajectory: Trajectory) -> None:
    """Incorporate a trajectory into the statistics.

    Parameters:
        stats: Statistics to update.
        trajectory: The trajectory (only successes count).
    """
    stats.update(trajectory)


__all__ = [
    "GoalLengthStats",
    "RewardBreakdown",
    "RewardWeights",
    "efficiency_reward",
    "env_return",
    "has_repeated_query",
    "margin",
    "process_reward",
    "rollout_margin",
    "trajectory_reward",
    "update_length_stats",
]
