"""Rule-based distillation of completed trajectories into experience entries."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

from recallgym.errors import ConfigError
from recallgym.expbase import DEFAULT_DIM, Entry, EntryType, make_entry
from recallgym.reward import has_repeated_query, rollout_margin
from recallgym.types import Feedback

if TYPE_CHECKING:
    from collections.abc import Iterable, Sequence

    from recallgym.expbase import ExperienceBase
    from recallgym.reward import RewardWeights
    from recallgym.types import BranchPair, Trajectory

logger = logging.getLogger(__name__)

RETRIEVE_FIRST = "retrieve family code before first try"
FOLLOW_KNOWN = "follow the known code symbol by symbol"
NO_REPEAT = "do not repeat an identical query"
RETRIEVE_ON_RESETS = "retrieve when feedback resets repeatedly"
STOP_RETRIEVING = "stop retrieving when the code is already known"


@dataclass(frozen=True)
class ExtractionConfig:
    """Extraction block of the run configuration."""

    max_factual_per_traj: int = 2
    max_episodic_per_traj: int = 2
    max_skills_per_group: int = 3

    def __post_init__(self) -> None:
        for name in ("max_factual_per_traj", "max_episodic_per_traj", "max_skills_per_group"):
            if getattr(self, name) < 1:
                raise ConfigError("must be positive", f"extraction.{name}")


@dataclass
class ExtractionReport:
    """Per-type counts of one base update."""

    inserted: Counter[str] = field(default_factory=Counter)
    deduped: Counter[str] = field(default_factory=Counter)
    upgraded: Counter[str] = field(default_factory=Counter)
    bumped: Counter[str] = field(default_factory=Counter)

    def as_dict(self) -> dict[str, dict[str, int]]:
        """Serialize the report.

        Returns:
            A JSON-compatible dictionary.
        """
        return {
            name: {entry_type.value: getattr(self, name)[entry_type.value] for entry_type in EntryType}
            for name in ("inserted", "deduped", "upgraded", "bumped")
        }


def confirmed_prefix(trajectory: Trajectory) -> list[int]:
    """Longest code prefix confirmed by advance feedback.

    Parameters:
        trajectory: The trajectory.

    Returns:
        The symbols, possibly none.
    """
    best: list[int] = []
    run: list[int] = []
    for step in trajectory.steps:
        if step.observation is None or step.action.symbol is None:
            continue
        if step.observation.last_feedback is Feedback.ADVANCE:
            run.append(step.action.symbol)
            if len(run) > len(best):
                best = list(run)
        else:
            run = []
    return best


def extract_factual(trajectory: Trajectory, config: ExtractionConfig, dim: int = DEFAULT_DIM) -> list[Entry]:
    """Turn the confirmed prefix of a trajectory into a factual entry.

    Parameters:
        trajectory: The trajectory.
        config: Extraction caps.
        dim: Embedding dimension.

    Returns:
        Zero or one entry.
    """
    prefix = confirmed_prefix(trajectory)
    if not prefix:
        return []
    family = trajectory.family
    entry = make_entry(EntryType.FACTUAL, f"code for family {family}", {"family": family, "prefix": prefix}, dim=dim)
    return [entry][: config.max_factual_per_traj]


def extract_episodic(trajectory: Trajectory, config: ExtractionConfig, dim: int = DEFAULT_DIM) -> list[Entry]:
    """Summarize an episode.

    Parameters:
        trajectory: The trajectory.
        config: Extraction caps.
        dim: Embedding dimension.

    Returns:
        One entry.
    """
    family = trajectory.family
    content = {
        "family": family,
        "T": trajectory.T,
        "success": trajectory.success,
        "retrievals": len(trajectory.retrieval_steps),
    }
    return [make_entry(EntryType.EPISODIC, f"recent attempt on family {family}", content, dim=dim)][
        : config.max_episodic_per_traj
    ]


def _skills(
    entry_type: EntryType,
    matches: dict[str, list[Trajectory]],
    config: ExtractionConfig,
    dim: int,
) -> list[Entry]:
    entries = []
    for rule, supporting in matches.items():
        if supporting:
            content = {"rule": rule, "support": len(supporting), "source": supporting[0].traj_id}
            entries.append(make_entry(entry_type, rule, content, dim=dim))
    return entries[: config.max_skills_per_group]


def distill_success(trajectories: Sequence[Trajectory], config: ExtractionConfig, dim: int = DEFAULT_DIM) -> list[Entry]:
    """Success skills of a task group.

    Parameters:
        trajectories: Trajectories of one task.
        config: Extraction caps.
        dim: Embedding dimension.

    Returns:
        At most `max_skills_per_group` entries.
    """
    successes = [trajectory for trajectory in trajectories if trajectory.success]
    matches = {
        RETRIEVE_FIRST: [t for t in successes if t.steps and t.steps[0].action.is_retrieval],
        FOLLOW_KNOWN: [t for t in successes if not t.retrieval_steps and t.initial_context_ids],
    }
    return _skills(EntryType.SUCCESS_SKILL, matches, config, dim)


def distill_failure(
    trajectories: Sequence[Trajectory],
    config: ExtractionConfig,
    code_length: int,
    dim: int = DEFAULT_DIM,
) -> list[Entry]:
    """Failure skills of a task group.

    Parameters:
        trajectories: Trajectories of one task.
        config: Extraction caps.
        code_length: Length of the lock codes.
        dim: Embedding dimension.

    Returns:
        At most `max_skills_per_group` entries.
    """
    failures = [trajectory for trajectory in trajectories if not trajectory.success]
    matches = {
        NO_REPEAT: [t for t in failures if has_repeated_query(t)],
        RETRIEVE_ON_RESETS: [t for t in failures if not t.retrieval_steps and t.T >= t.task.horizon],
        STOP_RETRIEVING: [t for t in failures if len(t.retrieval_steps) > code_length],
    }
    return _skills(EntryType.FAILURE_SKILL, matches, config, dim)


def _summary(trajectory: Trajectory) -> dict[str, Any]:
    return {"success": trajectory.success, "T": trajectory.T, "retrievals": len(trajectory.retrieval_steps)}


def distill_comparative(
    pairs: Sequence[BranchPair],
    fallback_groups: Sequence[Sequence[Trajectory]],
    weights: RewardWeights,
    config: ExtractionConfig,
    dim: int = DEFAULT_DIM,
) -> list[Entry]:
    """Comparative skills from paired branches.

    Without any pair, the best and worst trajectories of each group, ranked by `(success, -T)`, are contrasted instead.
    Each task group yields at most `max_skills_per_group` entries, taken in pair order.

    Parameters:
        pairs: Branch pairs of the batch.
        fallback_groups: Task groups, used when there is no pair.
        weights: Reward weights (for the margin).
        config: Extraction caps.
        dim: Embedding dimension.

    Returns:
        The entries.
    """
    entries = []
    per_group: Counter[str] = Counter()
    for pair in pairs:
        group = pair.ret.task.task_id
        if per_group[group] >= config.max_skills_per_group:
            continue
        delta = rollout_margin(pair, weights)
        if delta == 0:
            continue
        per_group[group] += 1
        family = pair.ret.family
        queries = dict(pair.ret.retrieval_steps)
        content = {
            "family": family,
            "verdict": "helped" if delta > 0 else "hurt",
            "t_b": pair.t_b,
            "query": queries.get(pair.t_b, ""),
            "delta": delta,
        }
        entries.append(make_entry(EntryType.COMPARATIVE_SKILL, f"deciding whether to retrieve on family {family}", content, dim=dim))
    if pairs:
        return entries

    for group in fallback_groups:
        if not group or per_group[group[0].task.task_id] >= config.max_skills_per_group:
            continue
        ranked = sorted(group, key=lambda trajectory: (trajectory.success, -trajectory.T))
        worst, best = ranked[0], ranked[-1]
        if (best.success, -best.T) == (worst.success, -worst.T):
            continue
        best_retrievals, worst_retrievals = len(best.retrieval_steps), len(worst.retrieval_steps)
        if best_retrievals == worst_retrievals:
            verdict = "neutral"
        else:
            verdict = "helped" if best_retrievals > worst_retrievals else "hurt"
        content = {"family": best.family, "verdict": verdict, "better": _summary(best), "worse": _summary(worst)}
        group_entry = make_entry(
            EntryType.COMPARATIVE_SKILL,
            f"deciding whether to retrieve on family {best.family}",
            content,
            dim=dim,
        )
        per_group[best.task.task_id] += 1
        entries.append(group_entry)
    return entries


def extract_batch(
    groups: Sequence[Sequence[Trajectory]],
    pairs: Sequence[BranchPair],
    weights: RewardWeights,
    config: ExtractionConfig,
    code_length: int,
    dim: int = DEFAULT_DIM,
) -> list[Entry]:
    """Every entry extracted from one training batch.

    Parameters:
        groups: Task groups of the batch.
        pairs: Branch pairs of the batch.
        weights: Reward weights.
        config: Extraction caps.
        code_length: Length of the lock codes.
        dim: Embedding dimension.

    Returns:
        The entries, in a deterministic order.
    """
    entries: list[Entry] = []
    for group in groups:
        for trajectory in group:
            entries.extend(extract_factual(trajectory, config, dim))
            entries.extend(extract_episodic(trajectory, config, dim))
        entries.extend(distill_success(group, config, dim))
        entries.extend(distill_failure(group, config, code_length, dim))
    entries.extend(distill_comparative(pairs, groups, weights, config, dim))
    return entries


def update_base(base: ExperienceBase, entries: Iterable[Entry], successful: Iterable[Trajectory]) -> ExtractionReport:
    """Insert new entries and reward the entries that helped.

    A factual entry whose key already exists replaces the stored content when its prefix is strictly longer.
    Every entry retrieved in a successful trajectory gains one priority point per such trajectory.

    Parameters:
        base: The experience base.
        entries: New entries.
        successful: Successful trajectories of the batch.

    Returns:
        Per-type counts.
    """
    report = ExtractionReport()
    for entry in entries:
        kind = entry.type_label.value
        if base.insert(entry):
            report.inserted[kind] += 1
            continue
        existing = base.find(entry.type_label, entry.when_to_use)
        if (
            existing is not None
            and entry.type_label is EntryType.FACTUAL
            and len(entry.content["prefix"]) > len(existing.content["prefix"])
        ):
            logger.debug("Upgrading %s prefix to %s", existing.id, entry.content["prefix"])
            base.replace_content(existing.id, entry.content)
            report.upgraded[kind] += 1
        else:
            report.deduped[kind] += 1

    for trajectory in successful:
        ids = trajectory.retrieved_ids
        base.bump_priority(ids)
        for entry_id in ids:
            if entry_id in base:
                report.bumped[base.get(entry_id).type_label.value] += 1
    return report


__all__ = [
    "ExtractionConfig",
    "ExtractionReport",
    "confirmed_prefix",
    "distill_comparative",
    "distill_failure",
    "distill_success",
    "extract_batch",
    "extract_episodic",
    "extract_factual",
    "update_base",
]
