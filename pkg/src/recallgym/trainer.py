"""Group-relative policy optimization with paired branches, and the online evolution loop.

Each iteration draws a batch of tasks, rolls out a group of trajectories per task (some with retrieval disabled,
following the annealing schedule, and some being no-retrieval branches of retrieval trajectories), scores them,
normalizes rewards within each group, takes one clipped-surrogate gradient step, then distills the batch into
the experience base.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

import numpy as np

from recallgym.env import CombinationLock, family_code, scripted_demo, task_stream
from recallgym.errors import ConfigError, ProtocolError
from recallgym.expbase import ExpBaseConfig, ExperienceBase
from recallgym.extract import ExtractionConfig, ExtractionReport, extract_batch, extract_factual, update_base
from recallgym.policy import (
    ActionSpace,
    PolicyParams,
    grad_log_prob,
    kl_estimate,
    kl_gradient,
    log_prob,
)
from recallgym.reward import GoalLengthStats, RewardBreakdown, RewardWeights, trajectory_reward
from recallgym.rollout import (
    INTERIOR_MIN_RETRIEVALS,
    build_pair,
    estimate_marginal_utility,
    run_episode,
    select_branch_step,
)

if TYPE_CHECKING:
    from collections.abc import Callable, Iterator, Sequence

    from recallgym.env import EnvConfig, TaskInstance
    from recallgym.types import BranchPair, Trajectory

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class AnnealPhase:
    """One phase of the retrieval annealing schedule."""

    no_ret_fraction: float
    warmup_ratio: float
    iteration_span: int


DEFAULT_PHASES = (AnnealPhase(0.5, 0.2, 100), AnnealPhase(0.25, 0.3, 100), AnnealPhase(0.0, 0.5, 100))


@dataclass(frozen=True)
class TrainerConfig:
    """Trainer block of the run configuration."""

    group_size: int = 8
    learning_rate: float = 0.1
    clip_eps: float = 0.2
    kl_beta: float = 0.01
    iterations: int = 300
    batch_tasks: int = 4
    anneal_phases: tuple[AnnealPhase, ...] = DEFAULT_PHASES
    seed: int = 0
    cold_start_epochs: int = 50
    cold_start_lr: float = 0.1
    demo_tasks: int = 30
    seed_base_from_demos: bool = False
    retrieval_enabled: bool = True
    """False runs the retrieval-disabled ablation."""
    paired_branches: bool = True
    initial_context: bool = True
    ref_refresh_interval: int = 0
    """Iterations between reference-policy refreshes. Zero keeps the cold-start policy forever."""
    checkpoint_every: int = 0
    marginal_samples: int = 0
    """Continuations per arm for the per-iteration marginal-utility estimate. Zero disables it."""
    debug: bool = False
    """Check the pairwise advantage identities of every scored group and stop on the first violation."""

    def __post_init__(self) -> None:
        object.__setattr__(self, "anneal_phases", tuple(self.anneal_phases))
        if self.group_size < 2:  # noqa: PLR2004
            raise ConfigError("must be at least 2", "trainer.group_size")
        if self.learning_rate <= 0:
            raise ConfigError("must be positive", "trainer.learning_rate")
        if not 0 < self.clip_eps < 1:
            raise ConfigError("must be in (0, 1)", "trainer.clip_eps")
        if self.kl_beta < 0:
            raise ConfigError("must be non-negative", "trainer.kl_beta")
        if self.iterations < 1:
            raise ConfigError("must be at least 1", "trainer.iterations")
        if self.batch_tasks < 1:
            raise ConfigError("must be at least 1", "trainer.batch_tasks")
        if not self.anneal_phases:
            raise ConfigError("needs at least one phase", "trainer.anneal_phases")
        for phase in self.anneal_phases:
            if not 0 <= phase.no_ret_fraction <= 1 or not 0 <= phase.warmup_ratio <= 1 or phase.iteration_span < 1:
                raise ConfigError(f"invalid phase {phase}", "trainer.anneal_phases")
        if sum(phase.iteration_span for phase in self.anneal_phases) != self.iterations:
            raise ConfigError("phase spans must sum to trainer.iterations", "trainer.anneal_phases")
        if self.cold_start_epochs < 0 or self.demo_tasks < 1:
            raise ConfigError("invalid cold start settings", "trainer.cold_start_epochs")


def phase_at(config: TrainerConfig, iteration: int) -> tuple[int, AnnealPhase, int]:
    """Locate an iteration in the annealing schedule.

    Parameters:
        config: Trainer configuration.
        iteration: Zero-based iteration.

    Returns:
        The phase index, the phase, and the iteration's offset within the phase.
    """
    start = 0
    for index, phase in enumerate(config.anneal_phases):
        if iteration < start + phase.iteration_span:
            return index, phase, iteration - start
        start += phase.iteration_span
    last = len(config.anneal_phases) - 1
    return last, config.anneal_phases[last], iteration - start + config.anneal_phases[last].iteration_span


def learning_rate_at(config: TrainerConfig, iteration: int) -> float:
    """Learning rate with linear warmup at the start of every phase.

    Parameters:
        config: Trainer configuration.
        iteration: Zero-based iteration.

    Returns:
        The learning rate.
    """
    _, phase, offset = phase_at(config, iteration)
    warmup = math.ceil(phase.warmup_ratio * phase.iteration_span)
    if warmup == 0:
        return config.learning_rate
    return config.learning_rate * min(1.0, (offset + 1) / warmup)


def normalized_advantages(rewards: Sequence[float] | np.ndarray, eps_std: float) -> np.ndarray:
    """Group-normalized advantages `(R - mean) / (std + eps)`, population standard deviation.

    Parameters:
        rewards: Rewards of one group.
        eps_std: Denominator offset.

    Raises:
        ValueError: With fewer than two rewards.

    Returns:
        The advantages.
    """
    values = np.asarray(rewards, dtype=float)
    if values.size < 2:  # noqa: PLR2004
        raise ValueError("A group needs at least two rewards")
    return (values - values.mean()) / (values.std() + eps_std)


@dataclass
class GroupBatch:
    """The rollouts of one task, with their rewards and advantages."""

    task: TaskInstance
    rollouts: list[Trajectory]
    pairs: list[BranchPair] = field(default_factory=list)
    primaries: int = 0
    disabled: int = 0
    fallbacks: int = 0
    breakdowns: list[RewardBreakdown] = field(default_factory=list)
    rewards: np.ndarray = field(default_factory=lambda: np.zeros(0))
    advantages: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def primary_rollouts(self) -> list[Trajectory]:
        """Rollouts that are not branches."""
        return [trajectory for trajectory in self.rollouts if trajectory.branch_of is None]

    def pair_of(self, trajectory: Trajectory) -> BranchPair | None:
        """The pair a trajectory belongs to.

        Parameters:
            trajectory: A rollout of this group.

        Returns:
            The pair, if any.
        """
        for pair in self.pairs:
            if trajectory is pair.ret or trajectory is pair.noret:
                return pair
        return None

    def score(self, stats: GoalLengthStats, weights: RewardWeights) -> None:
        """Compute rewards and advantages.

        Parameters:
            stats: Successful-length statistics (as of the previous batch).
            weights: Reward weights.
        """
        self.breakdowns = [trajectory_reward(t, self.pair_of(t), stats, weights) for t in self.rollouts]
        self.rewards = np.array([breakdown.R_traj for breakdown in self.breakdowns])
        self.advantages = normalized_advantages(self.rewards, weights.eps_std)


def trajectory_log_ratio(params: PolicyParams, old_params: PolicyParams, trajectory: Trajectory) -> tuple[float, np.ndarray]:
    """Log importance ratio of a whole trajectory and its gradient.

    Parameters:
        params: Current parameters.
        old_params: Parameters the trajectory was sampled with.
        trajectory: The trajectory.

    Raises:
        ProtocolError: When a recorded action is masked.

    Returns:
        The summed log-probability difference and its gradient with respect to the current weights.
    """
    total = 0.0
    gradient = np.zeros_like(params.weights)
    for step in trajectory.steps:
        total += log_prob(params, step.features, step.action_index, step.mask_retrieval)
        total -= log_prob(old_params, step.features, step.action_index, step.mask_retrieval)
        gradient += grad_log_prob(params, step.features, step.action_index, step.mask_retrieval)
    return total, gradient


def _visited_features(batches: Sequence[GroupBatch]) -> np.ndarray:
    rows = [step.features for batch in batches for trajectory in batch.rollouts for step in trajectory.steps]
    return np.vstack(rows) if rows else np.zeros((0, 0))


def surrogate_loss(
    params: PolicyParams,
    old_params: PolicyParams,
    ref_params: PolicyParams,
    batches: Sequence[GroupBatch],
    clip_eps: float,
    kl_beta: float,
) -> tuple[float, np.ndarray]:
    """Clipped surrogate objective (to maximize) and its gradient.

    Per group, `mean_i min(rho_i A_i, clip(rho_i, 1 - eps, 1 + eps) A_i)`, averaged over groups,
    minus `kl_beta` times the mean exact KL to the reference policy over visited states.
    The clipped branch has zero gradient where clipping is active.

    Parameters:
        params: Current parameters.
        old_params: Sampling parameters.
        ref_params: Reference parameters.
        batches: Scored groups.
        clip_eps: Clip range.
        kl_beta: KL weight.

    Returns:
        The objective and its gradient.
    """
    objective = 0.0
    gradient = np.zeros_like(params.weights)
    for batch in batches:
        for trajectory, advantage in zip(batch.rollouts, batch.advantages):
            log_ratio, log_ratio_grad = trajectory_log_ratio(params, old_params, trajectory)
            ratio = math.exp(log_ratio)
            unclipped = ratio * advantage
            clipped = min(max(ratio, 1 - clip_eps), 1 + clip_eps) * advantage
            objective += min(unclipped, clipped) / len(batch.rollouts)
            if unclipped <= clipped:
                gradient += advantage * ratio * log_ratio_grad / len(batch.rollouts)
    objective /= len(batches)
    gradient /= len(batches)

    features = _visited_features(batches)
    if kl_beta and len(features):
        objective -= kl_beta * kl_estimate(params, ref_params, features)
        gradient -= kl_beta * kl_gradient(params, ref_params, features)
    return objective, gradient


def demo_log_likelihood(params: PolicyParams, demos: Sequence[Trajectory]) -> tuple[float, np.ndarray]:
    """Mean log-likelihood of demonstration actions and its gradient.

    Parameters:
        params: Policy parameters.
        demos: Demonstrations.

    Returns:
        The mean log-likelihood and its gradient.
    """
    steps = [step for demo in demos for step in demo.steps]
    total = 0.0
    gradient = np.zeros_like(params.weights)
    for step in steps:
        total += log_prob(params, step.features, step.action_index, step.mask_retrieval)
        gradient += grad_log_prob(params, step.features, step.action_index, step.mask_retrieval)
    return total / len(steps), gradient / len(steps)


def cold_start(
    params: PolicyParams,
    demos: Sequence[Trajectory],
    epochs: int,
    lr: float,
    on_epoch: Callable[[int, float], None] | None = None,
) -> PolicyParams:
    """Behavior cloning on successful demonstrations, by full-batch gradient ascent.

    Parameters:
        params: Initial parameters.
        demos: Demonstrations.
        epochs: Number of gradient steps.
        lr: Step size.
        on_epoch: Called with each epoch index and the negative mean log-likelihood before its step.

    Raises:
        ValueError: Without demonstrations.

    Returns:
        The trained parameters.
    """
    if not demos or not any(demo.steps for demo in demos):
        raise ValueError("Cold start needs at least one demonstration")
    for epoch in range(epochs):
        likelihood, gradient = demo_log_likelihood(params, demos)
        if on_epoch is not None:
            on_epoch(epoch, -likelihood)
        params = params.replace(params.weights + lr * gradient)
    return params


def make_demos(env_config: EnvConfig, n: int) -> list[Trajectory]:
    """Scripted demonstrations on the first tasks of the stream.

    Parameters:
        env_config: Environment configuration.
        n: Number of demonstrations.

    Returns:
        The demonstrations.
    """
    return [scripted_demo(task, family_code(env_config, task.goal.family), env_config) for task in task_stream(env_config, n)]


def collect_group(
    params: PolicyParams,
    env_config: EnvConfig,
    task: TaskInstance,
    base: ExperienceBase,
    config: TrainerConfig,
    search: ExpBaseConfig,
    no_ret_fraction: float,
    rng: np.random.Generator,
    prefix: str = "",
) -> GroupBatch:
    """Roll out one group.

    Primary rollouts are drawn until the group is full, each disabled with probability `no_ret_fraction`.
    Right after a retrieval primary, its no-retrieval branch takes the next slot if one is left.

    Parameters:
        params: Sampling parameters.
        env_config: Environment configuration.
        task: The task.
        base: The experience base, read only.
        config: Trainer configuration.
        search: Retrieval settings.
        no_ret_fraction: Probability of disabling retrieval for a primary rollout.
        rng: The group's random generator.
        prefix: Trajectory id prefix.

    Returns:
        The unscored group.
    """
    env = CombinationLock(env_config)
    batch = GroupBatch(task, [])
    while len(batch.rollouts) < config.group_size:
        enabled = bool(rng.random() >= no_ret_fraction) and config.retrieval_enabled
        batch.primaries += 1
        batch.disabled += not enabled
        trajectory = run_episode(
            params,
            env,
            task,
            base,
            enabled,
            rng,
            search=search,
            initial_context=config.initial_context,
            traj_id=f"{prefix}{task.task_id}-g{len(batch.rollouts)}",
        )
        batch.rollouts.append(trajectory)
        if not (enabled and config.paired_branches and len(batch.rollouts) < config.group_size):
            continue
        t_b = select_branch_step(trajectory, rng)
        if t_b is None:
            continue
        if len(trajectory.retrieval_steps) < INTERIOR_MIN_RETRIEVALS:
            batch.fallbacks += 1
        pair = build_pair(trajectory, env, params, base, rng, search=search, t_b=t_b)
        if pair is not None:
            batch.pairs.append(pair)
            batch.rollouts.append(pair.noret)
    return batch


@dataclass
class IterationResult:
    """Everything produced by one iteration."""

    metrics: dict[str, Any]
    batches: list[GroupBatch]
    report: ExtractionReport


class Trainer:
    """Owns the policy, the experience base and the statistics of a run."""

    def __init__(
        self,
        env_config: EnvConfig,
        config: TrainerConfig,
        weights: RewardWeights,
        search: ExpBaseConfig,
        extraction: ExtractionConfig,
        *,
        workers: int = 1,
    ) -> None:
        """Initialize the trainer.

        Parameters:
            env_config: Environment configuration.
            config: Trainer configuration.
            weights: Reward weights.
            search: Retrieval settings.
            extraction: Extraction caps.
            workers: Rollout threads.
        """
        self.env_config = env_config
        self.config = config
        self.weights = weights
        self.search = search
        self.extraction = extraction
        self.workers = max(1, workers)
        self.space = ActionSpace(env_config)
        self.base = ExperienceBase(search.dim)
        self.stats = GoalLengthStats()
        self.params = PolicyParams.zeros(self.space)
        self.ref_params = self.params
        self.tasks = task_stream(env_config, config.iterations * config.batch_tasks)
        self.iteration = 0

    def warm_start(self, on_epoch: Callable[[int, float], None] | None = None) -> None:
        """Cold start on scripted demonstrations, then freeze the result as the reference policy.

        Parameters:
            on_epoch: Called with each epoch index and loss.
        """
        demos = make_demos(self.env_config, self.config.demo_tasks)
        if self.config.seed_base_from_demos:
            entries = [entry for demo in demos for entry in extract_factual(demo, self.extraction, self.search.dim)]
            update_base(self.base, entries, ())
        if self.config.cold_start_epochs:
            self.params = cold_start(self.params, demos, self.config.cold_start_epochs, self.config.cold_start_lr, on_epoch)
            logger.info("Cold start done after %d epochs", self.config.cold_start_epochs)
        self.ref_params = self.params

    def group_rng(self, iteration: int, task_index: int) -> np.random.Generator:
        """Random generator of one group, independent of the number of workers.

        Parameters:
            iteration: Iteration.
            task_index: Index of the task within the batch.

        Returns:
            The generator.
        """
        return np.random.default_rng(np.random.SeedSequence([self.config.seed, iteration, task_index]))

    def step(self) -> IterationResult:
        """Run one iteration.

        Returns:
            The iteration result.
        """
        iteration = self.iteration
        phase_index, phase, _ = phase_at(self.config, iteration)
        lr = learning_rate_at(self.config, iteration)
        batch_size = self.config.batch_tasks
        tasks = self.tasks[iteration * batch_size : (iteration + 1) * batch_size]
        old_params = self.params

        def collect(task_index: int) -> GroupBatch:
            return collect_group(
                old_params,
                self.env_config,
                tasks[task_index],
                self.base,
                self.config,
                self.search,
                phase.no_ret_fraction,
                self.group_rng(iteration, task_index),
                prefix=f"it{iteration:06d}-",
            )

        if self.workers > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as executor:
                batches = list(executor.map(collect, range(len(tasks))))
        else:
            batches = [collect(index) for index in range(len(tasks))]

        for batch in batches:
            batch.score(self.stats, self.weights)
            if abs(batch.advantages.mean()) > 1e-9:  # noqa: PLR2004
                raise ProtocolError(f"Advantages of {batch.task.task_id} do not have zero mean")
            if self.config.debug:
                self._check_identities(batch, old_params)

        features = _visited_features(batches)
        kl = kl_estimate(old_params, self.ref_params, features)
        objective, gradient = surrogate_loss(
            old_params,
            old_params,
            self.ref_params,
            batches,
            self.config.clip_eps,
            self.config.kl_beta,
        )
        self.params = old_params.replace(old_params.weights + lr * gradient)

        marginal = self._sample_marginal_utility(batches, old_params, iteration)

        pairs = [pair for batch in batches for pair in batch.pairs]
        groups = [batch.rollouts for batch in batches]
        entries = extract_batch(groups, pairs, self.weights, self.extraction, self.env_config.code_length, self.search.dim)
        successful = [trajectory for group in groups for trajectory in group if trajectory.success]
        report = update_base(self.base, entries, successful)
        for group in groups:
            for trajectory in group:
                self.stats.update(trajectory)

        self.iteration += 1
        interval = self.config.ref_refresh_interval
        if interval and self.iteration % interval == 0:
            self.ref_params = self.params
            logger.info("Reference policy refreshed at iteration %d", iteration)

        primaries = [trajectory for batch in batches for trajectory in batch.primary_rollouts]
        n_primaries = sum(batch.primaries for batch in batches)
        rewards = np.concatenate([batch.rewards for batch in batches])
        metrics = {
            "iteration": iteration,
            "phase": phase_index,
            "success_rate": float(np.mean([trajectory.success for trajectory in primaries])),
            "mean_T": float(np.mean([trajectory.T for trajectory in primaries])),
            "mean_retrievals": float(np.mean([len(trajectory.retrieval_steps) for trajectory in primaries])),
            "mean_R_traj": float(rewards.mean()),
            "objective": float(objective),
            "kl": kl,
            "base_counts": {entry_type.value: count for entry_type, count in self.base.stats().counts.items()},
            "lr": lr,
            "disabled_fraction": sum(batch.disabled for batch in batches) / n_primaries,
            "primaries": n_primaries,
            "disabled": sum(batch.disabled for batch in batches),
            "pairs": len(pairs),
            "branch_fallbacks": sum(batch.fallbacks for batch in batches),
            "extraction": report.as_dict(),
        }
        if marginal is not None:
            metrics["marginal_utility"] = marginal
        logger.info(
            "iteration %d phase %d: success %.3f, retrievals %.2f, base %d",
            iteration,
            phase_index,
            metrics["success_rate"],
            metrics["mean_retrievals"],
            len(self.base),
        )
        return IterationResult(metrics, batches, report)

    def _check_identities(self, batch: GroupBatch, params: PolicyParams) -> None:
        from recallgym.verify import verify_prop1  # noqa: PLC0415

        report = verify_prop1([batch], params, self.weights)
        if not report.ok:
            first = report.violations[0]
            raise ProtocolError(
                f"{batch.task.task_id}: {len(report.violations)} identity violation(s), "
                f"first {first.check} on {first.pair}: {first.detail}",
            )
        logger.debug("%s: identities hold on %d pair(s)", batch.task.task_id, report.checked)

    def _sample_marginal_utility(self, batches: Sequence[GroupBatch], params: PolicyParams, iteration: int) -> float | None:
        if not self.config.marginal_samples:
            return None
        for batch in batches:
            for pair in batch.pairs:
                point = pair.ret.branch_points[pair.t_b]
                query = dict(pair.ret.retrieval_steps)[pair.t_b]
                rng = np.random.default_rng(np.random.SeedSequence([self.config.seed, iteration, 1 << 20]))
                env = CombinationLock(self.env_config)
                return estimate_marginal_utility(
                    point,
                    query,
                    params,
                    env,
                    self.base,
                    self.config.marginal_samples,
                    rng,
                    search=self.search,
                )
        return None

    def run(self) -> Iterator[IterationResult]:
        """Run the remaining iterations.

        Yields:
            One result per iteration.
        """
        while self.iteration < self.config.iterations:
            yield self.step()


def run_evolution(
    env_config: EnvConfig,
    config: TrainerConfig,
    weights: RewardWeights,
    search: ExpBaseConfig | None = None,
    extraction: ExtractionConfig | None = None,
    *,
    workers: int = 1,
) -> Iterator[dict[str, Any]]:
    """Cold start then evolve, yielding one metrics record per iteration.

    Parameters:
        env_config: Environment configuration.
        config: Trainer configuration.
        weights: Reward weights.
        search: Retrieval settings.
        extraction: Extraction caps.
        workers: Rollout threads.

    Yields:
        Metrics records.
    """
    trainer = Trainer(
        env_config,
        config,
        weights,
        search or ExpBaseConfig(),
        extraction or ExtractionConfig(),
        workers=workers,
    )
    trainer.warm_start()
    for result in trainer.run():
        yield result.metrics


__all__ = [
    "DEFAULT_PHASES",
    "AnnealPhase",
    "GroupBatch",
    "IterationResult",
    "Trainer",
    "TrainerConfig",
    "cold_start",
    "collect_group",
    "demo_log_likelihood",
    "learning_rate_at",
    "make_demos",
    "normalized_advantages",
    "phase_at",
    "run_evolution",
    "surrogate_loss",
    "trajectory_log_ratio",
]
