"""Numerical verification: pairwise advantage identities and the property suite.

The suite is a list of named checks. Each check raises `AssertionError` (or any exception) on failure;
checks are run through [`recallgym.runners.run`][recallgym.runners.run], which captures their output
and prints it only when they fail.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any

import numpy as np

from recallgym import runners
from recallgym.env import CombinationLock, EnvConfig, Goal, Observation, TaskInstance, family_code, task_stream
from recallgym.expbase import (
    Entry,
    EntryType,
    ExpBaseConfig,
    ExperienceBase,
    Query,
    RetrievalBudget,
    encode,
    make_entry,
)
from recallgym.extract import update_base
from recallgym.policy import (
    ActionSpace,
    PolicyParams,
    action_distribution,
    grad_log_prob,
    kl_estimate,
    kl_gradient,
    log_prob,
)
from recallgym.reward import GoalLengthStats, RewardWeights, margin, process_reward, trajectory_reward
from recallgym.rollout import UniformAgent, build_pair, estimate_marginal_utility, run_episode
from recallgym.trainer import GroupBatch, demo_log_likelihood, make_demos, normalized_advantages, surrogate_loss
from recallgym.types import Action, BranchPair, Feedback, StepRecord, Trajectory

if TYPE_CHECKING:
    from collections.abc import Callable, Sequence

    from recallgym.runners import RunResult

logger = logging.getLogger(__name__)

ADVANTAGE_TOLERANCE = 1e-10
GRADIENT_TOLERANCE = 1e-9
FINITE_DIFFERENCE_STEP = 1e-5
FINITE_DIFFERENCE_TOLERANCE = 1e-4

SYNTHETIC_ENV = EnvConfig(code_length=3, alphabet_size=5, n_families=4)


@dataclass
class Violation:
    """One failed identity."""

    pair: str
    check: str
    detail: str


@dataclass
class IdentityReport:
    """Outcome of [`verify_prop1`][recallgym.verify.verify_prop1]."""

    checked: int = 0
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        """Whether every pair satisfied every identity."""
        return not self.violations

    def as_dict(self) -> dict[str, Any]:
        """Serialize the report.

        Returns:
            A JSON-compatible dictionary.
        """
        return {"checked": self.checked, "violations": [asdict(violation) for violation in self.violations]}


def _index(rollouts: Sequence[Trajectory], trajectory: Trajectory) -> int:
    return next(index for index, candidate in enumerate(rollouts) if candidate is trajectory)


def _sign(value: float) -> int:
    return (value > 0) - (value < 0)


def verify_prop1(batches: Sequence[GroupBatch], params: PolicyParams, weights: RewardWeights) -> IdentityReport:
    """Check the pairwise identities of every branch pair of scored groups.

    For a pair `(i, j)` of a group with reward deviation `std`:

    - `(A_i - A_j) * (std + eps) == R_i - R_j`;
    - `(A_i - A_j) * (std + eps) == delta_i - lambda_T * (T_j - T_i) / max(T_j, 1) + r_proc_i + r_eff_i - r_eff_j`;
    - the retrieval member's process reward follows the sign of its margin, the other member has none;
    - at the branching step, the paired gradient `A_i g_i + A_j g_j` equals its split into
      `(A_i + A_j) / 2 * (g_i + g_j) + (A_i - A_j) / 2 * (g_i - g_j)`;
    - both members share their prefix and the matched member does not retrieve at the branching step.

    Parameters:
        batches: Scored groups.
        params: Policy parameters used for the branching-step gradients.
        weights: Reward weights.

    Returns:
        The report.
    """
    report = IdentityReport()
    for batch in batches:
        denominator = float(batch.rewards.std()) + weights.eps_std
        for pair in batch.pairs:
            report.checked += 1
            name = pair.ret.traj_id

            def fail(check: str, detail: str, name: str = name) -> None:
                report.violations.append(Violation(name, check, detail))

            i, j = _index(batch.rollouts, pair.ret), _index(batch.rollouts, pair.noret)
            a_i, a_j = float(batch.advantages[i]), float(batch.advantages[j])
            b_i, b_j = batch.breakdowns[i], batch.breakdowns[j]

            lhs = (a_i - a_j) * denominator
            rhs = b_i.R_traj - b_j.R_traj
            if abs(lhs - rhs) > ADVANTAGE_TOLERANCE * max(1.0, abs(rhs)):
                fail("pairwise-advantage", f"{lhs!r} != {rhs!r}")

            delta = margin(pair.ret.env_return, pair.ret.T, pair.noret.env_return, pair.noret.T, weights.lambda_T)
            if b_i.delta is None or abs(b_i.delta - delta) > ADVANTAGE_TOLERANCE:
                fail("margin", f"recorded {b_i.delta!r}, recomputed {delta!r}")
            length_term = weights.lambda_T * (pair.noret.T - pair.ret.T) / max(pair.noret.T, 1)
            expansion = delta - length_term + b_i.r_proc + (b_i.r_eff - b_j.r_eff)
            if abs(lhs - expansion) > ADVANTAGE_TOLERANCE * max(1.0, abs(expansion)):
                fail("advantage-expansion", f"{lhs!r} != {expansion!r}")

            z = 1 if pair.ret.retrieval_steps else 0
            expected = weights.alpha * _sign(delta) * z
            if b_i.r_proc != expected:
                fail("process-reward-sign", f"margin {delta!r} gave r_proc {b_i.r_proc!r}, expected {expected!r}")
            if b_j.r_proc != 0:
                fail("process-reward-matched", f"matched branch has r_proc {b_j.r_proc!r}")

            if not pair.shares_prefix():
                fail("prefix", f"prefixes differ before step {pair.t_b}")
            step_i, step_j = pair.ret.steps[pair.t_b], pair.noret.steps[pair.t_b]
            if step_j.action.is_retrieval or not step_j.mask_retrieval:
                fail("suppression", f"matched branch step {pair.t_b} is {step_j.action.label}")
                continue
            g_i = grad_log_prob(params, step_i.features, step_i.action_index, step_i.mask_retrieval)
            g_j = grad_log_prob(params, step_j.features, step_j.action_index, step_j.mask_retrieval)
            direct = a_i * g_i + a_j * g_j
            split = (a_i + a_j) / 2 * (g_i + g_j) + (a_i - a_j) / 2 * (g_i - g_j)
            gap = float(np.max(np.abs(direct - split)))
            if gap > GRADIENT_TOLERANCE:
                fail("branching-gradient", f"max deviation {gap!r}")
    return report


def _random_step(
    rng: np.random.Generator,
    space: ActionSpace,
    t: int,
    *,
    retrieval: bool | None = None,
    mask: bool = False,
) -> StepRecord:
    features = rng.random(space.feature_dim)
    if retrieval is None:
        retrieval = not mask and rng.random() < 0.3
    if retrieval:
        # two families only, so queries repeat often
        index = space.n_env + int(rng.integers(0, 2))
        return StepRecord(t, space.actions[index], index, features, mask)
    symbol = int(rng.integers(0, space.n_env))
    observation = Observation(0, Feedback.RESET, t + 1)
    return StepRecord(t, Action.try_symbol(symbol), symbol, features, mask, observation=observation)


def _last_step(rng: np.random.Generator, space: ActionSpace, t: int, *, success: bool, mask: bool = False) -> StepRecord:
    if not success:
        return _random_step(rng, space, t, retrieval=False, mask=mask)
    symbol = int(rng.integers(0, space.n_env))
    observation = Observation(space.config.code_length, Feedback.ADVANCE, t + 1)
    return StepRecord(t, Action.try_symbol(symbol), symbol, rng.random(space.feature_dim), mask, 1.0, (), observation)


def _continue(rng: np.random.Generator, space: ActionSpace, steps: list[StepRecord], *, success: bool) -> list[StepRecord]:
    start = len(steps)
    middle = [_random_step(rng, space, t) for t in range(start, start + int(rng.integers(0, 8)))]
    return [*steps, *middle, _last_step(rng, space, start + len(middle), success=success)]


def synthetic_pair(rng: np.random.Generator, space: ActionSpace, task: TaskInstance, name: str) -> BranchPair:
    """A random branch pair with a shared prefix.

    Parameters:
        rng: Random generator.
        space: Action space.
        task: Task of both members.
        name: Trajectory id of the retrieval member.

    Returns:
        The pair.
    """
    t_b = int(rng.integers(0, 4))
    prefix = [_random_step(rng, space, t) for t in range(t_b)]
    ret_success, noret_success = bool(rng.random() < 0.5), bool(rng.random() < 0.5)
    ret_steps = _continue(rng, space, [*prefix, _random_step(rng, space, t_b, retrieval=True)], success=ret_success)
    noret_steps = _continue(rng, space, [*prefix, _random_step(rng, space, t_b, mask=True)], success=noret_success)
    ret = Trajectory(name, task, retrieval_enabled=True, steps=ret_steps, success=ret_success)
    noret = Trajectory(
        f"{name}/noret@{t_b}",
        task,
        retrieval_enabled=True,
        steps=noret_steps,
        success=noret_success,
        branch_of=(name, t_b),
    )
    return BranchPair(ret, noret, t_b)


def synthetic_trajectory(rng: np.random.Generator, space: ActionSpace, task: TaskInstance, name: str) -> Trajectory:
    """A random unpaired trajectory. Retrieval-disabled ones are masked at every step.

    Parameters:
        rng: Random generator.
        space: Action space.
        task: The task.
        name: Trajectory id.

    Returns:
        The trajectory.
    """
    enabled = bool(rng.random() < 0.5)
    success = bool(rng.random() < 0.5)
    steps = [_random_step(rng, space, t, mask=not enabled) for t in range(int(rng.integers(0, 10)))]
    steps.append(_last_step(rng, space, len(steps), success=success, mask=not enabled))
    return Trajectory(name, task, retrieval_enabled=enabled, steps=steps, success=success)


def synthetic_stats(rng: np.random.Generator, n_families: int) -> GoalLengthStats:
    """Random successful-length statistics, some families left empty.

    Parameters:
        rng: Random generator.
        n_families: Number of families.

    Returns:
        The statistics.
    """
    stats = GoalLengthStats()
    for family in range(n_families):
        if rng.random() < 0.7:
            count = int(rng.integers(1, 5))
            stats.counts[family] = count
            stats.totals[family] = int(rng.integers(count, 15 * count))
    return stats


def synthetic_batch(
    rng: np.random.Generator,
    space: ActionSpace,
    weights: RewardWeights,
    stats: GoalLengthStats,
    name: str = "synthetic",
) -> GroupBatch:
    """A random scored group holding at least one branch pair.

    Parameters:
        rng: Random generator.
        space: Action space.
        weights: Reward weights.
        stats: Successful-length statistics.
        name: Prefix of trajectory ids.

    Returns:
        The group.
    """
    family = int(rng.integers(0, space.config.n_families))
    task = TaskInstance(f"{name}-f{family}", Goal(family), horizon=space.config.horizon)
    group_size = int(rng.integers(2, 9))
    batch = GroupBatch(task, [])
    while len(batch.rollouts) < group_size:
        slot = f"{name}-g{len(batch.rollouts)}"
        if group_size - len(batch.rollouts) >= 2 and (not batch.pairs or rng.random() < 0.5):
            pair = synthetic_pair(rng, space, task, slot)
            batch.pairs.append(pair)
            batch.rollouts.extend((pair.ret, pair.noret))
        else:
            batch.rollouts.append(synthetic_trajectory(rng, space, task, slot))
    batch.score(stats, weights)
    return batch


@dataclass
class NecessaryRetrieval:
    """A lock that can only be opened in time by retrieving its code first."""

    env_config: EnvConfig
    task: TaskInstance
    base: ExperienceBase
    params: PolicyParams
    search: ExpBaseConfig


def necessary_retrieval_instance(weight: float = 20.0) -> NecessaryRetrieval:
    """Build the necessary-retrieval instance.

    The horizon leaves room for one retrieval and one try per code symbol.
    Without an initial context, the policy retrieves the family code while it has not retrieved yet and plays the
    known symbol once there is one. Otherwise it prefers a symbol that is wrong for the first position, so an
    episode whose first retrieval is suppressed resets the lock and runs out of steps.

    Parameters:
        weight: Magnitude of the hand-set weights.

    Returns:
        The instance.
    """
    env_config = EnvConfig(code_length=3, alphabet_size=5, n_families=2, horizon=4, seed=7)
    space = ActionSpace(env_config)
    code = family_code(env_config, 0)
    task = TaskInstance("necessary-f0", Goal(0), horizon=env_config.horizon)

    search = ExpBaseConfig()
    base = ExperienceBase(search.dim)
    base.insert(make_entry(EntryType.FACTUAL, space.family_query(0), {"family": 0, "prefix": list(code)}))

    offsets = space.offsets
    weights = np.zeros((len(space), space.feature_dim))
    weights[space.index(Action.retrieve(space.family_query(0))), offsets["retrievals"]] = weight
    for symbol in range(env_config.alphabet_size):
        weights[symbol, offsets["known"] + symbol] = weight
    wrong = (code[0] + 1) % env_config.alphabet_size
    weights[wrong, offsets["known"] + env_config.alphabet_size] = weight / 2
    return NecessaryRetrieval(env_config, task, base, PolicyParams(weights, space.n_env), search)


# ---------------------------------------------------------------------------------------------------------------------
# property suite


@dataclass(frozen=True)
class SuiteSettings:
    """Sizes of the property suite."""

    seed: int = 0
    scale: float = 1.0

    def count(self, full: int) -> int:
        """Scale an instance count.

        Parameters:
            full: Count at scale 1.

        Returns:
            The scaled count, at least 1.
        """
        return max(1, math.ceil(full * self.scale))

    def rng(self, salt: int) -> np.random.Generator:
        """Independent generator of one check.

        Parameters:
            salt: Check identifier.

        Returns:
            The generator.
        """
        return np.random.default_rng([self.seed, salt])


def _reference_reward(
    trajectory: Trajectory,
    partner: Trajectory | None,
    stats: GoalLengthStats,
    weights: RewardWeights,
) -> float:
    returns = 0.0
    for step in trajectory.steps:
        returns += step.reward
    queries = [step.action.query for step in trajectory.steps if step.action.kind.value == "retrieve"]
    proc = 0.0
    if partner is not None:
        partner_return = sum(step.reward for step in partner.steps)
        length, partner_length = len(trajectory.steps), len(partner.steps)
        delta = (returns - partner_return) + weights.lambda_T * (partner_length - length) / max(partner_length, 1)
        if queries and delta > 0:
            proc = weights.alpha
        elif queries and delta < 0:
            proc = -weights.alpha
    eff = -weights.w_q if len(set(queries)) < len(queries) else 0.0
    count = stats.counts.get(trajectory.family, 0)
    if count:
        mean = stats.totals[trajectory.family] / count
        raw = weights.w_t * (mean - len(trajectory.steps)) / max(mean, 1.0)
        eff += float(np.clip(raw, -abs(weights.w_t), abs(weights.w_t)))
    return returns + proc + eff


def check_reward_oracle(settings: SuiteSettings) -> None:
    """Trajectory rewards match a straight-line recomputation."""
    rng = settings.rng(1)
    space = ActionSpace(SYNTHETIC_ENV)
    n = settings.count(100_000)
    worst = 0.0
    for index in range(n):
        weights = RewardWeights(
            alpha=float(rng.uniform(0, 1)),
            lambda_T=float(rng.uniform(0, 1)),
            w_q=float(rng.uniform(0, 1)),
            w_t=float(rng.uniform(-0.5, 0.5)),
        )
        stats = synthetic_stats(rng, SYNTHETIC_ENV.n_families)
        family = int(rng.integers(0, SYNTHETIC_ENV.n_families))
        task = TaskInstance(f"oracle-{index}", Goal(family), horizon=SYNTHETIC_ENV.horizon)
        if rng.random() < 0.5:
            pair = synthetic_pair(rng, space, task, f"oracle-{index}")
            cases = [(pair.ret, pair, pair.noret), (pair.noret, pair, None)]
        else:
            cases = [(synthetic_trajectory(rng, space, task, f"oracle-{index}"), None, None)]
        for trajectory, pair, partner in cases:
            breakdown = trajectory_reward(trajectory, pair, stats, weights)
            expected = _reference_reward(trajectory, partner, stats, weights)
            worst = max(worst, abs(breakdown.R_traj - expected))
            assert breakdown.R_traj == breakdown.R_env + breakdown.r_proc + breakdown.r_eff
    print(f"{n} instances, worst deviation {worst:.3e}")
    assert worst <= 1e-12, f"reward deviates from the reference by {worst}"


def check_process_reward_table(settings: SuiteSettings) -> None:  # noqa: ARG001
    """Process reward on the exhaustive sign grid."""
    weights = RewardWeights(alpha=0.5)
    for z in (0, 1):
        for delta in (-1.0, -1e-9, 0.0, 1e-9, 1.0):
            expected = 0.5 * _sign(delta) if z else 0.0
            actual = process_reward(z, delta, weights)
            assert actual == expected, f"process_reward({z}, {delta}) = {actual}, expected {expected}"


def check_pair_identities(settings: SuiteSettings) -> None:
    """Pairwise advantage identities on random groups."""
    rng = settings.rng(3)
    space = ActionSpace(SYNTHETIC_ENV)
    n = settings.count(1000)
    checked = 0
    for index in range(n):
        weights = RewardWeights(
            alpha=float(rng.uniform(0, 1)),
            lambda_T=float(rng.uniform(0, 1)),
            w_q=float(rng.uniform(0, 1)),
            w_t=float(rng.uniform(0, 0.5)),
        )
        params = PolicyParams(rng.normal(0, 0.5, (len(space), space.feature_dim)), space.n_env)
        batch = synthetic_batch(rng, space, weights, synthetic_stats(rng, SYNTHETIC_ENV.n_families), f"pairs-{index}")
        report = verify_prop1([batch], params, weights)
        checked += report.checked
        assert report.ok, f"violations: {report.violations}"
    print(f"{n} groups, {checked} pairs")


def _directional_check(
    name: str,
    value: Callable[[np.ndarray], float],
    gradient: np.ndarray,
    point: np.ndarray,
    rng: np.random.Generator,
) -> None:
    direction = rng.normal(size=point.shape)
    step = FINITE_DIFFERENCE_STEP
    numeric = (value(point + step * direction) - value(point - step * direction)) / (2 * step)
    analytic = float(np.sum(gradient * direction))
    error = abs(numeric - analytic)
    assert error <= FINITE_DIFFERENCE_TOLERANCE * max(1.0, abs(analytic)), (
        f"{name}: analytic {analytic!r} vs finite differences {numeric!r}"
    )


def _gradient_instance(rng: np.random.Generator, space: ActionSpace, demos: Sequence[Trajectory]) -> None:
    shape = (len(space), space.feature_dim)
    params = PolicyParams(rng.normal(0, 0.5, shape), space.n_env)
    features = rng.random(space.feature_dim)
    mask = bool(rng.random() < 0.3)
    action = int(rng.integers(0, space.n_env if mask else len(space)))
    _directional_check(
        "log_prob",
        lambda w: log_prob(params.replace(w), features, action, mask),
        grad_log_prob(params, features, action, mask),
        params.weights,
        rng,
    )

    ref = PolicyParams(rng.normal(0, 0.5, shape), space.n_env)
    states = rng.random((4, space.feature_dim))
    _directional_check(
        "kl",
        lambda w: kl_estimate(params.replace(w), ref, states),
        kl_gradient(params, ref, states),
        params.weights,
        rng,
    )

    _directional_check(
        "cold_start",
        lambda w: demo_log_likelihood(params.replace(w), demos)[0],
        demo_log_likelihood(params, demos)[1],
        params.weights,
        rng,
    )

    synthetic_space = ActionSpace(SYNTHETIC_ENV)
    batch = synthetic_batch(rng, synthetic_space, RewardWeights(), GoalLengthStats())
    synthetic_shape = (len(synthetic_space), synthetic_space.feature_dim)
    old = PolicyParams(rng.normal(0, 0.5, synthetic_shape), synthetic_space.n_env)
    current = old.replace(old.weights + rng.normal(0, 0.001, synthetic_shape))
    reference = PolicyParams(rng.normal(0, 0.5, synthetic_shape), synthetic_space.n_env)
    _directional_check(
        "surrogate",
        lambda w: surrogate_loss(current.replace(w), old, reference, [batch], 0.2, 0.05)[0],
        surrogate_loss(current, old, reference, [batch], 0.2, 0.05)[1],
        current.weights,
        rng,
    )


def check_gradients(settings: SuiteSettings) -> None:
    """Analytic gradients match central finite differences."""
    rng = settings.rng(4)
    env_config = EnvConfig(code_length=2, alphabet_size=3, n_families=3)
    space = ActionSpace(env_config)
    demos = make_demos(env_config, 3)
    n = settings.count(100)
    for _ in range(n):
        _gradient_instance(rng, space, demos)
    print(f"{n} instances")


def check_advantages(settings: SuiteSettings) -> None:
    """Advantages have zero mean, are shift invariant, and vanish on uniform groups."""
    rng = settings.rng(5)
    for _ in range(settings.count(1000)):
        # dyadic rewards and a power-of-two group keep every operation exact
        rewards = rng.integers(-16, 17, 8) / 8
        advantages = normalized_advantages(rewards, 1e-6)
        assert abs(advantages.mean()) <= 1e-9, f"mean {advantages.mean()}"
        shift = float(rng.integers(-5, 6))
        shifted = normalized_advantages(rewards + shift, 1e-6)
        assert np.array_equal(shifted, advantages), "shifted rewards changed the advantages"
    uniform = normalized_advantages(np.full(5, 0.75), 1e-6)
    assert np.all(uniform == 0), f"uniform rewards gave {uniform}"


def check_replay_determinism(settings: SuiteSettings) -> None:
    """Restored snapshots replay identically and branch pairs share their prefix."""
    rng = settings.rng(6)
    env_config = EnvConfig(code_length=3, alphabet_size=4, n_families=5, horizon=30)
    tasks = task_stream(env_config, env_config.n_families)
    n = settings.count(1000)
    for _ in range(n):
        env = CombinationLock(env_config)
        env.reset(tasks[int(rng.integers(0, len(tasks)))])
        prefix = int(rng.integers(0, 10))
        for _ in range(prefix):
            if env.state.done:
                break
            env.step(Action.try_symbol(int(rng.integers(0, env_config.alphabet_size))))
        snapshot = env.snapshot()
        suffix = [Action.try_symbol(int(rng.integers(0, env_config.alphabet_size))) for _ in range(10)]
        first = []
        for action in suffix:
            if env.state.done:
                break
            first.append(env.step(action))
        final = env.snapshot()

        other = CombinationLock(env_config)
        other.restore(snapshot)
        second = other.replay(suffix[: len(first)])
        assert first == second, "replayed suffix differs"
        assert other.snapshot() == final, "replayed state differs"

    space = ActionSpace(env_config)
    base = ExperienceBase()
    for family in range(env_config.n_families):
        code = family_code(env_config, family)[:2]
        base.insert(make_entry(EntryType.FACTUAL, space.family_query(family), {"family": family, "prefix": list(code)}))
    agent = UniformAgent(space)
    env = CombinationLock(env_config)
    pairs = 0
    for index in range(settings.count(200)):
        task = tasks[index % len(tasks)]
        trajectory = run_episode(agent, env, task, base, True, rng, traj_id=f"replay-{index}")  # noqa: FBT003
        pair = build_pair(trajectory, env, agent, base, rng)
        if pair is None:
            continue
        pairs += 1
        assert pair.shares_prefix(), f"{trajectory.traj_id}: prefixes differ"
        assert not pair.noret.steps[pair.t_b].action.is_retrieval, f"{trajectory.traj_id}: retrieval at branch step"
    print(f"{n} replays, {pairs} pairs")


def _random_unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    vector = rng.normal(size=dim)
    return vector / np.linalg.norm(vector)


def _brute_force_retrieve(
    inserted: Sequence[Entry],
    query: Query,
    quotas: dict[EntryType, int],
    lambda_p: float,
    max_bonus: float,
) -> list[Entry]:
    expected: list[Entry] = []
    for entry_type in EntryType:
        candidates = [entry for entry in inserted if entry.type_label is entry_type]
        candidates.sort(
            key=lambda entry: -(float(entry.embedding @ query.embedding) + min(lambda_p * entry.priority, max_bonus)),
        )
        expected.extend(candidates[: quotas[entry_type]])
    return expected


def check_expbase_laws(settings: SuiteSettings) -> None:
    """Quota law, ranking against brute force, deduplication and priority updates."""
    rng = settings.rng(7)
    dim = 16
    types = list(EntryType)
    n = settings.count(10_000)
    for index in range(n):
        base = ExperienceBase(dim)
        inserted: list[Entry] = []
        for number in range(int(rng.integers(0, 12))):
            entry_type = types[int(rng.integers(0, len(types)))]
            entry = Entry("", entry_type, f"key {number}", {}, _random_unit(rng, dim), int(rng.integers(0, 4)))
            assert base.insert(entry)
            duplicate = Entry("", entry_type, f"key {number}", {}, _random_unit(rng, dim))
            assert not base.insert(duplicate), "duplicate key was stored"
            inserted.append(entry)
        quotas = {entry_type: int(rng.integers(0, 3)) for entry_type in types}
        budget = RetrievalBudget(quotas)
        lambda_p = float(rng.uniform(0, 0.2))
        max_bonus = math.inf if index % 2 else float(rng.uniform(0, 0.3))
        query = Query(f"query {index}", _random_unit(rng, dim))
        result = base.retrieve(query, budget, lambda_p, max_bonus=max_bonus)

        expected = _brute_force_retrieve(inserted, query, quotas, lambda_p, max_bonus)
        assert [entry.id for entry in result] == [entry.id for entry in expected], "ranking differs from brute force"
        for entry_type in types:
            assert sum(entry.type_label is entry_type for entry in result) <= quotas[entry_type], "quota exceeded"

        if inserted:
            scaled = 4
            for entry in inserted:
                entry.priority *= scaled
            rescaled = base.retrieve(query, budget, lambda_p / scaled, max_bonus=max_bonus)
            assert [entry.id for entry in rescaled] == [entry.id for entry in result], "priority scaling changed ranks"

            chosen = [inserted[int(k)].id for k in rng.integers(0, len(inserted), 3)]
            task = TaskInstance(f"laws-{index}", Goal(0))
            helped = [
                Trajectory(f"laws-{index}-{k}", task, retrieval_enabled=True, success=True, initial_context_ids=ids)
                for k, ids in enumerate((tuple(chosen), tuple(chosen[:1])))
            ]
            before = {entry.id: entry.priority for entry in base}
            update_base(base, [], helped)
            for entry in base:
                gained = sum(entry.id in trajectory.retrieved_ids for trajectory in helped)
                assert entry.priority == before[entry.id] + gained, f"{entry.id} gained {entry.priority - before[entry.id]}"
    print(f"{n} bases")


def check_encoder(settings: SuiteSettings) -> None:
    """Encoder outputs unit vectors."""
    rng = settings.rng(8)
    words = ["code", "for", "family", "open", "the", "lock", "retrieve", "hints", "goal", "attempt"]
    for _ in range(settings.count(1000)):
        text = " ".join(words[int(k)] for k in rng.integers(0, len(words), int(rng.integers(1, 8))))
        assert abs(np.linalg.norm(encode(text)) - 1.0) <= 1e-9, f"{text!r} is not unit norm"


def check_marginal_utility(settings: SuiteSettings) -> None:
    """Retrieval has a clearly positive marginal utility where it is necessary."""
    rng = settings.rng(9)
    instance = necessary_retrieval_instance()
    env = CombinationLock(instance.env_config)
    trajectory = run_episode(
        instance.params,
        env,
        instance.task,
        instance.base,
        True,  # noqa: FBT003
        rng,
        search=instance.search,
        initial_context=False,
    )
    assert trajectory.success, "the instance policy did not open the lock"
    point = trajectory.branch_points[0]
    query = trajectory.queries[0]
    estimate = estimate_marginal_utility(
        point,
        query,
        instance.params,
        env,
        instance.base,
        settings.count(200),
        rng,
        search=instance.search,
    )
    print(f"marginal utility {estimate:.3f}")
    assert estimate >= 0.3, f"marginal utility {estimate} is below 0.3"


def check_distribution(settings: SuiteSettings) -> None:
    """Masked distributions are the conditional of unmasked ones."""
    rng = settings.rng(10)
    space = ActionSpace(SYNTHETIC_ENV)
    for _ in range(settings.count(1000)):
        params = PolicyParams(rng.normal(0, 1, (len(space), space.feature_dim)), space.n_env)
        features = rng.random(space.feature_dim)
        full = action_distribution(params, features)
        masked = action_distribution(params, features, mask_retrieval=True)
        assert abs(full.sum() - 1) <= 1e-12, "probabilities do not sum to 1"
        conditional = full[: space.n_env] / full[: space.n_env].sum()
        assert np.allclose(masked[: space.n_env], conditional, rtol=0, atol=1e-12), "masking is not conditioning"
        assert np.all(masked[space.n_env :] == 0), "masked actions have probability"


CHECKS: list[tuple[str, Callable[[SuiteSettings], None]]] = [
    ("reward oracle", check_reward_oracle),
    ("process reward table", check_process_reward_table),
    ("pairwise advantage identities", check_pair_identities),
    ("gradients against finite differences", check_gradients),
    ("advantage properties", check_advantages),
    ("replay determinism", check_replay_determinism),
    ("experience base laws", check_expbase_laws),
    ("encoder unit norm", check_encoder),
    ("masked distribution", check_distribution),
    ("marginal utility of necessary retrieval", check_marginal_utility),
]


def run_suite(
    settings: SuiteSettings | None = None,
    *,
    fmt: str | None = None,
    quiet: bool = False,
    silent: bool = False,
    checks: Sequence[tuple[str, Callable[[SuiteSettings], None]]] | None = None,
) -> list[RunResult]:
    """Run the property suite.

    Parameters:
        settings: Suite sizes and seed.
        fmt: Output format.
        quiet: Do not print the output of failing checks.
        silent: Print nothing.
        checks: Checks to run instead of [`CHECKS`][recallgym.verify.CHECKS].

    Returns:
        One result per check.
    """
    settings = settings or SuiteSettings()
    checks = CHECKS if checks is None else checks
    if not silent:
        runners.print_header(len(checks), fmt=fmt)
    results = []
    for number, (title, check) in enumerate(checks, start=1):
        logger.debug("Running check %s", title)
        results.append(
            runners.run(check, args=[settings], number=number, title=title, fmt=fmt, quiet=quiet, silent=silent),
        )
    return results


def write_report(results: Sequence[RunResult], path: str | Path) -> None:
    """Write the machine-readable outcome of a suite run.

    Parameters:
        results: Check results.
        path: Destination file.
    """
    data = {
        "passed": sum(result.success for result in results),
        "failed": [
            {"check": result.title, "code": result.code, "message": result.output}
            for result in results
            if not result.success
        ],
    }
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf8")


__all__ = [
    "CHECKS",
    "IdentityReport",
    "NecessaryRetrieval",
    "SuiteSettings",
    "Violation",
    "necessary_retrieval_instance",
    "run_suite",
    "synthetic_batch",
    "synthetic_pair",
    "synthetic_stats",
    "synthetic_trajectory",
    "verify_prop1",
    "write_report",
]
