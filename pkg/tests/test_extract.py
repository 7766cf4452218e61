"""Tests for the `extract` module."""

from __future__ import annotations

import numpy as np
import pytest

from recallgym.env import CombinationLock, EnvConfig, Goal, TaskInstance, family_code
from recallgym.errors import ConfigError
from recallgym.expbase import EntryType, ExperienceBase, make_entry
from recallgym.extract import (
    FOLLOW_KNOWN,
    NO_REPEAT,
    RETRIEVE_FIRST,
    RETRIEVE_ON_RESETS,
    STOP_RETRIEVING,
    ExtractionConfig,
    confirmed_prefix,
    distill_comparative,
    distill_failure,
    distill_success,
    extract_batch,
    extract_episodic,
    extract_factual,
    update_base,
)
from recallgym.reward import RewardWeights
from recallgym.types import Action, BranchPair, StepRecord, Trajectory

CONFIG = EnvConfig(code_length=3, alphabet_size=5, n_families=4, horizon=12, seed=2)
CAPS = ExtractionConfig()


def _play(
    actions: list[Action],
    *,
    family: int = 1,
    name: str = "t",
    context: tuple[str, ...] = (),
    task_id: str | None = None,
) -> Trajectory:
    task = TaskInstance(task_id or name, Goal(family), horizon=CONFIG.horizon)
    env = CombinationLock(CONFIG)
    env.reset(task)
    trajectory = Trajectory(name, task, retrieval_enabled=True, initial_context_ids=context)
    for t, action in enumerate(actions):
        if action.is_retrieval:
            trajectory.steps.append(StepRecord(t, action, 0, np.zeros(1), mask_retrieval=False))
            continue
        result = env.step(action)
        record = StepRecord(t, action, 0, np.zeros(1), False, reward=result.reward, observation=result.observation)  # noqa: FBT003
        trajectory.steps.append(record)
        trajectory.success = result.success
        if result.done:
            break
    return trajectory


def _symbols(*symbols: int) -> list[Action]:
    return [Action.try_symbol(symbol) for symbol in symbols]


def _wrong(symbol: int) -> int:
    return (symbol + 1) % CONFIG.alphabet_size


CODE = family_code(CONFIG, 1)
RETRIEVE = Action.retrieve("code for family 1")


def test_confirmed_prefix_keeps_longest_run() -> None:
    """Two right symbols, a reset, then one right symbol: the first two are confirmed."""
    trajectory = _play(_symbols(CODE[0], CODE[1], _wrong(CODE[2]), CODE[0]))
    assert confirmed_prefix(trajectory) == [CODE[0], CODE[1]]
    entries = extract_factual(trajectory, CAPS)
    assert len(entries) == 1
    assert entries[0].when_to_use == "code for family 1"
    assert entries[0].content == {"family": 1, "prefix": [CODE[0], CODE[1]]}


def test_no_factual_entry_without_advance() -> None:
    """Nothing is learned from wrong first symbols."""
    trajectory = _play(_symbols(_wrong(CODE[0]), _wrong(CODE[0])))
    assert confirmed_prefix(trajectory) == []
    assert extract_factual(trajectory, CAPS) == []


def test_success_confirms_the_whole_code() -> None:
    """A successful episode yields the full code."""
    trajectory = _play([RETRIEVE, *_symbols(*CODE)])
    assert trajectory.success
    assert confirmed_prefix(trajectory) == list(CODE)


def test_episodic_summary() -> None:
    """One summary per trajectory."""
    trajectory = _play([RETRIEVE, RETRIEVE, *_symbols(*CODE)])
    (entry,) = extract_episodic(trajectory, CAPS)
    assert entry.type_label is EntryType.EPISODIC
    assert entry.when_to_use == "recent attempt on family 1"
    assert entry.content == {"family": 1, "T": 5, "success": True, "retrievals": 2}


def test_success_rules() -> None:
    """Retrieving first and playing a known code are both recognized."""
    first = _play([RETRIEVE, *_symbols(*CODE)], name="first")
    known = _play(_symbols(*CODE), name="known", context=("mf-000001",))
    failed = _play(_symbols(_wrong(CODE[0])), name="failed")
    entries = distill_success([first, known, failed], CAPS)
    assert [entry.when_to_use for entry in entries] == [RETRIEVE_FIRST, FOLLOW_KNOWN]
    assert all(entry.type_label is EntryType.SUCCESS_SKILL for entry in entries)
    assert entries[0].content == {"rule": RETRIEVE_FIRST, "support": 1, "source": "first"}
    assert distill_success([failed], CAPS) == []


def test_failure_rules() -> None:
    """Repeated queries, retrieval-free timeouts and over-retrieval are recognized."""
    repeated = _play([RETRIEVE, RETRIEVE, *_symbols(_wrong(CODE[0]))], name="repeated")
    timeout = _play(_symbols(*[_wrong(CODE[0])] * CONFIG.horizon), name="timeout")
    queries = [Action.retrieve(f"code for family {family}") for family in range(4)]
    chatty = _play([*queries, *_symbols(_wrong(CODE[0]))], name="chatty")
    entries = distill_failure([repeated, timeout, chatty], CAPS, CONFIG.code_length)
    assert [entry.when_to_use for entry in entries] == [NO_REPEAT, RETRIEVE_ON_RESETS, STOP_RETRIEVING]
    assert len(distill_failure([repeated, timeout, chatty], ExtractionConfig(max_skills_per_group=1), 3)) == 1


def test_comparative_from_pairs() -> None:
    """A positive margin is a helpful retrieval, a zero margin teaches nothing."""
    ret = _play([RETRIEVE, *_symbols(*CODE)], name="ret")
    noret = _play(_symbols(*[_wrong(CODE[0])] * 6), name="noret")
    (entry,) = distill_comparative([BranchPair(ret, noret, 0)], [], RewardWeights(), CAPS)
    assert entry.when_to_use == "deciding whether to retrieve on family 1"
    assert entry.content["verdict"] == "helped"
    assert entry.content["query"] == "code for family 1"
    assert entry.content["delta"] == pytest.approx(1 + 0.5 * (6 - 4) / 6)

    same = _play([RETRIEVE, *_symbols(*CODE)], name="same")
    assert distill_comparative([BranchPair(ret, same, 0)], [[ret, noret]], RewardWeights(), CAPS) == []


def test_comparative_fallback() -> None:
    """Without pairs, the best and worst members of a group are contrasted."""
    best = _play([RETRIEVE, *_symbols(*CODE)], name="best")
    worst = _play(_symbols(*[_wrong(CODE[0])] * 3), name="worst")
    (entry,) = distill_comparative([], [[worst, best]], RewardWeights(), CAPS)
    assert entry.content["verdict"] == "helped"
    assert entry.content["better"] == {"success": True, "T": 4, "retrievals": 1}

    uniform = [_play(_symbols(_wrong(CODE[0])), name=f"u{index}") for index in range(3)]
    assert distill_comparative([], [uniform, []], RewardWeights(), CAPS) == []


def test_comparative_entries_are_capped_per_group() -> None:
    """Pairs beyond the group cap are dropped, pairs without a margin do not count."""
    caps = ExtractionConfig(max_skills_per_group=2)
    pairs = []
    for group, lengths in (("g1", (5, 6, 7, 8, 9)), ("g2", (10, 11))):
        ret = _play([RETRIEVE, *_symbols(*CODE)], name=f"{group}-ret", task_id=group)
        tie = _play([RETRIEVE, *_symbols(*CODE)], name=f"{group}-tie", task_id=group)
        pairs.append(BranchPair(ret, tie, 0))
        for length in lengths:
            noret = _play(_symbols(*[_wrong(CODE[0])] * length), name=f"{group}-{length}", task_id=group)
            pairs.append(BranchPair(ret, noret, 0))
    entries = distill_comparative(pairs, [], RewardWeights(), caps)
    deltas = [entry.content["delta"] for entry in entries]
    assert deltas == pytest.approx([1 + 0.5 * (length - 4) / length for length in (5, 6, 10, 11)])


def test_comparative_fallback_is_capped_per_group() -> None:
    """Groups of the same task share one cap."""
    caps = ExtractionConfig(max_skills_per_group=1)
    groups = []
    for index in range(3):
        best = _play([RETRIEVE, *_symbols(*CODE)], name=f"best{index}", task_id="same")
        worst = _play(_symbols(*[_wrong(CODE[0])] * 3), name=f"worst{index}", task_id="same")
        groups.append([worst, best])
    assert len(distill_comparative([], groups, RewardWeights(), caps)) == 1
    assert len(distill_comparative([], groups, RewardWeights(), CAPS)) == 3


def test_factual_upgrade_and_deduplication() -> None:
    """A longer prefix replaces the stored content, a shorter or equal one is dropped."""
    base = ExperienceBase()
    short = make_entry(EntryType.FACTUAL, "code for family 1", {"family": 1, "prefix": [CODE[0]]})
    report = update_base(base, [short], [])
    assert report.inserted["factual"] == 1
    longer = make_entry(EntryType.FACTUAL, "code for family 1", {"family": 1, "prefix": list(CODE[:2])})
    report = update_base(base, [longer], [])
    assert report.upgraded["factual"] == 1
    assert base.find(EntryType.FACTUAL, "code for family 1").content["prefix"] == list(CODE[:2])
    report = update_base(base, [make_entry(EntryType.FACTUAL, "code for family 1", {"family": 1, "prefix": [0]})], [])
    assert report.deduped["factual"] == 1
    assert len(base) == 1
    assert report.as_dict()["deduped"]["factual"] == 1


def test_priorities_follow_successful_retrievals() -> None:
    """An entry retrieved by three successful trajectories gains three points."""
    base = ExperienceBase()
    entry = make_entry(EntryType.FACTUAL, "code for family 1", {"family": 1, "prefix": list(CODE)})
    base.insert(entry)
    successes = [_play(_symbols(*CODE), name=f"s{index}", context=(entry.id,)) for index in range(3)]
    failure = _play(_symbols(_wrong(CODE[0])), name="f", context=(entry.id,))
    report = update_base(base, [], [*successes])
    assert entry.priority == 3
    assert report.bumped["factual"] == 3
    update_base(base, [], [trajectory for trajectory in [failure] if trajectory.success])
    assert entry.priority == 3


def test_extract_batch_is_deterministic() -> None:
    """The same batch gives the same entries in the same order."""
    group = [
        _play([RETRIEVE, *_symbols(*CODE)], name="a"),
        _play(_symbols(CODE[0], _wrong(CODE[1])), name="b"),
    ]
    first = extract_batch([group], [], RewardWeights(), CAPS, CONFIG.code_length)
    second = extract_batch([group], [], RewardWeights(), CAPS, CONFIG.code_length)
    assert [(entry.type_label, entry.when_to_use, entry.content) for entry in first] == [
        (entry.type_label, entry.when_to_use, entry.content) for entry in second
    ]
    assert {entry.type_label for entry in first} >= {EntryType.FACTUAL, EntryType.EPISODIC, EntryType.SUCCESS_SKILL}


def test_invalid_caps() -> None:
    """Caps must be positive."""
    with pytest.raises(ConfigError) as error:
        ExtractionConfig(max_episodic_per_traj=0)
    assert error.value.key == "extraction.max_episodic_per_traj"
