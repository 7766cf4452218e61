"""Tests for the `verify` module."""

from __future__ import annotations

import dataclasses
import json
from typing import TYPE_CHECKING

import numpy as np
import pytest

from recallgym import reward, verify
from recallgym.env import CombinationLock, EnvState
from recallgym.policy import ActionSpace, PolicyParams
from recallgym.reward import RewardWeights
from recallgym.types import Feedback

if TYPE_CHECKING:
    from pathlib import Path


def _batches(seed: int, count: int = 20) -> tuple[list, PolicyParams, RewardWeights]:
    rng = np.random.default_rng(seed)
    space = ActionSpace(verify.SYNTHETIC_ENV)
    weights = RewardWeights()
    stats = verify.synthetic_stats(rng, verify.SYNTHETIC_ENV.n_families)
    batches = [verify.synthetic_batch(rng, space, weights, stats, f"b{index}") for index in range(count)]
    params = PolicyParams(rng.normal(0, 0.5, (len(space), space.feature_dim)), space.n_env)
    return batches, params, weights


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_identities_hold_on_synthetic_groups(seed: int) -> None:
    """Every pair of correctly scored groups satisfies the identities.

    Parameters:
        seed: Random seed.
    """
    batches, params, weights = _batches(seed)
    report = verify.verify_prop1(batches, params, weights)
    assert report.ok, report.as_dict()
    assert report.checked >= len(batches)


def test_flipped_process_reward_is_caught(monkeypatch: pytest.MonkeyPatch) -> None:
    """Scoring with the wrong sign of process reward violates the identities."""
    original = reward.process_reward
    monkeypatch.setattr(reward, "process_reward", lambda z, delta, weights: -original(z, delta, weights))
    batches, params, weights = _batches(3)
    report = verify.verify_prop1(batches, params, weights)
    assert not report.ok
    assert "process-reward-sign" in {violation.check for violation in report.violations}


def test_wrong_advantages_are_caught() -> None:
    """Advantages that do not come from the rewards are reported."""
    batches, params, weights = _batches(4, count=6)
    for batch in batches:
        batch.advantages = batch.advantages[::-1].copy()
    report = verify.verify_prop1(batches, params, weights)
    assert "pairwise-advantage" in {violation.check for violation in report.violations}


@pytest.mark.parametrize("eps_std", [1e-6, 1e-3, 1.0])
def test_small_expansion_mismatch_is_caught(eps_std: float) -> None:
    """A breakdown whose terms drift from its total fails the expansion, whatever the deviation floor.

    Parameters:
        eps_std: Floor added to the reward deviation.
    """
    batches, params, _ = _batches(5, count=4)
    weights = RewardWeights(eps_std=eps_std)
    for batch in batches:
        batch.advantages = (batch.rewards - batch.rewards.mean()) / (batch.rewards.std() + eps_std)
    assert verify.verify_prop1(batches, params, weights).ok
    batch = next(batch for batch in batches if batch.pairs)
    pair = batch.pairs[0]
    j = next(index for index, rollout in enumerate(batch.rollouts) if rollout is pair.noret)
    shifted = batch.breakdowns[j]
    batch.breakdowns[j] = dataclasses.replace(shifted, R_env=shifted.R_env - 1e-6, r_eff=shifted.r_eff + 1e-6)
    report = verify.verify_prop1(batches, params, weights)
    assert [violation.check for violation in report.violations] == ["advantage-expansion"]


def test_suite_subset_passes(tmp_path: Path) -> None:
    """Selected checks pass and the report lists no failure."""
    settings = verify.SuiteSettings(seed=1, scale=0.02)
    selected = [check for check in verify.CHECKS if check[0] in {"process reward table", "advantage properties"}]
    results = verify.run_suite(settings, checks=selected, silent=True)
    assert [result.success for result in results] == [True, True]
    path = tmp_path / "verify.json"
    verify.write_report(results, path)
    assert json.loads(path.read_text()) == {"passed": 2, "failed": []}


def test_tampered_restore_fails_replay_determinism(monkeypatch: pytest.MonkeyPatch, tmp_path: Path) -> None:
    """Restoring a snapshot with a rewound cursor is detected."""
    original = CombinationLock.restore

    def rewound(self: CombinationLock, state: EnvState) -> None:
        original(self, dataclasses.replace(state, cursor=0, feedback=Feedback.NONE))

    monkeypatch.setattr(CombinationLock, "restore", rewound)
    settings = verify.SuiteSettings(seed=0, scale=0.05)
    results = verify.run_suite(settings, checks=[("replay determinism", verify.check_replay_determinism)], silent=True)
    assert not results[0].success
    assert "differs" in results[0].output
    path = tmp_path / "verify.json"
    verify.write_report(results, path)
    failed = json.loads(path.read_text())["failed"]
    assert [entry["check"] for entry in failed] == ["replay determinism"]


def test_suite_prints_tap(capsys: pytest.CaptureFixture) -> None:
    """The suite prints a plan and one line per check."""
    settings = verify.SuiteSettings(scale=0.01)
    verify.run_suite(settings, fmt="tap", checks=verify.CHECKS[:2])
    lines = capsys.readouterr().out.splitlines()
    assert lines == ["1..2", "ok 1 - reward oracle", "ok 2 - process reward table"]


def test_every_check_passes_at_small_scale() -> None:
    """The whole suite passes on small instance counts."""
    results = verify.run_suite(verify.SuiteSettings(seed=3, scale=0.01), silent=True)
    assert len(results) == len(verify.CHECKS) == 10
    assert all(result.success for result in results), [result.output for result in results if not result.success]


def test_necessary_retrieval_instance() -> None:
    """Only one family code is stored, and the horizon leaves no room for a reset."""
    instance = verify.necessary_retrieval_instance()
    assert len(instance.base) == 1
    assert instance.task.horizon == instance.env_config.code_length + 1
