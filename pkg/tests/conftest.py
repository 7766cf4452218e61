"""Configuration for the pytest test suite."""

from __future__ import annotations

import os
from typing import TYPE_CHECKING

import numpy as np
import pytest

from recallgym.env import EnvConfig
from recallgym.expbase import ExperienceBase
from recallgym.policy import ActionSpace

if TYPE_CHECKING:
    from pathlib import Path


def pytest_collection_modifyitems(config: pytest.Config, items: list[pytest.Item]) -> None:  # noqa: ARG001
    """Skip slow tests unless `RECALLGYM_SLOW=1`.

    Parameters:
        config: Pytest configuration.
        items: Collected tests.
    """
    if os.environ.get("RECALLGYM_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="set RECALLGYM_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def env_config() -> EnvConfig:
    """A small lock: codes of 2 symbols over 3, 3 families."""
    return EnvConfig(code_length=2, alphabet_size=3, n_families=3)


@pytest.fixture
def space(env_config: EnvConfig) -> ActionSpace:
    """Action space of the small lock."""
    return ActionSpace(env_config)


@pytest.fixture
def base() -> ExperienceBase:
    """An empty experience base."""
    return ExperienceBase()


@pytest.fixture
def rng() -> np.random.Generator:
    """A seeded random generator."""
    return np.random.default_rng(1234)


TINY_CONFIG = """\
run_id = "tiny"
workers = 1

[env]
code_length = 2
alphabet_size = 3
n_families = 3
seed = 5

[trainer]
group_size = 4
iterations = 3
batch_tasks = 2
cold_start_epochs = 5
demo_tasks = 3
checkpoint_every = 2

[[trainer.anneal_phases]]
no_ret_fraction = 0.5
warmup_ratio = 0.5
iteration_span = 2

[[trainer.anneal_phases]]
no_ret_fraction = 0.0
warmup_ratio = 0.0
iteration_span = 1
"""


@pytest.fixture
def tiny_config(tmp_path: Path) -> Path:
    """A run configuration file small enough to train in a test."""
    path = tmp_path / "tiny.toml"
    path.write_text(TINY_CONFIG, encoding="utf8")
    return path
