"""Tests for the `config` module."""

from __future__ import annotations

from pathlib import Path

import pytest

from recallgym.config import RunConfig, dump_toml, from_dict, load_config, to_dict
from recallgym.errors import ConfigError
from recallgym.trainer import AnnealPhase

REFERENCE = Path(__file__).parent.parent / "config" / "reference.toml"


def test_reference_configuration() -> None:
    """The shipped reference configuration loads with its published constants."""
    config = load_config(REFERENCE)
    assert config.run_id == "reference"
    assert config.env.horizon == 60
    assert (config.reward.alpha, config.reward.w_q, config.reward.w_t) == (0.5, 0.5, 0.25)
    assert config.expbase.top_k == 5
    assert [phase.no_ret_fraction for phase in config.trainer.anneal_phases] == [0.5, 0.25, 0.0]
    assert [phase.warmup_ratio for phase in config.trainer.anneal_phases] == [0.2, 0.3, 0.5]


def test_defaults_without_file() -> None:
    """No file means the defaults."""
    assert load_config() == RunConfig()


@pytest.mark.parametrize(
    ("data", "key"),
    [
        ({"trainer": {"learning_rat": 0.1}}, "trainer.learning_rat"),
        ({"colour": "blue"}, "colour"),
        ({"env": {"code_length": "3"}}, "env.code_length"),
        ({"env": {"code_length": 3.0}}, "env.code_length"),
        ({"trainer": {"paired_branches": 1}}, "trainer.paired_branches"),
        ({"reward": {"alpha": True}}, "reward.alpha"),
        ({"expbase": {"quotas": {"factual": "1"}}}, "expbase.quotas.factual"),
        ({"expbase": {"quotas": {"semantic": 1}, "top_k": 1}}, "expbase.quotas.semantic"),
        ({"trainer": {"anneal_phases": [{"no_ret_fraction": 0.5, "warmup_ratio": 0.1}]}}, "trainer.anneal_phases.0.iteration_span"),
        ({"trainer": {"anneal_phases": [{"fraction": 0.5}]}}, "trainer.anneal_phases.0.fraction"),
        ({"trainer": {"anneal_phases": [[0.5, 0.1]]}}, "trainer.anneal_phases.0"),
        ({"env": 3}, "env"),
        ({"workers": 0}, "workers"),
    ],
)
def test_invalid_values_name_their_key(data: dict, key: str) -> None:
    """Errors carry the dotted key at fault.

    Parameters:
        data: Parsed TOML.
        key: Expected key.
    """
    with pytest.raises(ConfigError) as error:
        from_dict(data)
    assert error.value.key == key
    assert str(error.value).startswith(f"{key}: ")


def test_integers_are_accepted_as_floats() -> None:
    """TOML integers fill float fields."""
    config = from_dict({"trainer": {"learning_rate": 1}})
    assert config.trainer.learning_rate == 1.0
    assert isinstance(config.trainer.learning_rate, float)


def test_phases_as_arrays() -> None:
    """Anneal phases can also be written as triples."""
    config = from_dict({"trainer": {"iterations": 3, "anneal_phases": [[0.5, 0.0, 2], [0.0, 0.5, 1]]}})
    assert config.trainer.anneal_phases == (AnnealPhase(0.5, 0.0, 2), AnnealPhase(0.0, 0.5, 1))


def test_overrides(tiny_config: Path) -> None:
    """The seed override reaches both the environment and the trainer."""
    config = load_config(tiny_config, seed=42, out_dir="elsewhere", workers=3)
    assert (config.env.seed, config.trainer.seed) == (42, 42)
    assert config.run_dir == Path("elsewhere")
    assert config.workers == 3
    assert load_config(tiny_config).env.seed == 5
    assert not load_config(tiny_config).trainer.debug
    assert load_config(tiny_config, debug=True).trainer.debug


def test_debug_and_priority_ceiling_from_toml() -> None:
    """Debug mode and the priority ceiling are plain configuration keys."""
    config = from_dict({"trainer": {"debug": True}, "expbase": {"max_priority_bonus": 0.25}})
    assert config.trainer.debug
    assert config.expbase.max_priority_bonus == 0.25
    reference = load_config(REFERENCE)
    assert not reference.trainer.debug
    assert reference.expbase.max_priority_bonus == 0.1


@pytest.mark.parametrize("path", [REFERENCE, None])
def test_snapshot_reloads_identically(tmp_path: Path, path: Path | None) -> None:
    """A dumped configuration loads back to the same value.

    Parameters:
        tmp_path: Temporary directory.
        path: Configuration to dump, defaults when `None`.
    """
    config = load_config(path)
    snapshot = tmp_path / "config.toml"
    snapshot.write_text(dump_toml(config), encoding="utf8")
    reloaded = load_config(snapshot)
    assert reloaded == config
    assert to_dict(reloaded) == to_dict(config)
    assert dump_toml(reloaded) == dump_toml(config)


def test_unreadable_files(tmp_path: Path) -> None:
    """Missing files and broken TOML are configuration errors."""
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.toml")
    broken = tmp_path / "broken.toml"
    broken.write_text("[env\ncode_length = 3\n", encoding="utf8")
    with pytest.raises(ConfigError, match="invalid TOML"):
        load_config(broken)
