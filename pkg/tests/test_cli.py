"""Tests for the `cli` module."""

from __future__ import annotations

import json
from typing import TYPE_CHECKING

import pytest

from recallgym import cli, debug
from recallgym.config import load_config
from recallgym.errors import ConfigError
from recallgym.records import read_jsonl

if TYPE_CHECKING:
    from pathlib import Path


def _train(config: Path, out: Path) -> Path:
    assert cli.main(["train", "--config", str(config), "--out", str(out)]) == 0
    return out


def test_fail_without_arguments() -> None:
    """Fails without arguments."""
    with pytest.raises(SystemExit):
        cli.main([])


def test_show_help(capsys: pytest.CaptureFixture) -> None:
    """Show help.

    Parameters:
        capsys: Pytest fixture to capture output.
    """
    with pytest.raises(SystemExit):
        cli.main(["-h"])
    captured = capsys.readouterr()
    assert "recallgym" in captured.out
    for command in ("train", "eval", "verify", "inspect-base", "replay"):
        assert command in captured.out


def test_show_version(capsys: pytest.CaptureFixture) -> None:
    """Show version.

    Parameters:
        capsys: Pytest fixture to capture output.
    """
    with pytest.raises(SystemExit):
        cli.main(["-V"])
    captured = capsys.readouterr()
    assert debug.get_version() in captured.out


def test_show_debug_info(capsys: pytest.CaptureFixture) -> None:
    """Show debug information.

    Parameters:
        capsys: Pytest fixture to capture output.
    """
    with pytest.raises(SystemExit):
        cli.main(["--debug-info"])
    captured = capsys.readouterr().out.lower()
    assert "python" in captured
    assert "system" in captured
    assert "environment" in captured
    assert "packages" in captured


def test_configuration_errors_exit_with_2(tmp_path: Path, capsys: pytest.CaptureFixture) -> None:
    """Unknown keys are reported with their dotted name.

    Parameters:
        tmp_path: Temporary directory.
        capsys: Pytest fixture to capture output.
    """
    config = tmp_path / "bad.toml"
    config.write_text("[trainer]\nlearning_rat = 0.1\n", encoding="utf8")
    assert cli.main(["train", "--config", str(config), "--out", str(tmp_path / "run")]) == 2
    assert "trainer.learning_rat" in capsys.readouterr().err
    assert not (tmp_path / "run").exists()


def test_train_writes_the_run_directory(tiny_config: Path, tmp_path: Path) -> None:
    """Training writes the snapshot, the logs and the checkpoints.

    Parameters:
        tiny_config: A small configuration file.
        tmp_path: Temporary directory.
    """
    run = _train(tiny_config, tmp_path / "run")
    assert load_config(run / "config.toml") == load_config(tiny_config, out_dir=str(run))
    metrics = list(read_jsonl(run / "metrics.jsonl"))
    assert [record["iteration"] for record in metrics] == [0, 1, 2]
    assert [record["phase"] for record in metrics] == [0, 0, 1]
    trajectories = list(read_jsonl(run / "trajectories.jsonl"))
    assert len(trajectories) == 3 * 2 * 4
    assert all(record["breakdown"] is not None for record in trajectories)
    for name in ("iter-000002", "final"):
        assert sorted(path.name for path in (run / "checkpoints" / name).iterdir()) == [
            "base.jsonl",
            "policy.bin",
            "stats.json",
        ]


def test_training_is_reproducible(tiny_config: Path, tmp_path: Path) -> None:
    """Same configuration and seed, byte-identical metrics.

    Parameters:
        tiny_config: A small configuration file.
        tmp_path: Temporary directory.
    """
    first = _train(tiny_config, tmp_path / "first")
    second = _train(tiny_config, tmp_path / "second")
    for name in ("metrics.jsonl", "trajectories.jsonl"):
        assert (first / name).read_bytes() == (second / name).read_bytes()
    assert (first / "checkpoints/final/policy.bin").read_bytes() == (second / "checkpoints/final/policy.bin").read_bytes()


def test_train_in_debug_mode(tiny_config: Path, tmp_path: Path) -> None:
    """The debug flag is recorded and only adds checks.

    Parameters:
        tiny_config: A small configuration file.
        tmp_path: Temporary directory.
    """
    plain = _train(tiny_config, tmp_path / "plain")
    checked = tmp_path / "checked"
    assert cli.main(["train", "--config", str(tiny_config), "--out", str(checked), "--debug"]) == 0
    assert load_config(checked / "config.toml").trainer.debug
    assert not load_config(plain / "config.toml").trainer.debug
    assert (checked / "metrics.jsonl").read_bytes() == (plain / "metrics.jsonl").read_bytes()


def test_eval_oracle(tiny_config: Path, capsys: pytest.CaptureFixture) -> None:
    """The oracle always opens the lock.

    Parameters:
        tiny_config: A small configuration file.
        capsys: Pytest fixture to capture output.
    """
    assert cli.main(["eval", "--config", str(tiny_config), "--agent", "oracle", "--episodes", "12"]) == 0
    out = capsys.readouterr().out
    assert "oracle over 12 episodes" in out
    assert "success rate: 1.000" in out
    assert "mean rounds: 3.00" in out
    assert "mean retrievals: 1.00" in out


def test_evaluate_scripted_agents(tiny_config: Path) -> None:
    """Baselines run without a checkpoint, the policy agent needs one.

    Parameters:
        tiny_config: A small configuration file.
    """
    config = load_config(tiny_config)
    static = cli.evaluate(config, "static", episodes=9)
    assert static.mean_retrievals == 0.0
    always = cli.evaluate(config, "always-retrieve", episodes=9)
    assert always.mean_retrievals >= 1.0
    assert cli.evaluate(config, "uniform", episodes=9) == cli.evaluate(config, "uniform", episodes=9)
    with pytest.raises(ConfigError):
        cli.evaluate(config, "policy", episodes=9)
    with pytest.raises(ConfigError):
        cli.evaluate(config, "oracle", episodes=0)


def test_eval_trained_policy(tiny_config: Path, tmp_path: Path, capsys: pytest.CaptureFixture) -> None:
    """The policy agent loads the final checkpoint of the run.

    Parameters:
        tiny_config: A small configuration file.
        tmp_path: Temporary directory.
        capsys: Pytest fixture to capture output.
    """
    run = _train(tiny_config, tmp_path / "run")
    capsys.readouterr()
    assert cli.main(["eval", "--config", str(tiny_config), "--out", str(run), "--episodes", "5", "--greedy"]) == 0
    assert "policy over 5 episodes" in capsys.readouterr().out


def test_eval_without_checkpoint(tiny_config: Path, tmp_path: Path, capsys: pytest.CaptureFixture) -> None:
    """A missing checkpoint is a runtime error.

    Parameters:
        tiny_config: A small configuration file.
        tmp_path: Temporary directory.
        capsys: Pytest fixture to capture output.
    """
    assert cli.main(["eval", "--config", str(tiny_config), "--out", str(tmp_path / "nothing")]) == 1
    assert "missing" in capsys.readouterr().err


def test_inspect_base(tiny_config: Path, tmp_path: Path, capsys: pytest.CaptureFixture) -> None:
    """The base of a checkpoint is listed per type, and can be ranked against a query.

    Parameters:
        tiny_config: A small configuration file.
        tmp_path: Temporary directory.
        capsys: Pytest fixture to capture output.
    """
    run = _train(tiny_config, tmp_path / "run")
    base_file = run / "checkpoints" / "final" / "base.jsonl"
    capsys.readouterr()
    assert cli.main(["inspect-base", str(base_file)]) == 0
    listing = capsys.readouterr().out
    assert "episodic" in listing
    assert "me-" in listing
    assert cli.main(["inspect-base", str(base_file), "--query", "recent attempt on family 0"]) == 0
    assert "score=" in capsys.readouterr().out
    assert cli.main(["inspect-base", str(tmp_path / "missing.jsonl")]) == 1


def test_inspect_empty_base(tmp_path: Path, capsys: pytest.CaptureFixture) -> None:
    """An empty base prints nothing.

    Parameters:
        tmp_path: Temporary directory.
        capsys: Pytest fixture to capture output.
    """
    base_file = tmp_path / "base.jsonl"
    base_file.write_text("", encoding="utf8")
    assert cli.main(["inspect-base", str(base_file)]) == 0
    assert capsys.readouterr().out == ""


def test_replay(tiny_config: Path, tmp_path: Path, capsys: pytest.CaptureFixture) -> None:
    """Logged trajectories replay from the run directory alone.

    Parameters:
        tiny_config: A small configuration file.
        tmp_path: Temporary directory.
        capsys: Pytest fixture to capture output.
    """
    run = _train(tiny_config, tmp_path / "run")
    log = run / "trajectories.jsonl"
    traj_id = next(read_jsonl(log))["traj_id"]
    capsys.readouterr()
    assert cli.main(["replay", str(log), traj_id]) == 0
    assert f"{traj_id} replays identically" in capsys.readouterr().out
    assert cli.main(["replay", str(log), "unknown"]) == 1
    assert "unknown" in capsys.readouterr().err


def test_verify(tmp_path: Path, capsys: pytest.CaptureFixture) -> None:
    """The property suite passes at a small scale and writes its report.

    Parameters:
        tmp_path: Temporary directory.
        capsys: Pytest fixture to capture output.
    """
    assert cli.main(["verify", "--scale", "0.01", "-f", "tap", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert out.startswith("1..10\n")
    assert "not ok" not in out
    assert json.loads((tmp_path / "verify.json").read_text()) == {"passed": 10, "failed": []}


def test_verify_rejects_zero_scale() -> None:
    """The scale must be positive."""
    assert cli.main(["verify", "--scale", "0"]) == 2
