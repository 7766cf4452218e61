"""Run configuration: TOML loading, validation, overrides and snapshots."""

from __future__ import annotations

import dataclasses
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any

from jinja2 import Environment

from recallgym.env import EnvConfig
from recallgym.errors import ConfigError
from recallgym.expbase import ExpBaseConfig
from recallgym.extract import ExtractionConfig
from recallgym.reward import RewardWeights
from recallgym.trainer import AnnealPhase, TrainerConfig

# YORE: EOL 3.10: Replace block with line 2.
if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

if TYPE_CHECKING:
    from collections.abc import Mapping

logger = logging.getLogger(__name__)

BLOCKS: dict[str, type] = {
    "env": EnvConfig,
    "trainer": TrainerConfig,
    "reward": RewardWeights,
    "expbase": ExpBaseConfig,
    "extraction": ExtractionConfig,
}

_PHASE_FIELDS = ("no_ret_fraction", "warmup_ratio", "iteration_span")

_SNAPSHOT_TEMPLATE = """\
run_id = {{ run_id|toml }}
out_dir = {{ out_dir|toml }}
workers = {{ workers|toml }}
{% for block, values in blocks.items() %}
[{{ block }}]
{% for key, value in values.items() if key not in tables %}{{ key }} = {{ value|toml }}
{% endfor %}{% for key, value in values.items() if key in tables %}
[{{ block }}.{{ key }}]
{% for name, quota in value.items() %}{{ name }} = {{ quota|toml }}
{% endfor %}{% endfor %}{% for phase in phases if block == "trainer" %}
[[trainer.anneal_phases]]
{% for key, value in phase.items() %}{{ key }} = {{ value|toml }}
{% endfor %}{% endfor %}{% endfor %}"""


@dataclass(frozen=True)
class RunConfig:
    """The whole run configuration."""

    run_id: str = "run"
    out_dir: str = "runs/run"
    """Run directory: config snapshot, metrics, trajectory log and checkpoints."""
    workers: int = 1
    env: EnvConfig = field(default_factory=EnvConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    reward: RewardWeights = field(default_factory=RewardWeights)
    expbase: ExpBaseConfig = field(default_factory=ExpBaseConfig)
    extraction: ExtractionConfig = field(default_factory=ExtractionConfig)

    def __post_init__(self) -> None:
        if self.workers < 1:
            raise ConfigError("must be at least 1", "workers")
        if not self.run_id:
            raise ConfigError("must not be empty", "run_id")

    @property
    def run_dir(self) -> Path:
        """The run directory."""
        return Path(self.out_dir)


def _check_type(key: str, value: Any, default: Any) -> Any:
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"expected a boolean, got {value!r}", key)
    elif isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", key)
    elif isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", key)
        return float(value)
    elif isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f"expected a string, got {value!r}", key)
    return value


def _phases(value: Any) -> tuple[AnnealPhase, ...]:
    if not isinstance(value, list):
        raise ConfigError("expected an array of phases", "trainer.anneal_phases")
    phases = []
    for index, item in enumerate(value):
        key = f"trainer.anneal_phases.{index}"
        if isinstance(item, dict):
            unknown = set(item) - set(_PHASE_FIELDS)
            if unknown:
                raise ConfigError("unknown key", f"{key}.{sorted(unknown)[0]}")
            missing = set(_PHASE_FIELDS) - set(item)
            if missing:
                raise ConfigError("missing key", f"{key}.{sorted(missing)[0]}")
            item = [item[name] for name in _PHASE_FIELDS]  # noqa: PLW2901
        if not isinstance(item, list) or len(item) != len(_PHASE_FIELDS):
            raise ConfigError("expected a table or a [no_ret_fraction, warmup_ratio, iteration_span] array", key)
        fraction, warmup, span = item
        phases.append(
            AnnealPhase(
                _check_type(f"{key}.no_ret_fraction", fraction, 0.0),
                _check_type(f"{key}.warmup_ratio", warmup, 0.0),
                _check_type(f"{key}.iteration_span", span, 0),
            ),
        )
    return tuple(phases)


def _quotas(value: Any) -> dict[str, int]:
    if not isinstance(value, dict):
        raise ConfigError("expected a table", "expbase.quotas")
    return {name: _check_type(f"expbase.quotas.{name}", quota, 0) for name, quota in value.items()}


def _block(name: str, cls: type, data: Any) -> Any:
    if not isinstance(data, dict):
        raise ConfigError("expected a table", name)
    defaults = cls()
    known = {item.name for item in dataclasses.fields(cls)}
    values: dict[str, Any] = {}
    for key, value in data.items():
        dotted = f"{name}.{key}"
        if key not in known:
            raise ConfigError("unknown key", dotted)
        if dotted == "trainer.anneal_phases":
            values[key] = _phases(value)
        elif dotted == "expbase.quotas":
            values[key] = _quotas(value)
        else:
            values[key] = _check_type(dotted, value, getattr(defaults, key))
    return cls(**values)


def from_dict(data: Mapping[str, Any]) -> RunConfig:
    """Build a configuration from parsed TOML.

    Parameters:
        data: Nested tables.

    Raises:
        ConfigError: On unknown keys or invalid values.

    Returns:
        The configuration.
    """
    values: dict[str, Any] = {}
    defaults = RunConfig()
    for key, value in data.items():
        if key in BLOCKS:
            values[key] = _block(key, BLOCKS[key], value)
        elif key in {"run_id", "out_dir", "workers"}:
            values[key] = _check_type(key, value, getattr(defaults, key))
        else:
            raise ConfigError("unknown key", key)
    return RunConfig(**values)


def load_config(
    path: str | Path | None = None,
    *,
    seed: int | None = None,
    out_dir: str | None = None,
    workers: int | None = None,
    debug: bool | None = None,
) -> RunConfig:
    """Load a TOML configuration file and apply command-line overrides.

    Parameters:
        path: The file. Defaults apply without one.
        seed: Overrides both `env.seed` and `trainer.seed`.
        out_dir: Overrides `out_dir`.
        workers: Overrides `workers`.
        debug: Overrides `trainer.debug`.

    Raises:
        ConfigError: When the file cannot be read or is invalid.

    Returns:
        The configuration.
    """
    data: dict[str, Any] = {}
    if path is not None:
        try:
            with Path(path).open("rb") as file:
                data = tomllib.load(file)
        except OSError as error:
            raise ConfigError(f"cannot read {path}: {error.strerror}") from error
        except tomllib.TOMLDecodeError as error:
            raise ConfigError(f"invalid TOML in {path}: {error}") from error
    config = from_dict(data)
    if seed is not None:
        config = dataclasses.replace(
            config,
            env=dataclasses.replace(config.env, seed=seed),
            trainer=dataclasses.replace(config.trainer, seed=seed),
        )
    if out_dir is not None:
        config = dataclasses.replace(config, out_dir=out_dir)
    if workers is not None:
        config = dataclasses.replace(config, workers=workers)
    if debug is not None:
        config = dataclasses.replace(config, trainer=dataclasses.replace(config.trainer, debug=debug))
    logger.debug("Loaded configuration %s", config)
    return config


def to_dict(config: RunConfig) -> dict[str, Any]:
    """Nested tables of a configuration.

    Parameters:
        config: The configuration.

    Returns:
        A TOML- and JSON-compatible dictionary.
    """
    data = dataclasses.asdict(config)
    data["trainer"]["anneal_phases"] = [dataclasses.asdict(phase) for phase in config.trainer.anneal_phases]
    return data


def _toml_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_toml_value(item) for item in value) + "]"
    raise TypeError(f"Cannot write {value!r} as TOML")


def dump_toml(config: RunConfig) -> str:
    """Render a normalized TOML snapshot, loadable with [`load_config`][recallgym.config.load_config].

    Parameters:
        config: The configuration.

    Returns:
        The TOML text.
    """
    data = to_dict(config)
    phases = data["trainer"].pop("anneal_phases")
    env = Environment(autoescape=False, keep_trailing_newline=True)  # noqa: S701
    env.filters["toml"] = _toml_value
    return env.from_string(_SNAPSHOT_TEMPLATE).render(
        run_id=config.run_id,
        out_dir=config.out_dir,
        workers=config.workers,
        blocks={name: data[name] for name in BLOCKS},
        tables={"quotas"},
        phases=phases,
    )


__all__ = ["BLOCKS", "RunConfig", "dump_toml", "from_dict", "load_config", "to_dict"]
