"""Module that contains the command line application."""

# Why does this file exist, and why not put this in `__main__`?
#
# You might be tempted to import things from `__main__` later,
# but that will cause problems: the code will get executed twice:
#
# - When you run `python -m recallgym` python will execute
#   `__main__.py` as a script. That means there won't be any
#   `recallgym.__main__` in `sys.modules`.
# - When you import `__main__` it will get executed again (as a module) because
#   there's no `recallgym.__main__` in `sys.modules`.

from __future__ import annotations

import argparse
import logging
import math
import sys
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Any

import numpy as np
from ansimarkup import parse, strip
from jinja2 import Environment

from recallgym import debug, records
from recallgym.config import RunConfig, dump_toml, load_config
from recallgym.errors import CheckpointError, ConfigError, RecallGymError
from recallgym.env import CombinationLock, task_stream
from recallgym.expbase import EntryType, ExperienceBase, Query, RetrievalBudget
from recallgym.formats import accept_custom_format, formats
from recallgym.policy import ActionSpace, PolicyParams
from recallgym.rollout import OracleAgent, RetrieveEveryStepAgent, StaticAgent, UniformAgent, run_episode
from recallgym.trainer import Trainer
from recallgym.verify import SuiteSettings, run_suite, write_report

if TYPE_CHECKING:
    from collections.abc import Callable, Sequence

    from recallgym.rollout import Agent

logger = logging.getLogger(__name__)

AGENTS = ("policy", "oracle", "always-retrieve", "static", "uniform")
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")

_EVAL_TEMPLATE = """\
<bold>{{ agent }}</bold> over {{ episodes }} episodes
  success rate: {{ "%.3f"|format(success_rate) }}
  mean rounds: {{ "%.2f"|format(mean_rounds) }}
  mean retrievals: {{ "%.2f"|format(mean_retrievals) }}
  mean retrievals per success: {{ "%.2f"|format(mean_retrievals_success) }}"""

_BASE_TEMPLATE = """\
{% for entry_type, entries in listing if entries %}<bold>{{ entry_type }}</bold> ({{ entries|length }})
{% for entry, score in entries %}  {{ entry.id }} p={{ entry.priority }}{% if score is not none %} \
score={{ "%.4f"|format(score) }}{% endif %} {{ entry.when_to_use|e }}
{% endfor %}{% endfor %}"""

_REPLAY_TEMPLATE = """\
{% for step in steps %}{{ step.t }} {{ step.label|e }} reward={{ step.reward }}\
{% if step.observation %} cursor={{ step.observation[0] }} feedback={{ step.observation[1] }}{% endif %}
{% endfor %}<green>{{ traj_id|e }} replays identically</green>"""


class _DebugInfo(argparse.Action):
    def __init__(self, nargs: int | str | None = 0, **kwargs: Any) -> None:
        super().__init__(nargs=nargs, **kwargs)

    def __call__(self, *args: Any, **kwargs: Any) -> None:  # noqa: ARG002
        debug.print_debug_info()
        sys.exit(0)


class ArgParser(argparse.ArgumentParser):
    """A custom argument parser with a helper method to add boolean flags."""

    def add_bool_argument(
        self,
        truthy: Sequence[str],
        falsy: Sequence[str],
        truthy_help: str = "",
        falsy_help: str = "",
        **kwargs: Any,
    ) -> None:
        """Add a boolean flag/argument to the parser.

        Arguments:
            truthy: Values that will store true in the destination.
            falsy: Values that will store false in the destination.
            truthy_help: Help for the truthy arguments.
            falsy_help: Help for the falsy arguments.
            **kwargs: Remaining keyword arguments passed to `argparse.ArgumentParser.add_argument`.
        """
        truthy_kwargs = {**kwargs, "help": truthy_help, "action": "store_true"}
        falsy_kwargs = {**kwargs, "help": falsy_help, "action": "store_false"}

        mxg = self.add_mutually_exclusive_group()
        mxg.add_argument(*truthy, **truthy_kwargs)
        mxg.add_argument(*falsy, **falsy_kwargs)


def _render(template: str, **context: Any) -> str:
    env = Environment(autoescape=False)  # noqa: S701
    rendered = env.from_string(template).render(context)
    return parse(rendered) if sys.stdout.isatty() else strip(rendered)


@dataclass
class EvalSummary:
    """Aggregate results of an evaluation."""

    agent: str
    episodes: int
    success_rate: float
    mean_rounds: float
    mean_retrievals: float
    mean_retrievals_success: float


def train_run(config: RunConfig, *, on_iteration: Callable[[dict[str, Any]], None] | None = None) -> Trainer:
    """Cold start, evolve, and write every artifact to the run directory.

    Parameters:
        config: The run configuration.
        on_iteration: Called with each metrics record.

    Returns:
        The trainer in its final state.
    """
    run_dir = config.run_dir
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / records.CONFIG_FILE).write_text(dump_toml(config), encoding="utf8")

    trainer = Trainer(
        config.env,
        config.trainer,
        config.reward,
        config.expbase,
        config.extraction,
        workers=config.workers,
    )
    trainer.warm_start(on_epoch=lambda epoch, loss: logger.debug("cold start epoch %d: loss %.6f", epoch, loss))
    every = config.trainer.checkpoint_every
    with (
        records.JsonlWriter(run_dir / records.METRICS_FILE) as metrics,
        records.JsonlWriter(run_dir / records.TRAJECTORIES_FILE) as trajectories,
    ):
        for result in trainer.run():
            iteration = result.metrics["iteration"]
            metrics.write(result.metrics)
            for batch in result.batches:
                for trajectory, breakdown in zip(batch.rollouts, batch.breakdowns):
                    record = records.trajectory_record(
                        trajectory,
                        run_id=config.run_id,
                        iteration=iteration,
                        breakdown=breakdown,
                    )
                    trajectories.write(record)
            if every and trainer.iteration % every == 0:
                records.save_checkpoint(
                    records.checkpoint_dir(run_dir, trainer.iteration),
                    trainer.params,
                    trainer.base,
                    trainer.stats,
                )
            if on_iteration is not None:
                on_iteration(result.metrics)
    records.save_checkpoint(records.checkpoint_dir(run_dir), trainer.params, trainer.base, trainer.stats)
    return trainer


def make_agent(name: str, space: ActionSpace, params: PolicyParams | None) -> PolicyParams | Agent:
    """Build an evaluation agent.

    Parameters:
        name: One of [`AGENTS`][recallgym.cli.AGENTS].
        space: The action space.
        params: Policy parameters, required by the `policy` agent.

    Raises:
        ConfigError: When the name is unknown or the policy has no parameters.

    Returns:
        The agent.
    """
    if name == "policy":
        if params is None:
            raise ConfigError("the policy agent needs a checkpoint", "checkpoint")
        return params
    agents: dict[str, Callable[[ActionSpace], Agent]] = {
        "oracle": OracleAgent,
        "always-retrieve": RetrieveEveryStepAgent,
        "static": StaticAgent,
        "uniform": UniformAgent,
    }
    if name not in agents:
        raise ConfigError(f"unknown agent {name!r}", "agent")
    return agents[name](space)


def evaluate(
    config: RunConfig,
    agent: str,
    *,
    params: PolicyParams | None = None,
    base: ExperienceBase | None = None,
    episodes: int = 100,
    greedy: bool = False,
) -> EvalSummary:
    """Play fresh episodes with a frozen agent and base.

    Parameters:
        config: The run configuration.
        agent: Agent name.
        params: Policy parameters for the `policy` agent.
        base: Experience base (empty when omitted).
        episodes: Number of episodes.
        greedy: Argmax decoding for the `policy` agent.

    Raises:
        ConfigError: When `episodes` is not positive.

    Returns:
        The summary.
    """
    if episodes < 1:
        raise ConfigError("must be at least 1", "episodes")
    space = ActionSpace(config.env)
    policy = make_agent(agent, space, params)
    base = base if base is not None else ExperienceBase(config.expbase.dim)
    env = CombinationLock(config.env)
    rng = np.random.default_rng(np.random.SeedSequence([config.trainer.seed, episodes]))
    successes, rounds, retrievals, success_retrievals = 0, 0, 0, 0
    for task in task_stream(config.env, episodes):
        trajectory = run_episode(
            policy,
            env,
            task,
            base,
            config.trainer.retrieval_enabled,
            rng,
            search=config.expbase,
            initial_context=config.trainer.initial_context,
            greedy=greedy,
            traj_id=f"eval-{task.task_id}",
        )
        count = len(trajectory.retrieval_steps)
        successes += trajectory.success
        rounds += trajectory.T
        retrievals += count
        success_retrievals += count if trajectory.success else 0
    return EvalSummary(
        agent=agent,
        episodes=episodes,
        success_rate=successes / episodes,
        mean_rounds=rounds / episodes,
        mean_retrievals=retrievals / episodes,
        mean_retrievals_success=success_retrievals / successes if successes else 0.0,
    )


def inspect_base(
    base: ExperienceBase,
    query: str | None = None,
    lambda_p: float = 0.0,
    max_bonus: float = math.inf,
) -> list[tuple[EntryType, list]]:
    """List a base per type, optionally ranked against a query.

    Parameters:
        base: The experience base.
        query: Optional query text. Entries are then ordered by retrieval score.
        lambda_p: Priority weight of the score.
        max_bonus: Ceiling of the priority term.

    Returns:
        For every type, its entries paired with their score (`None` without query).
    """
    if query is None:
        return [(entry_type, [(entry, None) for entry in base.entries(entry_type)]) for entry_type in EntryType]
    embedded = Query.from_text(query, base.dim)
    budget = RetrievalBudget({entry_type: len(base.entries(entry_type)) for entry_type in EntryType})
    ranked = base.retrieve(embedded, budget, lambda_p, max_bonus=max_bonus)
    return [
        (
            entry_type,
            [(entry, base.score(embedded, entry, lambda_p, max_bonus=max_bonus)) for entry in ranked if entry.type_label is entry_type],
        )
        for entry_type in EntryType
    ]


def _config(opts: argparse.Namespace) -> RunConfig:
    return load_config(
        opts.config,
        seed=opts.seed,
        out_dir=opts.out,
        workers=opts.workers,
        debug=getattr(opts, "debug", None),
    )


def cmd_train(opts: argparse.Namespace) -> int:
    """Train and write the run directory.

    Parameters:
        opts: Parsed arguments.

    Returns:
        An exit code.
    """
    config = _config(opts)
    trainer = train_run(config)
    print(f"{config.run_id}: {trainer.iteration} iterations written to {config.run_dir}")
    return 0


def cmd_eval(opts: argparse.Namespace) -> int:
    """Evaluate an agent.

    Parameters:
        opts: Parsed arguments.

    Returns:
        An exit code.
    """
    config = _config(opts)
    params, base = None, None
    checkpoint = opts.checkpoint
    if checkpoint is None and opts.agent == "policy":
        checkpoint = records.checkpoint_dir(config.run_dir)
    if checkpoint is not None:
        params, base, _ = records.load_checkpoint(checkpoint, ActionSpace(config.env), config.expbase.dim)
    summary = evaluate(config, opts.agent, params=params, base=base, episodes=opts.episodes, greedy=opts.greedy)
    print(_render(_EVAL_TEMPLATE, **asdict(summary)))
    return 0


def cmd_verify(opts: argparse.Namespace) -> int:
    """Run the property suite.

    Parameters:
        opts: Parsed arguments.

    Returns:
        An exit code.
    """
    if opts.scale <= 0:
        raise ConfigError("must be positive", "scale")
    settings = SuiteSettings(seed=opts.seed or 0, scale=opts.scale)
    results = run_suite(settings, fmt=opts.fmt, quiet=opts.quiet)
    if opts.out is not None:
        out = Path(opts.out)
        out.mkdir(parents=True, exist_ok=True)
        write_report(results, out / records.VERIFY_FILE)
    return 0 if all(result.success for result in results) else 1


def cmd_inspect_base(opts: argparse.Namespace) -> int:
    """List the entries of a base file.

    Parameters:
        opts: Parsed arguments.

    Returns:
        An exit code.
    """
    config = _config(opts)
    path = Path(opts.base_file)
    if not path.is_file():
        raise RecallGymError(f"No base file at {path}")
    try:
        base = ExperienceBase.load(path, config.expbase.dim)
    except (KeyError, ValueError) as error:
        raise CheckpointError(f"{path}: {error}") from error
    try:
        listing = inspect_base(base, opts.query, config.expbase.lambda_p, config.expbase.max_priority_bonus)
    except ValueError as error:
        raise ConfigError(str(error), "query") from error
    print(_render(_BASE_TEMPLATE, listing=listing), end="")
    return 0


def cmd_replay(opts: argparse.Namespace) -> int:
    """Replay a logged trajectory.

    Parameters:
        opts: Parsed arguments.

    Returns:
        An exit code.
    """
    log = Path(opts.trajectory_log)
    if not log.is_file():
        raise RecallGymError(f"No trajectory log at {log}")
    config_path = opts.config
    if config_path is None and (log.parent / records.CONFIG_FILE).is_file():
        config_path = log.parent / records.CONFIG_FILE
    config = load_config(config_path)
    record = records.find_trajectory(log, opts.traj_id)
    steps = records.replay_record(record, config.env)
    print(_render(_REPLAY_TEMPLATE, steps=steps, traj_id=opts.traj_id))
    return 0


def _common_parser() -> ArgParser:
    common = ArgParser(add_help=False)
    common.add_argument("--config", help="Run configuration file (TOML). Defaults apply without one.")
    common.add_argument("--seed", type=int, help="Override the environment and trainer seeds.")
    common.add_argument("--out", help="Override the run directory.")
    common.add_argument("--workers", type=int, help="Override the number of rollout threads.")
    common.add_argument("--log-level", choices=LOG_LEVELS, default="WARNING", help="Logging level.")
    return common


def get_parser() -> ArgParser:
    """Return the CLI argument parser.

    Returns:
        An argparse parser.
    """
    common = _common_parser()
    parser = ArgParser(prog="recallgym", description="Proactive retrieval for lifelong-learning agents.")
    parser.add_argument("-V", "--version", action="version", version=f"%(prog)s {debug.get_version()}")
    parser.add_argument("--debug-info", action=_DebugInfo, help="Print debug information.")
    subparsers = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    train = subparsers.add_parser("train", parents=[common], help="Cold start then evolve.")
    train.add_argument(
        "--debug",
        action="store_true",
        default=None,
        help="Check the advantage identities of every group and stop on the first violation.",
    )
    train.set_defaults(func=cmd_train)

    evaluation = subparsers.add_parser("eval", parents=[common], help="Evaluate an agent on fresh episodes.")
    evaluation.add_argument("--agent", choices=AGENTS, default="policy", help="Agent to evaluate.")
    evaluation.add_argument("--checkpoint", help="Checkpoint directory. Defaults to the run's final checkpoint.")
    evaluation.add_argument("--episodes", type=int, default=100, help="Number of episodes.")
    evaluation.add_bool_argument(
        ["--greedy"],
        ["--sampled"],
        dest="greedy",
        default=False,
        truthy_help="Take the most likely action.",
        falsy_help="Sample actions from the policy.",
    )
    evaluation.set_defaults(func=cmd_eval)

    verify = subparsers.add_parser("verify", parents=[common], help="Run the property suite.")
    verify.add_argument(
        "-f",
        "--format",
        dest="fmt",
        choices=formats.keys(),
        type=accept_custom_format,
        default=None,
        help="Output format. Pass your own Jinja2 template as a string with '-f custom=TEMPLATE'.",
    )
    verify.add_bool_argument(
        ["-q", "--quiet"],
        ["-Q", "--no-quiet"],
        dest="quiet",
        default=False,
        truthy_help="Don't print the output of failing checks.",
        falsy_help="Print the output of failing checks.",
    )
    verify.add_argument("--scale", type=float, default=1.0, help="Multiply the number of random instances.")
    verify.set_defaults(func=cmd_verify)

    inspect = subparsers.add_parser("inspect-base", parents=[common], help="List the entries of a base file.")
    inspect.add_argument("base_file", metavar="BASE_FILE")
    inspect.add_argument("--query", help="Rank entries against this query.")
    inspect.set_defaults(func=cmd_inspect_base)

    replay = subparsers.add_parser("replay", parents=[common], help="Replay a logged trajectory.")
    replay.add_argument("trajectory_log", metavar="TRAJECTORY_LOG")
    replay.add_argument("traj_id", metavar="TRAJ_ID")
    replay.set_defaults(func=cmd_replay)
    return parser


def main(args: list[str] | None = None) -> int:
    """Run the main program.

    This function is executed when you type `recallgym` or `python -m recallgym`.

    Parameters:
        args: Arguments passed from the command line.

    Returns:
        An exit code: 0 on success, 1 on runtime failure, 2 on configuration error.
    """
    parser = get_parser()
    opts = parser.parse_args(args)
    logging.basicConfig(level=opts.log_level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return opts.func(opts)
    except ConfigError as error:
        logger.error("Invalid configuration: %s", error)  # noqa: TRY400
        print(f"recallgym: configuration error: {error}", file=sys.stderr)
        return 2
    except RecallGymError as error:
        print(f"recallgym: {error}", file=sys.stderr)
        return 1


__all__ = [
    "AGENTS",
    "ArgParser",
    "EvalSummary",
    "evaluate",
    "get_parser",
    "inspect_base",
    "main",
    "make_agent",
    "train_run",
]
