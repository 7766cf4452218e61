"""Run verification checks and report their outcome."""

from __future__ import annotations

import os
import sys
import textwrap
import traceback
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any

from ansimarkup import parse
from jinja2 import Environment

from recallgym.capture import Capture
from recallgym.formats import DEFAULT_FORMAT, accept_custom_format, as_python_statement, escape, formats, unescape

if TYPE_CHECKING:
    from collections.abc import Callable, Sequence


@dataclass
class RunResult:
    """Outcome of one check."""

    title: str
    code: int
    output: str

    @property
    def success(self) -> bool:
        """Whether the check passed."""
        return self.code == 0


def _jinja_env() -> Environment:
    env = Environment(autoescape=False)  # noqa: S701
    env.filters["indent"] = textwrap.indent
    env.filters["escape"] = env.filters["e"] = escape
    env.filters["unescape"] = env.filters["u"] = unescape
    return env


def _format_name(fmt: str | None) -> str:
    name = accept_custom_format(fmt or os.environ.get("RECALLGYM_FORMAT", DEFAULT_FORMAT))
    return name if name in formats else DEFAULT_FORMAT


def print_header(total: int, *, fmt: str | None = None) -> None:
    """Print the format's header, if it has one.

    Parameters:
        total: Number of checks about to run.
        fmt: The output format.
    """
    header = formats[_format_name(fmt)].header_template
    if header:
        print(_jinja_env().from_string(header).render({"total": total}))  # noqa: T201


def run(
    check: Callable,
    *,
    args: Sequence | None = None,
    kwargs: dict | None = None,
    number: int = 1,
    capture: str | bool | Capture | None = None,
    title: str | None = None,
    fmt: str | None = None,
    quiet: bool = False,
    silent: bool = False,
) -> RunResult:
    """Run a check and print its outcome, with its output only if it fails.

    Parameters:
        check: The check to run. It fails by raising or by returning a false value or a non-zero code.
        args: Arguments to pass to the check.
        kwargs: Keyword arguments to pass to the check.
        number: The check number.
        capture: The output to capture.
        title: The check title.
        fmt: The output format.
        quiet: Whether to not print the check output.
        silent: Don't print anything.

    Returns:
        The result.
    """
    format_obj = formats[_format_name(fmt)]
    command = as_python_statement(check, args, kwargs)
    code, output = run_check(check, args=args, kwargs=kwargs, capture=Capture.cast(capture))

    if not silent:
        rendered = _jinja_env().from_string(format_obj.template).render(
            {
                "title": title or command,
                "command": command if title else "",
                "code": code,
                "success": code == 0,
                "failure": code != 0,
                "number": number,
                "output": output,
                "quiet": quiet,
            },
        )
        if format_obj.accept_ansi:
            rendered = parse(rendered)
        print(unescape(rendered))  # noqa: T201

    return RunResult(title or command, code, output)


def run_check(
    check: Callable,
    *,
    args: Sequence | None = None,
    kwargs: dict | None = None,
    capture: Capture = Capture.BOTH,
) -> tuple[int, str]:
    """Run a check, capturing its output.

    Parameters:
        check: The check to run.
        args: Positional arguments passed to the check.
        kwargs: Keyword arguments passed to the check.
        capture: The output to capture.

    Returns:
        The exit code and the captured output.
    """
    args = args or []
    kwargs = kwargs or {}

    if capture == Capture.NONE:
        return check_exit_code(check, args=args, kwargs=kwargs), ""

    with capture.here() as captured:
        code = check_exit_code(check, args=args, kwargs=kwargs)

    return code, captured.getvalue()


def check_exit_code(check: Callable, *, args: Sequence, kwargs: dict[str, Any]) -> int:
    """Call a check and turn its outcome into an exit code.

    A check passes by returning `None`, `True`, `0` or any other truthy value that is not a number.
    It fails by raising, in which case the traceback is written to standard error, or by returning
    a false value. Numbers, and strings holding one, are exit codes. `SystemExit` keeps its code.

    Parameters:
        check: The check to call.
        args: Positional arguments passed to the check.
        kwargs: Keyword arguments passed to the check.

    Returns:
        0 when the check passed, its exit code otherwise.
    """
    try:
        outcome = check(*args, **kwargs)
    except SystemExit as stop:
        if stop.code is None:
            return 0
        if isinstance(stop.code, int):
            return stop.code
        sys.stderr.write(str(stop.code))
        return 1
    except Exception:  # noqa: BLE001
        sys.stderr.write(traceback.format_exc() + "\n")
        return 1

    # bool before int: int(True) == 1
    if isinstance(outcome, bool):
        return 0 if outcome else 1
    try:
        return int(outcome)
    except (ValueError, TypeError):
        return 0 if outcome is None or outcome else 1


__all__ = ["RunResult", "check_exit_code", "print_header", "run", "run_check"]
