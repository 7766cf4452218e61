"""Tests for the `runners` module."""

from __future__ import annotations

import sys

import pytest
from hypothesis import given, settings
from hypothesis.strategies import integers

from recallgym.capture import Capture
from recallgym.runners import check_exit_code, print_header, run, run_check


def _talk() -> int:
    print("out")  # noqa: T201
    print("err", file=sys.stderr)  # noqa: T201
    return 1


def test_run_silently(capsys: pytest.CaptureFixture) -> None:
    """Print nothing at all when silent.

    Parameters:
        capsys: Pytest fixture to capture output.
    """
    result = run(_talk, silent=True)
    outerr = capsys.readouterr()
    assert not outerr.out
    assert not outerr.err
    assert result.output == "out\nerr\n"
    assert not result.success


def test_run_verbosely(capsys: pytest.CaptureFixture) -> None:
    """Print the outcome line, and the output of failures.

    Parameters:
        capsys: Pytest fixture to capture output.
    """
    run(_talk, fmt="tap")
    out = capsys.readouterr().out
    assert out.startswith("not ok 1 - _talk()\n")
    assert "    out\n    err\n" in out


def test_title_defaults_to_statement() -> None:
    """Without a title, the check is named after its call."""
    assert run(max, args=[1, 2], silent=True).title == "max(1, 2)"
    assert run(max, args=[1, 2], title="maximum", silent=True).title == "maximum"


@settings(deadline=None)
@given(integers(-255, 255))
def test_integer_results_are_exit_codes(code: int) -> None:
    """Integer results are used as exit codes.

    Parameters:
        code: Value returned by the check.
    """
    assert check_exit_code(lambda: code, args=[], kwargs={}) == code


@pytest.mark.parametrize(
    ("exit_code", "expected"),
    [(None, 0), (0, 0), (3, 3), ("stopped", 1)],
)
def test_system_exit(exit_code: int | str | None, expected: int) -> None:
    """`SystemExit` gives its code, messages give 1.

    Parameters:
        exit_code: Code passed to `sys.exit`.
        expected: Expected exit code.
    """
    code, output = run_check(sys.exit, args=[exit_code])
    assert code == expected
    if isinstance(exit_code, str):
        assert output == "stopped"


@pytest.mark.parametrize(
    ("value", "expected"),
    [
        (None, 0),
        (True, 0),
        (False, 1),
        ("text", 0),
        ("", 1),
        ([0], 0),
        ([], 1),
        ("7", 7),
    ],
)
def test_result_values(value: object, expected: int) -> None:
    """Results are turned into exit codes.

    Parameters:
        value: Value returned by the check.
        expected: Expected exit code.
    """
    assert check_exit_code(lambda: value, args=[], kwargs={}) == expected


def test_exceptions_are_failures() -> None:
    """Raising fails the check and keeps the traceback."""
    code, output = run_check(lambda: 1 / 0)
    assert code == 1
    assert "ZeroDivisionError" in output


@pytest.mark.parametrize(
    ("capture", "shown", "passed"),
    [
        (Capture.NONE, "", "out\nerr\n"),
        (Capture.BOTH, "out\nerr\n", ""),
        (Capture.STDOUT, "out\n", "err\n"),
        (Capture.STDERR, "err\n", "out\n"),
    ],
)
def test_capture(capsys: pytest.CaptureFixture, capture: Capture, shown: str, passed: str) -> None:
    """Captured streams end up in the report, the others go straight through.

    Parameters:
        capsys: Pytest fixture to capture output.
        capture: Streams to capture.
        shown: Expected captured output.
        passed: Expected output on the real streams.
    """
    run(_talk, capture=capture, fmt="custom={{ output }}")
    outerr = capsys.readouterr()
    assert outerr.out.endswith(shown + "\n")
    assert (outerr.out[: -len(shown) - 1] + outerr.err).split() == passed.split()


def test_print_header(capsys: pytest.CaptureFixture) -> None:
    """Only formats with a header print one.

    Parameters:
        capsys: Pytest fixture to capture output.
    """
    print_header(4, fmt="tap")
    assert capsys.readouterr().out == "1..4\n"
    print_header(4, fmt="pretty")
    assert capsys.readouterr().out == ""


def test_unknown_format_falls_back(capsys: pytest.CaptureFixture) -> None:
    """An unknown format name prints in the default format.

    Parameters:
        capsys: Pytest fixture to capture output.
    """
    result = run(lambda: True, title="fallback", fmt="yaml")
    assert result.success
    assert "fallback" in capsys.readouterr().out


def test_format_from_environment(monkeypatch: pytest.MonkeyPatch, capsys: pytest.CaptureFixture) -> None:
    """The environment chooses the format when none is given.

    Parameters:
        monkeypatch: Pytest fixture to set environment variables.
        capsys: Pytest fixture to capture output.
    """
    monkeypatch.setenv("RECALLGYM_FORMAT", "tap")
    run(lambda: True, title="from env", number=2)
    assert capsys.readouterr().out == "ok 2 - from env\n"
