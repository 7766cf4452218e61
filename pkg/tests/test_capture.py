"""Tests for the `capture` module."""

from __future__ import annotations

import sys

import pytest

from recallgym.capture import Capture


@pytest.mark.parametrize(
    ("value", "expected"),
    [
        ("stdout", Capture.STDOUT),
        ("stderr", Capture.STDERR),
        ("both", Capture.BOTH),
        ("none", Capture.NONE),
        (True, Capture.BOTH),
        (False, Capture.NONE),
        (Capture.STDOUT, Capture.STDOUT),
        (Capture.NONE, Capture.NONE),
        (None, Capture.BOTH),  # default
    ],
)
def test_cast(value: str | bool | Capture | None, expected: Capture) -> None:
    """Cast various values in a Capture enumeration value.

    Parameters:
        value: The value to cast.
        expected: The value to expect.
    """
    assert Capture.cast(value) == expected


def test_cast_unknown_value() -> None:
    """Unknown names are rejected."""
    with pytest.raises(ValueError, match="'stdin'"):
        Capture.cast("stdin")


@pytest.mark.parametrize(
    ("capture", "captured", "passed"),
    [
        (Capture.BOTH, ["out", "err"], []),
        (Capture.STDOUT, ["out"], ["err"]),
        (Capture.STDERR, ["err"], ["out"]),
    ],
)
def test_here(capsys: pytest.CaptureFixture, capture: Capture, captured: list[str], passed: list[str]) -> None:
    """Selected streams end up in the buffer, the others pass through.

    Parameters:
        capsys: Pytest fixture to capture output.
        capture: Streams to capture.
        captured: Messages expected in the buffer.
        passed: Messages expected on the real streams.
    """
    with capture.here() as buffer:
        print("out")  # noqa: T201
        print("err", file=sys.stderr)  # noqa: T201
    assert buffer.getvalue().split() == captured
    outerr = capsys.readouterr()
    assert (outerr.out + outerr.err).split() == passed
