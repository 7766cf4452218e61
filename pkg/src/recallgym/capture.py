"""Capture of what verification checks print."""

from __future__ import annotations

import enum
from contextlib import ExitStack, contextmanager, redirect_stderr, redirect_stdout
from io import StringIO
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from collections.abc import Iterator


class Capture(enum.Enum):
    """Which streams to capture while a check runs."""

    STDOUT: str = "stdout"
    STDERR: str = "stderr"
    BOTH: str = "both"
    NONE: str = "none"

    def __str__(self):
        return self.value.lower()

    @classmethod
    def cast(cls, value: str | bool | Capture | None) -> Capture:
        """Cast a value to an actual Capture enumeration value.

        Parameters:
            value: The value to cast.

        Returns:
            A Capture enumeration value.
        """
        if value is None or value is True:
            return cls.BOTH
        if value is False:
            return cls.NONE
        if isinstance(value, cls):
            return value
        # let potential errors bubble up
        return cls(value)

    @contextmanager
    def here(self) -> Iterator[StringIO]:
        """Redirect the selected Python-level streams into a buffer.

        Yields:
            The buffer, readable once the block exits.
        """
        buffer = StringIO()
        with ExitStack() as stack:
            if self in {Capture.STDOUT, Capture.BOTH}:
                stack.enter_context(redirect_stdout(buffer))
            if self in {Capture.STDERR, Capture.BOTH}:
                stack.enter_context(redirect_stderr(buffer))
            yield buffer


__all__ = ["Capture"]
