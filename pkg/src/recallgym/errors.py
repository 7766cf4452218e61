"""Exceptions raised by recallgym."""

from __future__ import annotations


class RecallGymError(Exception):
    """Base class for all recallgym errors."""


class ConfigError(RecallGymError, ValueError):
    """Invalid or unknown configuration value."""

    def __init__(self, message: str, key: str | None = None) -> None:
        """Initialize the error.

        Parameters:
            message: What went wrong.
            key: The dotted configuration key at fault, if any.
        """
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key


class ProtocolError(RecallGymError, RuntimeError):
    """An interaction contract was broken (stepping a finished episode, foreign snapshot, masked action...)."""


class CheckpointError(RecallGymError):
    """A checkpoint file does not match the configured shapes."""


class ReplayError(RecallGymError):
    """A logged trajectory could not be replayed identically."""


__all__ = ["CheckpointError", "ConfigError", "ProtocolError", "RecallGymError", "ReplayError"]
