"""Exception hierarchy and process exit codes."""

from __future__ import annotations

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_PROTOCOL = 3
EXIT_DIVERGENCE = 4


class PhaseforkError(Exception):
    """Base for all package errors."""

    exit_code = 1


class ValidationError(PhaseforkError):
    """Bad manifest, config, pool file, or CLI input."""

    exit_code = EXIT_VALIDATION


class ExprError(ValidationError):
    """Reward expression parse or validation failure.

    Carries a position (offset into the source line) so tooling can point at
    the offending token.
    """

    def __init__(self, message: str, pos: int | None = None, source: str | None = None):
        self.pos = pos
        self.source = source
        if pos is not None:
            message = "%s (at column %d)" % (message, pos + 1)
        super().__init__(message)


class ProtocolError(PhaseforkError):
    """Held-out discipline or artifact discipline violation."""

    exit_code = EXIT_PROTOCOL


class DivergenceError(PhaseforkError):
    """Training diverged where the caller required a completed run."""

    exit_code = EXIT_DIVERGENCE

    def __init__(self, message: str, update_index: int | None = None):
        self.update_index = update_index
        super().__init__(message)


class CheckpointFormatError(ValidationError):
    """Corrupt, truncated, or wrong-version checkpoint bytes."""
