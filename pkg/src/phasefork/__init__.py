"""Reward-hypothesis verification by checkpoint forking, and phase-aware
deployment of the verified winners, on two desk-scale RL tasks."""

from __future__ import annotations

from . import _backend

__version__ = "0.1.0"


def backend_name() -> str:
    """Active numeric backend: "compiled" or "pyref"."""
    return _backend.backend_name()
