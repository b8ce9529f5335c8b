"""Crash-point hook for fault-injection tests.

Components call ``crash_point(name)`` at their commit boundaries. In
production nothing is armed and the call is a dict lookup. Test harnesses arm
named points with a countdown; when one fires, CrashInjected propagates and
the harness rebuilds the component from its on-disk state, emulating a
process crash at that exact point.
"""

from __future__ import annotations

import threading

_lock = threading.Lock()
_armed: dict[str, int] = {}


class CrashInjected(RuntimeError):
    """Raised at an armed crash point; never raised in production."""


def arm(name: str, after: int = 0) -> None:
    """Arm ``name`` to fire on its (after+1)-th hit."""
    with _lock:
        _armed[name] = after


def reset() -> None:
    with _lock:
        _armed.clear()


def crash_point(name: str) -> None:
    if not _armed:
        return
    with _lock:
        if name not in _armed:
            return
        if _armed[name] > 0:
            _armed[name] -= 1
            return
        del _armed[name]
    raise CrashInjected(name)
