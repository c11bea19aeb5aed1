"""Kernel backend selection: compiled extension when available, numpy otherwise.

The compiled backend (omnifuse._kernels, Cython) is picked automatically at
import time. Set OMNIFUSE_BACKEND=python or =compiled to force a choice, or
use use_backend() to switch within a process (the benchmark does this to
compare the two).
"""

from __future__ import annotations

import logging
import os
from contextlib import contextmanager

from . import _kernels_py
from .errors import ConfigError

logger = logging.getLogger("omnifuse.backend")

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built; numpy fallback
    _compiled = None

_forced: str | None = None
_env_choice = os.environ.get("OMNIFUSE_BACKEND", "auto").strip().lower() or "auto"
if _env_choice not in ("auto", "compiled", "python"):
    raise ConfigError(f"OMNIFUSE_BACKEND must be auto|compiled|python, got {_env_choice!r}")


def available_backends() -> tuple[str, ...]:
    return ("compiled", "python") if _compiled is not None else ("python",)


def _resolve(name: str) -> str:
    if name == "auto":
        return "compiled" if _compiled is not None else "python"
    if name == "compiled" and _compiled is None:
        raise ConfigError("compiled backend requested but omnifuse._kernels is not built")
    return name


def active_backend() -> str:
    return _resolve(_forced if _forced is not None else _env_choice)


def kernels():
    """The active kernel namespace (beamform_power_db, warp_*, blend_masked)."""
    return _compiled if active_backend() == "compiled" else _kernels_py


@contextmanager
def use_backend(name: str):
    """Temporarily force a backend ('compiled', 'python', or 'auto')."""
    global _forced
    name = name.strip().lower()
    if name not in ("auto", "compiled", "python"):
        raise ConfigError(f"unknown backend {name!r}")
    _resolve(name)  # fail fast if unavailable
    previous = _forced
    _forced = name
    try:
        yield
    finally:
        _forced = previous
