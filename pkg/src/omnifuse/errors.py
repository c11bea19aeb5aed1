"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: config errors exit 2, backend errors
exit 3, data errors exit 4.
"""


class OmnifuseError(Exception):
    """Base class for all errors raised by this package."""


class InputError(OmnifuseError, ValueError):
    """Invalid argument or violated invariant on a library call."""


class GeometryError(InputError):
    """Array geometry fails its construction invariants."""


class ConfigError(OmnifuseError):
    """Run/scene configuration is invalid or incomplete (exit code 2)."""


class BackendError(OmnifuseError):
    """Prompt or mask backend unreachable or failing (exit code 3)."""


class ProtocolError(BackendError):
    """Backend reachable but returned a malformed response."""


class DataError(OmnifuseError):
    """Dataset content unreadable or malformed (exit code 4)."""
