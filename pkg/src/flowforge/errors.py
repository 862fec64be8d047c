"""Exception hierarchy shared across the toolchain.

The CLI maps these onto exit codes: validation problems exit 1, I/O and
scheduler problems exit 2.
"""


class ForgeError(Exception):
    """Base class for all toolchain errors."""


class ConfigError(ForgeError):
    """Configuration parse, schema, or invariant failure."""


class StateError(ForgeError):
    """Generator-state misuse or corrupt state file."""


class GeometryError(ForgeError):
    """Infeasible or degenerate geometry request."""


class FieldError(ForgeError):
    """Grid / dense-field contract violation."""


class OrchestrationError(ForgeError):
    """Case materialization or submission failure."""


class ArtifactIOError(ForgeError):
    """Filesystem or scheduler I/O failure (CLI exit code 2)."""
