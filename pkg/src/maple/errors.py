"""Exception hierarchy shared across the pipeline.

Exit-code mapping for the CLI: usage errors -> 1, DataError -> 2,
BackendError -> 3.
"""


class MapleError(Exception):
    """Base class for all pipeline errors."""


class DataError(MapleError):
    """Malformed, missing, or inconsistent data (files, labels, splits)."""


class BackendError(MapleError):
    """Model backend failures: unloadable checkpoints, encoders, training aborts."""


class ConfigurationError(MapleError):
    """Invalid or unresolvable configuration (unknown metric, bad encoder id)."""
