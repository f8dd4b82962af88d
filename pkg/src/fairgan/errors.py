"""Exception types shared across the package.

Each maps to a distinct CLI exit code so callers can script against
failure modes without parsing stderr.
"""


class FairganError(Exception):
    """Base class for all package-specific failures."""

    exit_code = 1


class ConfigError(FairganError):
    """Invalid configuration: bad field values, unknown keys, missing files."""

    exit_code = 2


class DataError(FairganError):
    """Malformed datasets, manifests, or stroke files."""

    exit_code = 3


class NumericError(FairganError):
    """Non-finite values or numerically degenerate inputs."""

    exit_code = 4


class CheckpointError(DataError):
    """Unreadable or incompatible checkpoint archive."""
