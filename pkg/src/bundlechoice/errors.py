"""Exception hierarchy; every error carries the CLI exit code it maps to."""


class BundleChoiceError(Exception):
    exit_code = 1


class ConfigError(BundleChoiceError, ValueError):
    """Invalid model, sampler or run configuration."""

    exit_code = 2


class UsageError(BundleChoiceError, ValueError):
    """An operation was called on inputs it cannot serve (empty chain, hash mismatch)."""

    exit_code = 2


class DataError(BundleChoiceError, ValueError):
    """Malformed or inconsistent panel data."""

    exit_code = 3


class ArtifactIOError(BundleChoiceError, OSError):
    exit_code = 3


class NumericError(BundleChoiceError, ArithmeticError):
    """A numerical primitive failed (factorization, sampler that cannot place a draw)."""

    exit_code = 4


class DomainError(ConfigError):
    """Distribution parameters outside their admissible domain."""
