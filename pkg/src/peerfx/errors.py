"""Exception types shared across the package.

Every error raised on a user-facing path derives from :class:`PeerfxError`
so the CLI can map failure categories to distinct exit codes.
"""

from __future__ import annotations


class PeerfxError(Exception):
    """Base class for all package errors."""


class ConfigError(PeerfxError):
    """Malformed or inconsistent run configuration."""


class DataError(PeerfxError):
    """Input data violates a shape, symmetry, or value contract."""


class DegenerateInputError(DataError):
    """Input is structurally empty for the requested operation (e.g. no edges)."""


class IdentificationError(PeerfxError):
    """A cross-moment matrix is rank deficient; coefficients are not identified."""


class NumericalError(PeerfxError):
    """A numerical routine failed to produce a usable result."""


class DivergenceError(NumericalError):
    """An iterative fit diverged (e.g. unpenalized logistic fit under separation)."""
