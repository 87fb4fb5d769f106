"""Exception types shared across the package.

The CLI maps these onto distinct exit codes, so library code should raise
the most specific type that applies.
"""


class ValidationError(ValueError):
    """Invalid configuration or argument values."""


class DataError(ValidationError):
    """Malformed dataset files, manifests, or checkpoints."""


class NumericalError(RuntimeError):
    """Non-finite loss or gradient encountered during computation."""
