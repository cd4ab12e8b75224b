"""Exception taxonomy shared across the package."""


class InputError(ValueError):
    """Invalid user-supplied data or configuration (CLI exit code 1)."""


class NumericalError(RuntimeError):
    """Numerical breakdown during sampling (CLI exit code 2)."""
