"""Base exception for everything raised by this package."""


class SolverError(Exception):
    """Common ancestor so callers can catch all package errors at once."""
