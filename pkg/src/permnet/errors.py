"""Exception hierarchy shared across the package.

Exit-code mapping used by the CLI: ValidationError/ParseError -> 3,
SolverError -> 4.
"""


class PermnetError(Exception):
    """Base class for all permnet errors."""


class ParseError(PermnetError):
    """A file could not be parsed (malformed JSON, missing keys)."""


class ValidationError(PermnetError):
    """An input violated a structural or physical invariant."""


class SolverError(PermnetError):
    """A linear solve failed (singular system or non-convergence)."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual
