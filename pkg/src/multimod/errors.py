"""Exception types shared across the package.

Contract violations (bad shapes, bad ids, bad configs, misuse of an API)
are distinct from numeric failures (NaN/Inf reaching a computation); the
CLI maps the former to exit code 1 and the latter to exit code 2.
"""


class ContractError(ValueError):
    """An API precondition was violated by the caller."""


class ShapeError(ContractError):
    """Operand shapes are incompatible for the requested operation."""


class ConfigError(ContractError):
    """A configuration value is invalid or unknown."""


class VocabularyError(ContractError):
    """A token id falls outside the vocabulary."""


class NumericError(ArithmeticError):
    """A NaN or Inf reached a point where it cannot be meaningful."""
