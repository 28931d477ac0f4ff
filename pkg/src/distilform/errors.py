"""Exception types shared across the package.

Each class marks one failure category so callers (and the CLI exit-code
mapping) can tell configuration mistakes apart from runtime failures.
"""


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


class ContractError(ValueError):
    """A documented precondition or invariant was violated."""


class ConfigError(ValueError):
    """A configuration value is missing, unknown, or out of range."""


class VocabError(ValueError):
    """A token id falls outside the vocabulary."""


class LengthError(ValueError):
    """A sequence exceeds the model's maximum length."""


class SchemaError(ValueError):
    """A data file does not match its declared column schema."""


class TrainingError(RuntimeError):
    """Training produced non-finite values or was otherwise aborted."""
