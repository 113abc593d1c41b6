"""Exception taxonomy shared by all modules.

Kept deliberately small: the CLI maps these onto exit codes
(user/config errors -> 2, data/checkpoint corruption -> 3,
numerical failures -> 4).
"""


class DimensionError(ValueError):
    """Tensor or matrix extents do not satisfy an operation's contract."""


class ParameterError(ValueError):
    """A caller-supplied parameter is outside its documented range."""


class ContractError(RuntimeError):
    """An API precondition was violated (misuse, not bad data)."""


class SchemaError(ValueError):
    """A file is missing mandatory columns or has an invalid layout."""


class DataError(ValueError):
    """Input data violates an invariant (ordering, emptiness, alignment)."""


class CorruptionError(RuntimeError):
    """A checkpoint or serialized artifact failed a validity check."""


class NumericalError(FloatingPointError):
    """A computation produced non-finite values."""


class ConfigError(ValueError):
    """A run-configuration file contains an unknown or malformed entry."""
