"""Exception types raised by trotterctl."""


class InvalidInputError(ValueError):
    """Raised when an argument fails validation (shape, finiteness, Hermiticity...)."""


class UnsupportedModelError(ValueError):
    """Raised when a model lacks the structure an operation needs.

    Typical case: a Suzuki-Trotter scheme requested for a control
    Hamiltonian that is not diagonal.
    """


class InvalidStateError(RuntimeError):
    """Raised when objects are combined inconsistently, e.g. a gradient
    routine is handed a trajectory produced by a different scheme."""


class ConfigError(ValueError):
    """Raised for malformed or unknown keys in a run configuration."""
