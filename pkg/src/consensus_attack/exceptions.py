"""Exception hierarchy shared by the optimizers, attack spaces and broker."""


class ConsensusAttackError(Exception):
    """Base class for all package errors."""


class InvalidInputError(ConsensusAttackError, ValueError):
    """Raised for non-finite, out-of-range or malformed inputs."""


class EmptyEnsembleError(InvalidInputError):
    """Raised when an ensemble operation receives zero particles."""


class InvalidConfigError(ConsensusAttackError, ValueError):
    """Raised when hyperparameters or space settings are inconsistent."""


class ShapeError(InvalidInputError):
    """Raised when array dimensions do not match what an operation expects."""


class ProtocolError(ConsensusAttackError):
    """Raised on wire-protocol violations (bad JSON, id mismatch, wrong shape)."""


class TransportError(ConsensusAttackError):
    """Raised when a remote classifier cannot be reached after all retries."""


class BudgetExceededError(ConsensusAttackError, AssertionError):
    """Internal guard: the ledger was asked to go past its query budget.

    Optimizers never trigger this under normal operation; the broker truncates
    batches instead. It exists so that a broken accounting path fails loudly.
    """
