"""Exception taxonomy shared by every module.

Each class marks one failure family so callers (and the CLI exit-code
mapping) can react without parsing messages.
"""


class ShapeError(ValueError):
    """Operands have incompatible shapes; the message names both."""


class DomainError(ValueError):
    """A numeric argument is outside the operation's domain."""


class ConfigError(ValueError):
    """A configuration value is invalid (bad eps, bad window, ...)."""


class ContractError(RuntimeError):
    """A documented precondition between components was violated."""


class EvaluationError(RuntimeError):
    """A computation produced non-finite values where finite ones are required."""


class TrainingError(RuntimeError):
    """Training hit an unrecoverable state (non-finite loss or gradient)."""


class CheckpointError(IOError):
    """A checkpoint file is missing, truncated, or of the wrong format/version."""


class PpmError(IOError):
    """A PPM stream is malformed or uses an unsupported variant."""
