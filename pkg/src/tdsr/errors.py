"""Exception types raised across the package."""


class TdsrError(Exception):
    """Base class for all package errors."""


class ConfigError(TdsrError, ValueError):
    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class ShapeError(TdsrError, ValueError):
    pass


class InputContractError(TdsrError, ValueError):
    pass


class InputTooSmallError(TdsrError, ValueError):
    pass


class ContractError(TdsrError, ValueError):
    pass


class InsufficientHistoryError(TdsrError, ValueError):
    pass


class DataIntegrityError(TdsrError, ValueError):
    pass


class ChecksumError(TdsrError, ValueError):
    pass


class MetricError(TdsrError, RuntimeError):
    pass


class NonFiniteLossError(TdsrError, RuntimeError):
    """Raised when a training loss is NaN/Inf; ``snapshot`` holds the context."""

    def __init__(self, snapshot):
        super().__init__(f"non-finite loss at epoch {snapshot.get('epoch')}, "
                         f"batch {snapshot.get('batch')}: {snapshot.get('breakdown')}")
        self.snapshot = snapshot
