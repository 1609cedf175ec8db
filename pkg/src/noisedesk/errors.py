"""Exception types shared across the toolkit."""


class NoisedeskError(Exception):
    """Base class for all toolkit errors."""


class ParameterError(NoisedeskError, ValueError):
    """An argument violates a documented precondition."""


class IdempotenceError(ParameterError):
    """An already-applied transformation was requested a second time."""


class ScheduleOrderError(ParameterError):
    """A sigma pair or sequence is not in strictly decreasing order."""


class ContractViolationError(NoisedeskError):
    """A network returned an output that breaks its shape contract."""


class DataError(NoisedeskError):
    """An input file or stream is malformed or inconsistent."""


class TensorFormatError(DataError):
    """A binary tensor file failed validation."""


class DegenerateChannelError(DataError):
    """A channel has zero spread and cannot be normalized."""


class TrainingDivergedError(NoisedeskError):
    """Training produced a non-finite loss.

    Carries the step index at which divergence was detected.
    """

    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"training loss became non-finite at step {step}")
