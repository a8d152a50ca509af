"""
Exception hierarchy for the whole package.

Every class carries the process exit code the command line maps it to, so
``runner.main`` can translate any library failure without a lookup table.
"""


class IbacError(Exception):
    exit_code = 1


class ConfigError(IbacError, ValueError):
    exit_code = 2


class ShapeError(IbacError, ValueError):
    pass


class NonFiniteError(IbacError, ArithmeticError):
    pass


class DivergenceError(NonFiniteError):
    """
    Raised when a loss or gradient goes non-finite during optimisation.
    ``last_good`` holds whatever the caller could still save (model or head).
    """
    exit_code = 3

    def __init__(self, message, epoch=None, batch_index=None, last_good=None):
        super().__init__(message)
        self.epoch = epoch
        self.batch_index = batch_index
        self.last_good = last_good

    def __str__(self):
        where = []
        if self.epoch is not None:
            where.append(f"epoch={self.epoch}")
        if self.batch_index is not None:
            where.append(f"batch={self.batch_index}")
        base = super().__str__()
        return f"{base} ({', '.join(where)})" if where else base


class GradientCheckError(IbacError):

    def __init__(self, message, coordinate):
        super().__init__(f"{message} at coordinate {coordinate}")
        self.coordinate = coordinate


class FormatError(IbacError):
    exit_code = 2


class VersionError(FormatError):
    pass


class TruncatedPayloadError(FormatError):
    pass


class ChecksumError(FormatError):
    pass


class HeaderMismatchError(FormatError):
    pass


class EmptyDatasetError(IbacError, ValueError):
    exit_code = 2


class UnsupportedObservationError(IbacError):
    pass


class DegenerateCorrelationError(IbacError, ArithmeticError):
    pass


class EmptyCodebookError(IbacError):
    pass


class SweepFailure(IbacError):
    exit_code = 4
