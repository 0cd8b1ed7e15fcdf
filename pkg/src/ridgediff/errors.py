"""Exception hierarchy shared by every module.

Every domain error derives from :class:`RidgeDiffError` so the command line
can map them all to exit code 1 and print the class name.
"""


class RidgeDiffError(Exception):
    """Base class for domain errors."""


class IoFailure(RidgeDiffError, OSError):
    pass


class MalformedHeader(RidgeDiffError, ValueError):
    pass


class UnsupportedFormat(RidgeDiffError, ValueError):
    pass


class EmptyFingerprint(RidgeDiffError, ValueError):
    pass


class InvalidSchedule(RidgeDiffError, ValueError):
    pass


class DimensionMismatch(RidgeDiffError, ValueError):
    pass


class InvalidArchitecture(RidgeDiffError, ValueError):
    pass


class NonFiniteLoss(RidgeDiffError, FloatingPointError):
    pass


class FlatImage(RidgeDiffError, ValueError):
    pass


class InsufficientSamples(RidgeDiffError, ValueError):
    pass


class NotPSD(RidgeDiffError, ValueError):
    pass


class GroupTooSmall(RidgeDiffError, ValueError):
    pass


class ParseError(RidgeDiffError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class UnknownKey(RidgeDiffError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unknown key"
