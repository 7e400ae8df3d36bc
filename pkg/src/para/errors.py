"""Exception types raised across the package."""


class ParaError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(ParaError, ValueError):
    pass


class NonConforming(ShapeError):
    """Model, adapter, and data shapes do not line up."""


class DegenerateColumns(ParaError, ValueError):
    """A matrix expected to have full column rank does not (e.g. an untrained zero B)."""


class NotOrthonormal(ParaError, ValueError):
    pass


class DivergedLoss(ParaError, FloatingPointError):
    """Training loss became non-finite; usually the learning rate is too high."""


class BadMagic(ParaError, ValueError):
    pass


class ManifestMismatch(ParaError, ValueError):
    pass


class UnsupportedVersion(ParaError, ValueError):
    pass


class ParseError(ParaError, ValueError):
    def __init__(self, message, row=None, column=None):
        super().__init__(message)
        self.row = row
        self.column = column
