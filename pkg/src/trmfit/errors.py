"""Exception and warning types shared across the package."""


class TrmError(Exception):
    """Base class for all errors raised by trmfit."""


class ShapeMismatch(TrmError, ValueError):
    pass


class DomainError(TrmError, ValueError):
    """A density value lies outside [0, 1] by more than the drift tolerance."""


class CflViolation(TrmError, ValueError):
    """A scaling coefficient lies outside the open interval (0, 1/2)."""


class UnsupportedScheme(TrmError, ValueError):
    pass


class EmptyObservationSet(TrmError, ValueError):
    pass


class InverseOutOfRange(TrmError, ValueError):
    pass


class ParseError(TrmError, ValueError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class MissingColumn(TrmError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "missing column"


class NoVehicles(TrmError, ValueError):
    pass


class ConfigError(TrmError, ValueError):
    pass


class AllZeroMatrix(UserWarning):
    """Every entry of a density matrix is zero; estimation will be degenerate."""


class ClampedDensity(UserWarning):
    pass


class DroppedVehicles(UserWarning):
    pass


class NoDescentProgress(RuntimeWarning):
    """The line search could not decrease the cost along any tried direction."""
