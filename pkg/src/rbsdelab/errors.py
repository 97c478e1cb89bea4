"""Exception hierarchy shared by every module of the package."""


class RBSDEError(Exception):
    """Base class for all errors raised by rbsdelab."""


class InvalidConfiguration(RBSDEError, ValueError):
    """Problem data or solver arguments violate a documented precondition."""


class StabilityError(InvalidConfiguration):
    """The implicit step is not monotone-solvable (``dt * max(mu, 0) >= 1``)."""


class InfeasibleBarriers(InvalidConfiguration):
    """Lower barrier exceeds upper barrier somewhere."""


class OutOfRange(RBSDEError, IndexError):
    """Node or step index outside the lattice."""


class CapacityError(RBSDEError):
    """Request exceeds what an exhaustive routine can enumerate."""


class NumericError(RBSDEError, ArithmeticError):
    """Non-finite input or a root finder that failed to converge."""


class UnsupportedOracle(RBSDEError):
    """The brute-force oracle cannot represent the requested problem."""


class InvalidComparison(RBSDEError, ValueError):
    """Two solutions live on different lattices."""


class ConfigError(RBSDEError, ValueError):
    """Configuration document failed schema or invariant validation.

    ``path`` locates the offending element (JSON pointer style).
    """

    def __init__(self, message, path="/"):
        super().__init__(f"{path}: {message}")
        self.path = path


class ReportWriteError(RBSDEError, OSError):
    """A report target could not be written; ``target`` names the file."""

    def __init__(self, target, reason):
        super().__init__(f"cannot write {target}: {reason}")
        self.target = str(target)
