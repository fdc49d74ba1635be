"""Exception hierarchy shared by the simulator modules."""


class LiouError(Exception):
    """Base class for all errors raised by liouctl."""


class DimensionError(LiouError, ValueError):
    pass


class NotHermitianError(LiouError, ValueError):
    pass


class InvalidDensityError(LiouError, ValueError):
    """Raised when a matrix fails one or more density-operator invariants.

    ``failures`` lists the names of the violated invariants
    (``"hermitian"``, ``"trace"``, ``"positive"``).
    """

    def __init__(self, message, failures=()):
        super().__init__(message)
        self.failures = tuple(failures)


class EigenSolverError(LiouError, RuntimeError):
    pass


class BranchCrossingError(LiouError, RuntimeError):
    """Eigenbranch continuation failed: no unambiguous overlap match."""

    def __init__(self, message, gamma=None, overlap=None):
        super().__init__(message)
        self.gamma = gamma
        self.overlap = overlap


class DegenerateSpectrumError(LiouError, ArithmeticError):
    pass


class GammaSolveError(LiouError, RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class ConfigError(LiouError, ValueError):
    """Schema or validation failure; ``path`` is the dotted config location."""

    def __init__(self, message, path=""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
