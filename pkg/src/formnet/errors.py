"""Exception hierarchy shared by all formnet modules."""


class FormnetError(Exception):
    """Base class for every error raised by this package."""


class DegenerateGeometryError(FormnetError, ValueError):
    """A tensioned edge has (numerically) zero length."""


class SolverError(FormnetError, RuntimeError):
    """The equilibrium solver did not converge.

    The last iterate and its residual are kept so callers can inspect or
    restart from them.
    """

    def __init__(self, message, r_I=None, residual=None, iterations=None):
        super().__init__(message)
        self.r_I = r_I
        self.residual = residual
        self.iterations = iterations


class CholeskyError(FormnetError, RuntimeError):
    """Gram matrix could not be factorized even with the maximum jitter."""


class FitError(FormnetError, RuntimeError):
    """Hyperparameter estimation failed for one or more outputs."""

    def __init__(self, message, failed=()):
        super().__init__(message)
        self.failed = list(failed)


class DatasetError(FormnetError, RuntimeError):
    """Too many failed samples, or a dataset that does not fit the request."""


class ProvenanceError(FormnetError, ValueError):
    """An artifact was produced from different upstream inputs."""


class SlackEdgeWarning(UserWarning):
    """Some edges are slack at the computed equilibrium."""


class PriorReversionWarning(UserWarning):
    """A query point is far from the training inputs; the GP fell back to its prior."""
