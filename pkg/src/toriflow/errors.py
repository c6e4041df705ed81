"""Exception hierarchy shared across the package.

Numerical failures (no convergence, resonances, degenerate twist matrices,
integrator breakdowns) are kept separate from configuration and I/O problems
so the command line driver can map them to distinct exit codes.
"""


class ToriflowError(Exception):
    """Base class for all package errors."""


class ConfigError(ToriflowError):
    """Invalid or inconsistent run configuration."""


class NumericalError(ToriflowError):
    """Base class for numerical failures."""


class SingularityError(NumericalError):
    """Evaluation too close to one of the primaries."""


class IntegrationError(NumericalError):
    """The adaptive integrator could not complete a trajectory."""

    def __init__(self, message, indices=None):
        super().__init__(message)
        self.indices = [] if indices is None else list(indices)


class ResonanceError(NumericalError):
    """A cohomological divisor fell below the configured floor."""

    def __init__(self, message, k=None, divisor=None):
        super().__init__(message)
        self.k = k
        self.divisor = divisor


class DegenerateDivisorError(NumericalError):
    """|lambda| too close to |mu| in a non-small-divisor equation."""


class TwistConditionError(NumericalError):
    """Singular (or numerically singular) twist linear system."""

    def __init__(self, message, cond=None):
        super().__init__(message)
        self.cond = cond


class ConvergenceError(NumericalError):
    """Newton or root finding failed to converge within its budget."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = [] if history is None else list(history)


class PersistenceError(ToriflowError):
    """Base class for record I/O failures."""


class SchemaError(PersistenceError):
    """Unknown schema version or malformed record layout."""


class ChecksumError(PersistenceError):
    """Stored checksum does not match the payload."""
