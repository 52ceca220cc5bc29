"""Exception hierarchy shared by all eulerlab modules.

The CLI maps these onto process exit codes so callers can tell a bad
configuration (2) from a numerical breakdown (3) from a run whose data
simply fails the preconditions of the blow-up theory (4).
"""


class EulerLabError(Exception):
    """Base class for all eulerlab errors."""


class ConfigError(EulerLabError):
    """Invalid configuration or arguments. CLI exit code 2."""


class CFLViolation(ConfigError):
    """Requested time step exceeds the advective stability limit."""

    def __init__(self, dt, dt_max):
        self.dt = dt
        self.dt_max = dt_max
        super().__init__(
            f"dt={dt:g} exceeds the advective stability limit {dt_max:g}; "
            f"try dt <= {0.9 * dt_max:g}"
        )


class NumericalFault(EulerLabError):
    """Non-finite data or a numerically inconsistent intermediate. CLI exit code 3."""


class ConservationViolation(NumericalFault):
    """A quantity that must be conserved (e.g. zero mean) is not."""


class QuadratureBug(NumericalFault):
    """An inequality that holds for any valid data was violated.

    This can only be triggered by broken quadrature or corrupted inputs,
    never by physically meaningful fields.
    """


class HypothesisViolation(EulerLabError):
    """Data does not satisfy a precondition of the blow-up theory. CLI exit code 4."""


class ContractViolation(EulerLabError, ValueError):
    """An API was called outside its documented preconditions."""
