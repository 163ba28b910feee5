"""Exception hierarchy shared by every module."""


class IsccError(Exception):
    """Base class for all package errors."""


class DomainError(IsccError, ValueError):
    """An argument lies outside the domain of a closed-form expression."""


class ContractError(IsccError, ValueError):
    """A caller-side precondition was violated (e.g. an unnormalized beamformer)."""


class InfeasibleError(IsccError):
    """A configuration or optimization problem admits no feasible point.

    The CLI maps this family to exit code 2.
    """


class InfeasibleSensingError(InfeasibleError):
    """No sensing subcarriers are allocated."""


class InfeasibleEpsError(InfeasibleError):
    """The coupled Riccati recursion diverges at the requested drop rate."""


class InfeasibleTargetError(InfeasibleError):
    """Requested LQG cost is at or below the achievable floor."""


class InfeasibleLinkError(InfeasibleError):
    """The control link cannot reach the required drop rate for any fraction."""


class NoThresholdError(InfeasibleError):
    """The spectral radius never crosses one on [0, 1]."""


class UnstableError(InfeasibleError):
    """A steady state was requested for a mean-square unstable loop."""


class UnobservableGeometryError(IsccError):
    """Fisher information is singular or numerically rank deficient."""


class SingularGeometryError(UnobservableGeometryError):
    """The polar-to-Cartesian Jacobian is (near) singular."""


class ConvergenceError(IsccError, RuntimeError):
    """An iterative solver hit its iteration cap."""

    def __init__(self, message: str, iterations: int):
        super().__init__(f"{message} (after {iterations} iterations)")
        self.iterations = iterations


class EstimationError(IsccError, RuntimeError):
    """The Kalman update could not be computed."""


class ConfigError(InfeasibleError):
    """Configuration file is missing, unparsable, or violates a constraint."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key
