"""Exception hierarchy shared by all computation modules."""


class ImseError(Exception):
    """Base class for every error raised by this package."""


# --- Gaussian oracle ---------------------------------------------------------

class SingularCovariance(ImseError):
    """A covariance (sub-)block is singular or indefinite beyond repair."""


class UnknownBlock(ImseError):
    """A requested block label does not exist in the joint."""


class UnstableClosedLoop(ImseError):
    """Closed-loop dynamics are not Schur-stable in control mode."""


class DimensionMismatch(ImseError):
    """Matrix or sequence dimensions do not conform."""


# --- Channel simulation ------------------------------------------------------

class PowerCapExceeded(ImseError):
    """Empirical input power breached the configured finite-power cap."""


class CallbackFailure(ImseError):
    """A user callback raised, returned garbage, or violated its contract."""


class UnsupportedEstimator(ImseError):
    """The requested estimator cannot handle the given channel spec."""


class DegenerateWeights(ImseError):
    """Particle weights collapsed (effective sample size too small)."""


class HorizonMismatch(ImseError):
    """Two objects that must share a horizon do not."""


# --- LTI / LTV rates ---------------------------------------------------------

class MarginalEigenvalue(ImseError):
    """An eigenvalue modulus is too close to 1 for a stable/antistable split."""


class IllConditionedTransform(ImseError):
    """A decoupling transformation has condition number beyond the cap."""


class NoConvergence(ImseError):
    """A fixed-point iteration hit its iteration cap before converging."""


class NotDetectable(ImseError):
    """Riccati iteration diverged; the (A, C) pair is not detectable."""


class NotPSD(ImseError):
    """A matrix required to be positive semidefinite is not."""


class NoSplitAvailable(ImseError):
    """No stable/antistable splitting route exists for this sequence."""


class MarginalMonodromy(ImseError):
    """The period-product matrix has an eigenvalue too close to the unit circle."""


class ValidationFailure(ImseError):
    """A declared split failed validation at a specific step."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class SingularStep(ImseError):
    """A per-step matrix in a transition product is singular."""


class NumericalBlowup(ImseError):
    """A recursion iterate exceeded the magnitude cap."""


# --- Nonlinear rates ---------------------------------------------------------

class ModeMismatch(ImseError):
    """Operation called on a spec whose mode does not support it."""


class NonFiniteState(ImseError):
    """Particle propagation produced NaN or infinite states."""


class InsufficientSamples(ImseError):
    """Too few samples for the requested statistical estimate."""


class DimensionTooHigh(ImseError):
    """Trajectory dimension exceeds the estimator cap with windowing disabled."""


# --- CLI ----------------------------------------------------------------------

class SchemaError(ImseError):
    """Scenario file failed schema validation."""

    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class UnknownParameter(ImseError):
    """Sweep parameter not present in the scenario."""
