"""Exception hierarchy for the engine.

ValidationError subclasses signal bad inputs (CLI exit code 2),
NumericalError subclasses signal a solver or integrator failure (exit code 3).
"""


class ModelError(Exception):
    """Base class for all engine errors."""


class ValidationError(ModelError, ValueError):
    """Input outside the model's domain."""


class NumericalError(ModelError, RuntimeError):
    """A numerical procedure failed to produce a trustworthy result."""


# =============================================================================
# Validation errors
# =============================================================================


class GammaOne(ValidationError):
    """Relative risk aversion of exactly one (log utility) is not supported."""


class NonpositiveSurplus(ValidationError):
    """Real wealth plus human capital is not positive."""


class NonpositiveWealth(ValidationError):
    """Real wealth is not positive where the phase requires it."""


class HorizonExhausted(ValidationError):
    """State too close to the terminal horizon for finite controls."""


class DomainEdge(ValidationError):
    """State not strictly inside the HJB domain."""


class InconsistentSign(ValidationError):
    """(1 - gamma) * value must be positive."""


class UnknownPreset(ValidationError):
    """No built-in parameter preset with that name."""


# =============================================================================
# Numerical errors
# =============================================================================


class NonFiniteOde(NumericalError):
    """Bond coefficient ODE produced a non-finite value."""


class BlowUp(NumericalError):
    """Riccati flow escaped (norm above threshold) before the horizon."""


class SingularSigma(NumericalError):
    """Asset exposure matrix is numerically singular."""


class QSingular(NumericalError):
    """det Q(tau) vanished in the Radon linearization (conjugate point)."""

    def __init__(self, tau: float, det: float):
        self.tau = tau
        self.det = det
        super().__init__(f"|det Q| = {det:.3e} below threshold at tau = {tau:.6f}")


class QuadratureFail(NumericalError):
    """Adaptive quadrature did not reach its tolerance."""


class ExistenceFail(NumericalError):
    """Global existence conditions for the Riccati system are not met."""


class SingularInnovation(NumericalError):
    """Kalman innovation covariance is not positive definite."""


class NoConvergence(NumericalError):
    """Optimizer stopped without meeting its convergence criteria."""
