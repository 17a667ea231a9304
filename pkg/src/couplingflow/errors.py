"""Exception types shared across the package."""


class SingularMatrixError(ValueError):
    """A pivot or required inverse fell below the singularity tolerance."""


class SingularBlockError(SingularMatrixError):
    """A block that must be inverted (e.g. the top-left block of a Schur
    complement) is singular to tolerance."""


class EigFailedError(RuntimeError):
    """The eigenvalue iteration did not converge."""


class EigGapTooSmallError(ValueError):
    """Eigenvalues are closer than the requested minimum gap."""


class NonlinearLayerPresentError(TypeError):
    """A matrix realization was requested for a sequence containing a
    nonlinear layer."""


class NegativeDeterminantError(ValueError):
    """The target matrix has non-positive determinant; coupling products are
    orientation preserving so no decomposition exists."""


class RetryBudgetExhaustedError(RuntimeError):
    """A rejection sampler ran out of its draw budget."""


class DivergedRunError(RuntimeError):
    """Training produced a non-finite loss. Carries the partial record."""

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record
