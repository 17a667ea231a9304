"""Affine coupling layers as exact linear algebra: decompositions of
positive-determinant matrices into short coupling products, Schur-complement
certificates showing four coupling matrices are not enough, explicit shallow
universal-approximation constructions, mixture-separation constructions, and
the desk-scale training experiments that accompany them.
"""

from couplingflow.errors import (
    DivergedRunError,
    EigFailedError,
    EigGapTooSmallError,
    NegativeDeterminantError,
    NonlinearLayerPresentError,
    RetryBudgetExhaustedError,
    SingularBlockError,
    SingularMatrixError,
)

__version__ = "0.1.0"

__all__ = [
    "DivergedRunError",
    "EigFailedError",
    "EigGapTooSmallError",
    "NegativeDeterminantError",
    "NonlinearLayerPresentError",
    "RetryBudgetExhaustedError",
    "SingularBlockError",
    "SingularMatrixError",
    "__version__",
]
