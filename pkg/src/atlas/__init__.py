"""Additive-exponential B-spline approximator with sparse, bounded, distally orthogonal gradients."""

__version__ = "0.1.0"

from .bspline import (ActiveWindow, MixedDensitySpline, RhoDensitySpline, activation, active_window,
                      eval_mixed, eval_rho, expand_density, grad_mixed)
from .errors import DomainError, NumericRangeError
from .model import AtlasModel, GradientBoundReport, Variant
from .sparse import SparseGradient

__all__ = [
    "ActiveWindow", "AtlasModel", "DomainError", "GradientBoundReport", "MixedDensitySpline",
    "NumericRangeError", "RhoDensitySpline", "SparseGradient", "Variant", "activation",
    "active_window", "eval_mixed", "eval_rho", "expand_density", "grad_mixed",
]
