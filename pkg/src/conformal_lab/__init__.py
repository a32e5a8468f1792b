"""Numerical laboratory for conformal deformations of Riemannian metrics."""

from .calculus import classify_harmonicity, grad_norm_sq, laplace_beltrami, riemannian_gradient
from .conformal import (
    ConformalDeformation,
    IdentityId,
    classify_mapping,
    identity_report,
    identity_residual,
    rescale_metric,
)
from .curvature import curvature_at, ricci_lower_bound, scalar_curvature
from .expr import ScalarExpression, jet2, parse
from .geometry import ManifoldModel, grid, metric_at, model_zoo
from .integrability import ExhaustionSpec, grad_l1_report, lp_report
from .theorems import Scenario, TheoremId, check

__version__ = "0.1.0"
