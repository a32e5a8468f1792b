"""Gradient, divergence and Laplace–Beltrami operator on a chart.

Sign convention: ``Δ = div ∘ grad``, so ``Δ|x|² = 2n`` on flat space. Subharmonic
means ``Δφ ≥ 0``. Flipping this convention silently flips every hypothesis
checked downstream.

Every function accepts a single point of shape ``(n,)`` (returning scalars) or
a batch of shape ``(N, n)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _parallel
from .expr import ExpressionDomainError, ScalarExpression, dense, evaluate
from .geometry import Grid, ManifoldModel, inverse_and_density, metric_jets

HARMONIC_TOL = 1e-8


def _batch(x):
    arr = np.asarray(x, dtype=float)
    return np.atleast_2d(arr), arr.ndim == 1


def _unbatch(values: np.ndarray, single: bool):
    return values[0] if single else values


def _phi_jet(phi: ScalarExpression, pts: np.ndarray, order: int):
    out = dense(evaluate(phi, pts, order=order), pts.shape[0], pts.shape[1], order)
    if not np.isfinite(out[0]).all():
        raise ExpressionDomainError("non-finite value", int(np.flatnonzero(~np.isfinite(out[0]))[0]))
    return out


def riemannian_gradient(model: ManifoldModel, phi: ScalarExpression, x):
    """Contravariant gradient g^{ij} d_j phi."""
    pts, single = _batch(x)
    _, grad = _phi_jet(phi, pts, 1)
    ginv, _ = inverse_and_density(metric_jets(model, pts, order=0).g)
    out = np.einsum("nij,nj->ni", ginv, grad)
    return out[0] if single else out


def grad_norm_sq(model: ManifoldModel, phi: ScalarExpression, x):
    pts, single = _batch(x)
    _, grad = _phi_jet(phi, pts, 1)
    ginv, _ = inverse_and_density(metric_jets(model, pts, order=0).g)
    out = np.einsum("ni,nij,nj->n", grad, ginv, grad)
    return _unbatch(np.maximum(out, 0.0), single)


def laplacian_from_jets(g: np.ndarray, dg: np.ndarray, grad: np.ndarray, hess: np.ndarray) -> np.ndarray:
    """Divergence form (1/√g) d_i(√g g^{ij} d_j φ), expanded with exact derivatives:

    g^{ij} d_ij φ + (d_i g^{ij}) d_j φ + g^{ij} (d_i log √g) d_j φ,
    with d_i g^{ij} = -g^{ia} d_i g_ab g^{bj} and d_i log √g = ½ g^{ab} d_i g_ab.
    """
    ginv = np.linalg.inv(g)
    second = np.einsum("nij,nij->n", ginv, hess)
    d_ginv_div = -np.einsum("nia,niab,nbj->nj", ginv, dg, ginv)
    dlog_density = 0.5 * np.einsum("nab,niab->ni", ginv, dg)
    first = np.einsum("nj,nj->n", d_ginv_div, grad) + np.einsum("ni,nij,nj->n", dlog_density, ginv, grad)
    return second + first


def _laplace_chunk(model: ManifoldModel, phi: ScalarExpression, pts: np.ndarray) -> np.ndarray:
    _, grad, hess = _phi_jet(phi, pts, 2)
    mj = metric_jets(model, pts, order=1)
    inverse_and_density(mj.g)  # SPD check
    return laplacian_from_jets(mj.g, mj.dg, grad, hess)


def laplace_beltrami(model: ManifoldModel, phi: ScalarExpression, x):
    pts, single = _batch(x)
    out = _parallel.concat(lambda p: _laplace_chunk(model, phi, p), pts)
    return _unbatch(out, single)


@dataclass(frozen=True)
class HarmonicityClass:
    tag: str  # harmonic | subharmonic | superharmonic | mixed
    witness_min: float
    witness_max: float
    tolerance: float
    argmin: int = 0
    argmax: int = 0

    @property
    def label(self) -> str:
        return f"{self.tag} (on sampled grid)"


def classify_values(lap: np.ndarray, tolerance: float = HARMONIC_TOL) -> HarmonicityClass:
    lo, hi = float(lap.min()), float(lap.max())
    if max(abs(lo), abs(hi)) <= tolerance:
        tag = "harmonic"
    elif lo >= -tolerance and hi > tolerance:
        tag = "subharmonic"
    elif hi <= tolerance and lo < -tolerance:
        tag = "superharmonic"
    else:
        tag = "mixed"
    return HarmonicityClass(tag, lo, hi, tolerance, int(np.argmin(lap)), int(np.argmax(lap)))


def classify_harmonicity(
    model: ManifoldModel, phi: ScalarExpression, grid: Grid, tolerance: float = HARMONIC_TOL
) -> HarmonicityClass:
    if len(grid) == 0:
        raise ValueError("grid is empty")
    try:
        lap = laplace_beltrami(model, phi, grid.points)
    except ExpressionDomainError as err:
        raise ExpressionDomainError(f"Laplacian evaluation failed: {err}", err.point_index) from err
    bad = np.flatnonzero(~np.isfinite(lap))
    if bad.size:
        raise ExpressionDomainError("non-finite Laplacian", int(bad[0]))
    return classify_values(lap, tolerance)
