"""Conformal deformations ḡ = e^{2σ} g and the identity-residual engine.

Every identity is evaluated as ``LHS - RHS`` with Δ and grad taken in the base
metric g. The rescaled scalar curvature s̄ always comes from the full tensor
pipeline applied to ḡ, never from the transformation law itself, so
``EQ_2_1`` is a genuine cross-check between two code paths.

Two formulas are kept in their as-stated form next to the version that follows
from the scalar-curvature law:

* ``LAP_SQUARE_PAPER`` uses Δλ² = 2λΔλ + |grad λ|² (the correct identity has
  2|grad λ|²), so its residual is exactly |grad λ|²; ``EQ_2_4_PAPER`` inherits
  this and is off by (n-1)|grad λ|². The corrected coefficient in the
  ``EQ_2_4`` form is (n-6).
* ``EQ_3_2_PAPER`` has coefficient (n-4) where substitution gives (4-n), so on
  conharmonic σ its residual is -2(n-4)|grad λ|².

Those gaps are predicted and reported; ``fails_as_predicted`` is a pass.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from . import _parallel
from . import expr as ex
from .calculus import laplacian_from_jets
from .curvature import curvature_from_jets
from .expr import ScalarExpression, dense, evaluate_many
from .geometry import Grid, ManifoldModel, MetricField, metric_jets

IDENTITY_TOL = 1e-8


class IdentityId(str, Enum):
    EQ_2_1 = "EQ_2_1"
    EQ_2_2 = "EQ_2_2"
    EQ_2_3 = "EQ_2_3"
    EQ_2_4_PAPER = "EQ_2_4_PAPER"
    EQ_2_4_CORRECTED = "EQ_2_4_CORRECTED"
    EQ_2_5 = "EQ_2_5"
    EQ_2_6 = "EQ_2_6"
    EQ_3_1 = "EQ_3_1"
    EQ_3_2_PAPER = "EQ_3_2_PAPER"
    EQ_3_2_DERIVED = "EQ_3_2_DERIVED"
    LAP_SQUARE_PAPER = "LAP_SQUARE_PAPER"
    LAP_SQUARE_CORRECTED = "LAP_SQUARE_CORRECTED"

    def __str__(self) -> str:
        return self.value


PAPER_IDS = {IdentityId.EQ_2_4_PAPER, IdentityId.EQ_3_2_PAPER, IdentityId.LAP_SQUARE_PAPER}
# ids whose formulas carry (n-2) denominators or u = λ^{(n-2)/2}
NEEDS_N3 = {
    IdentityId.EQ_2_5,
    IdentityId.EQ_2_6,
    IdentityId.EQ_3_1,
    IdentityId.EQ_3_2_PAPER,
    IdentityId.EQ_3_2_DERIVED,
}


class ConformalError(ValueError):
    pass


@dataclass(frozen=True)
class ConformalDeformation:
    """σ, λ = e^σ and u = λ^{(n-2)/2}; any one determines the other two."""

    n: int
    sigma: ScalarExpression
    lam: ScalarExpression
    u: ScalarExpression | None
    given: str = "sigma"

    @classmethod
    def from_sigma(cls, sigma: ScalarExpression | str, n: int | None = None) -> "ConformalDeformation":
        sigma = _as_expr(sigma, n)
        n = sigma.arity
        lam = ScalarExpression.from_tree(ex.exp(sigma.tree), n)
        u = ScalarExpression.from_tree(ex.exp(((n - 2) / 2) * sigma.tree), n) if n >= 3 else None
        return cls(n, sigma, lam, u, "sigma")

    @classmethod
    def from_lambda(cls, lam: ScalarExpression | str, n: int | None = None) -> "ConformalDeformation":
        lam = _as_expr(lam, n)
        n = lam.arity
        sigma = ScalarExpression.from_tree(ex.log(lam.tree), n)
        u = ScalarExpression.from_tree(lam.tree ** ((n - 2) / 2), n) if n >= 3 else None
        return cls(n, sigma, lam, u, "lambda")

    @classmethod
    def from_u(cls, u: ScalarExpression | str, n: int | None = None) -> "ConformalDeformation":
        u = _as_expr(u, n)
        n = u.arity
        if n < 3:
            raise ConformalError("the u representation needs n >= 3")
        lam = ScalarExpression.from_tree(u.tree ** (2 / (n - 2)), n)
        sigma = ScalarExpression.from_tree((2 / (n - 2)) * ex.log(u.tree), n)
        return cls(n, sigma, lam, u, "u")

    @classmethod
    def constant(cls, c: float, n: int) -> "ConformalDeformation":
        return cls.from_sigma(ScalarExpression.from_tree(c, n))


def _as_expr(value, n):
    if isinstance(value, ScalarExpression):
        return value
    if n is None:
        raise ConformalError("dimension required when passing expression text")
    return ex.parse(value, n)


def rescale_metric(model: ManifoldModel, deformation: ConformalDeformation) -> ManifoldModel:
    """Model with metric e^{2σ} g. Completeness is not conformally invariant, so
    the declared flags are copied and marked as inherited."""
    if deformation.n != model.dimension:
        raise ConformalError("deformation dimension does not match model")
    n = model.dimension
    factor = ex.exp(2 * deformation.sigma.tree)  # one shared node, evaluated once per batch
    rows = []
    for i in range(n):
        row = []
        for j in range(n):
            if j < i:
                row.append(rows[j][i])
                continue
            entry = model.metric.entries[i][j]
            if ex.constant_value(entry.tree) == 0.0:
                row.append(entry)
            else:
                row.append(ScalarExpression.from_tree(factor * entry.tree, n))
        rows.append(row)
    flat = None
    if model.metric.conformal_to_flat is not None:
        flat = ScalarExpression.from_tree(model.metric.conformal_to_flat.tree + deformation.sigma.tree, n)
    return replace(
        model,
        name=f"{model.name}~conformal",
        metric=MetricField(tuple(tuple(r) for r in rows), flat),
        known_scalar_curvature=None,
        flags_inherited=True,
    )


# ---------------------------------------------------------------------------
# Pointwise ingredients
# ---------------------------------------------------------------------------


@dataclass
class Ingredients:
    """Everything the identities need at a batch of points."""

    n: int
    s: np.ndarray
    s_bar: np.ndarray
    sigma: np.ndarray
    lap_sigma: np.ndarray
    grad_sigma_sq: np.ndarray
    lam: np.ndarray
    lap_lam: np.ndarray
    grad_lam_sq: np.ndarray
    lap_lam_sq: np.ndarray
    u: np.ndarray | None
    lap_u: np.ndarray | None


def _ingredients_chunk(model, deformation, rescaled, need_s_bar: bool, pts: np.ndarray):
    n_pts, n = pts.shape
    mj = metric_jets(model, pts, order=2)
    base = curvature_from_jets(mj.g, mj.dg, mj.ddg, full=False)
    ginv = base["ginv"]

    trees = [deformation.sigma, deformation.lam]
    if deformation.u is not None:
        trees.append(deformation.u)
    jets = [dense(j, n_pts, n) for j in evaluate_many(trees, pts, order=2)]
    for k, (v, _, _) in enumerate(jets):
        bad = np.flatnonzero(~np.isfinite(v))
        if bad.size:
            raise ex.ExpressionDomainError(f"non-finite {('sigma', 'lambda', 'u')[k]}", int(bad[0]))
    (sv, sg, sh), (lv, lg, lh) = jets[0], jets[1]
    bad = np.flatnonzero(lv <= 0)
    if bad.size:
        raise ConformalError(f"lambda must be positive (point {int(bad[0])})")

    def lap(grad, hess):
        return laplacian_from_jets(mj.g, mj.dg, grad, hess)

    def norm_sq(grad):
        return np.einsum("ni,nij,nj->n", grad, ginv, grad)

    # λ² as a jet: value λ², gradient 2λ dλ, Hessian 2λ H + 2 dλ⊗dλ
    l2_grad = 2 * lv[:, None] * lg
    l2_hess = 2 * lv[:, None, None] * lh + 2 * lg[:, :, None] * lg[:, None, :]

    if need_s_bar:
        rj = metric_jets(rescaled, pts, order=2)
        s_bar = curvature_from_jets(rj.g, rj.dg, rj.ddg, full=False)["scalar"]
    else:
        s_bar = np.full(n_pts, np.nan)

    u = lap_u = None
    if deformation.u is not None:
        uv, ug, uh = jets[2]
        u, lap_u = uv, lap(ug, uh)
    return (
        base["scalar"], s_bar, sv, lap(sg, sh), norm_sq(sg), lv, lap(lg, lh), norm_sq(lg), lap(l2_grad, l2_hess),
        u if u is not None else np.full(n_pts, np.nan),
        lap_u if lap_u is not None else np.full(n_pts, np.nan),
    )


def ingredients(
    model: ManifoldModel, deformation: ConformalDeformation, points, need_s_bar: bool = True
) -> Ingredients:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    rescaled = rescale_metric(model, deformation)
    parts = _parallel.concat(
        lambda p: _ingredients_chunk(model, deformation, rescaled, need_s_bar, p), pts, chunk=1024
    )
    has_u = deformation.u is not None
    return Ingredients(
        model.dimension, *parts[:9], parts[9] if has_u else None, parts[10] if has_u else None
    )


def predicted_scalar_transform(model: ManifoldModel, deformation: ConformalDeformation, x):
    """s̄ from the transformation law: e^{-2σ}(s - 2(n-1)Δσ - (n-1)(n-2)|grad σ|²)."""
    arr = np.asarray(x, dtype=float)
    ing = ingredients(model, deformation, np.atleast_2d(arr), need_s_bar=False)
    n = model.dimension
    pred = np.exp(-2 * ing.sigma) * (
        ing.s - 2 * (n - 1) * ing.lap_sigma - (n - 1) * (n - 2) * ing.grad_sigma_sq
    )
    return float(pred[0]) if arr.ndim == 1 else pred


# ---------------------------------------------------------------------------
# Identities
# ---------------------------------------------------------------------------


def _terms(identity: IdentityId, ing: Ingredients):
    """(residual, predicted_gap, largest participating term magnitude)."""
    n = ing.n
    s, sb = ing.s, ing.s_bar
    e2s = np.exp(2 * ing.sigma)
    lam, lap_l, gl2, lap_l2 = ing.lam, ing.lap_lam, ing.grad_lam_sq, ing.lap_lam_sq
    zero = np.zeros_like(s)
    if identity in (IdentityId.EQ_2_1, IdentityId.EQ_2_2):
        rescaled, lap_term = e2s * sb, 2 * (n - 1) * ing.lap_sigma
        grad_term = (n - 1) * (n - 2) * ing.grad_sigma_sq
        if identity is IdentityId.EQ_2_1:
            res = rescaled - (s - lap_term - grad_term)
        else:
            res = lap_term - (s - rescaled - grad_term)
        return res, zero, [rescaled, s, lap_term, grad_term]
    curv = lam**2 * (s - lam**2 * sb)
    if identity is IdentityId.EQ_2_3:
        terms = [2 * (n - 1) * lam * lap_l, curv, (n - 1) * (n - 4) * gl2]
        return terms[0] - (terms[1] - terms[2]), zero, terms
    if identity is IdentityId.LAP_SQUARE_PAPER:
        terms = [lap_l2, 2 * lam * lap_l, gl2]
        return lap_l2 - (2 * lam * lap_l + gl2), gl2, terms
    if identity is IdentityId.LAP_SQUARE_CORRECTED:
        terms = [lap_l2, 2 * lam * lap_l, 2 * gl2]
        return lap_l2 - 2 * lam * lap_l - 2 * gl2, zero, terms
    if identity is IdentityId.EQ_2_4_PAPER:
        terms = [(n - 1) * lap_l2, curv, (n - 1) * (n - 5) * gl2]
        return terms[0] - (terms[1] - terms[2]), (n - 1) * gl2, terms
    if identity is IdentityId.EQ_2_4_CORRECTED:
        terms = [(n - 1) * lap_l2, curv, (n - 1) * (n - 6) * gl2]
        return terms[0] - terms[1] + terms[2], zero, terms
    if identity in (IdentityId.EQ_2_5, IdentityId.EQ_2_6):
        u, lap_u = ing.u, ing.lap_u
        lhs = 4 * (n - 1) / (n - 2) * lap_u
        if identity is IdentityId.EQ_2_5:
            terms = [lhs, s * u, sb * u ** ((n + 2) / (n - 2))]
            return lhs - (terms[1] - terms[2]), zero, terms
        terms = [lhs, u * s, u * lam**2 * sb]
        return lhs - u * (s - lam**2 * sb), zero, terms
    if identity is IdentityId.EQ_3_1:
        terms = [ing.lap_sigma, (n - 2) / 2 * ing.grad_sigma_sq]
        return terms[0] + terms[1], zero, terms
    if identity is IdentityId.EQ_3_2_PAPER:
        terms = [2 * lam * lap_l, (n - 4) * gl2]
        return terms[0] - terms[1], -2 * (n - 4) * gl2, terms
    if identity is IdentityId.EQ_3_2_DERIVED:
        terms = [2 * lam * lap_l, (4 - n) * gl2]
        return terms[0] - terms[1], zero, terms
    raise ConformalError(f"unknown identity {identity!r}")


def _needs_s_bar(identity: IdentityId) -> bool:
    return identity not in (
        IdentityId.LAP_SQUARE_PAPER,
        IdentityId.LAP_SQUARE_CORRECTED,
        IdentityId.EQ_3_1,
        IdentityId.EQ_3_2_PAPER,
        IdentityId.EQ_3_2_DERIVED,
    )


def check_admissible(identity: IdentityId, n: int) -> None:
    identity = IdentityId(identity)
    minimum = 3 if identity in NEEDS_N3 else 2
    if n < minimum:
        raise ConformalError(f"{identity} needs n >= {minimum}, got n={n}")


def identity_terms(identity, model, deformation, points, ing: Ingredients | None = None):
    """Pointwise (residual, predicted gap, term scale) arrays."""
    identity = IdentityId(identity)
    check_admissible(identity, model.dimension)
    if ing is None:
        ing = ingredients(model, deformation, points, need_s_bar=_needs_s_bar(identity))
    res, gap, terms = _terms(identity, ing)
    scale = np.max(np.abs(np.stack(terms)), axis=0)
    return res, gap, scale


def identity_residual(identity, model: ManifoldModel, deformation: ConformalDeformation, x):
    """LHS - RHS of one identity at a point (or batch)."""
    arr = np.asarray(x, dtype=float)
    res, _, _ = identity_terms(identity, model, deformation, np.atleast_2d(arr))
    return float(res[0]) if arr.ndim == 1 else res


@dataclass(frozen=True)
class IdentityReport:
    id: IdentityId
    n: int
    grid_size: int
    max_abs_residual: float
    mean_abs_residual: float
    predicted_gap_max: float | None
    verdict: str  # holds | fails_as_predicted | fails_unexpectedly
    tolerance: float
    max_gap_deviation: float | None = None


def identity_report(
    identity,
    model: ManifoldModel,
    deformation: ConformalDeformation,
    grid: Grid,
    tol: float = IDENTITY_TOL,
    ing: Ingredients | None = None,
) -> IdentityReport:
    """Residual statistics over a grid.

    A point passes when ``|r| <= tol * (1 + largest term)``; ``*_PAPER`` ids whose
    residual tracks the predicted gap pointwise within ``tol * (1 + max gap)`` are
    reported as ``fails_as_predicted``.
    """
    identity = IdentityId(identity)
    res, gap, scale = identity_terms(identity, model, deformation, grid.points, ing)
    abs_res = np.abs(res)
    max_abs = float(abs_res.max())
    mean_abs = _parallel.ordered_sum(abs_res) / abs_res.size
    bad = ~np.isfinite(res)
    gap_max = float(np.abs(gap).max()) if identity in PAPER_IDS else None
    deviation = None
    if bad.any():
        verdict = "fails_unexpectedly"
    elif np.all(abs_res <= tol * (1.0 + scale)):
        verdict = "holds"
    elif gap_max is not None:
        deviation = float(np.abs(res - gap).max())
        ok = deviation <= tol * (1.0 + gap_max) and abs(max_abs - gap_max) <= tol * (1.0 + gap_max)
        verdict = "fails_as_predicted" if ok else "fails_unexpectedly"
    else:
        verdict = "fails_unexpectedly"
    return IdentityReport(identity, model.dimension, len(grid), max_abs, mean_abs, gap_max, verdict, tol, deviation)


# ---------------------------------------------------------------------------
# Mapping classification
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MappingClass:
    tag: str  # isometric | homothetic | conformal_nonhomothetic
    sigma_spread: float
    sigma_absmax: float

    @property
    def homothetic(self) -> bool:
        return self.tag in ("isometric", "homothetic")


def classify_sigma_values(values: np.ndarray, tol: float) -> MappingClass:
    values = np.asarray(values, dtype=float)
    spread = float(values.max() - values.min())
    absmax = float(np.abs(values).max())
    if absmax <= tol:
        tag = "isometric"
    elif spread <= tol:
        tag = "homothetic"
    else:
        tag = "conformal_nonhomothetic"
    return MappingClass(tag, spread, absmax)


def classify_mapping(deformation: ConformalDeformation, grid: Grid, tol: float = IDENTITY_TOL) -> MappingClass:
    if len(grid) == 0:
        raise ValueError("grid is empty")
    return classify_sigma_values(deformation.sigma(grid.points), tol)


def conharmonic_density_check(model: ManifoldModel, deformation: ConformalDeformation, points) -> np.ndarray:
    """Δu for u = e^{(n-2)σ/2}; vanishes exactly where σ is conharmonic."""
    ing = ingredients(model, deformation, points, need_s_bar=False)
    return ing.lap_u

