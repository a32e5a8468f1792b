"""Integral hypotheses estimated on nested exhaustions of the chart.

A chart can only stand in for a complete manifold, so the verdicts here are
heuristics. ``finite`` means the last two relative increments of the partial
integrals are tiny; ``diverging`` means the increments stopped shrinking;
anything else is ``inconclusive``. On fully periodic (closed) charts there is
nothing to exhaust and every stage integrates the whole torus.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _parallel
from .calculus import _phi_jet
from .expr import ExpressionDomainError, ScalarExpression
from .geometry import Chart, ManifoldModel, grid, inverse_and_density, metric_jets

FINITE_INCREMENT = 1e-3
DIVERGENCE_RATIO = 0.5
DEFAULT_STAGES = 6
DEFAULT_POINTS = 41


def geometric_stages(count: int = DEFAULT_STAGES, first: float = 0.2, last: float = 1.0) -> tuple[float, ...]:
    if count < 3:
        raise ValueError("need at least three exhaustion stages")
    ratio = (last / first) ** (1.0 / (count - 1))
    stages = [first * ratio**k for k in range(count - 1)] + [last]
    return tuple(stages)


@dataclass(frozen=True)
class ExhaustionSpec:
    stages: tuple[float, ...] = field(default_factory=geometric_stages)
    points_per_axis: int = DEFAULT_POINTS

    def __post_init__(self):
        st = self.stages
        if len(st) < 3:
            raise ValueError("need at least three exhaustion stages")
        if not all(0 < a < b for a, b in zip(st, st[1:])) or not 0 < st[0] or st[-1] > 1:
            raise ValueError("exhaustion stages must increase strictly within (0, 1]")


@dataclass(frozen=True)
class IntegrabilityReport:
    quantity: str
    p: float
    partials: tuple[float, ...]
    verdict: str  # finite | diverging | inconclusive
    extrapolated_value: float | None = None
    non_finite: bool = False
    declared_infinite_volume: bool = False

    @property
    def last(self) -> float:
        return self.partials[-1]


def classify_partials(partials) -> tuple[str, float | None]:
    parts = np.asarray(partials, dtype=float)
    d = np.diff(parts)
    scale = np.maximum(np.abs(parts[1:]), np.finfo(float).tiny)
    rel = np.abs(d) / scale
    if np.all(parts == 0) or (rel[-1] <= FINITE_INCREMENT and rel[-2] <= FINITE_INCREMENT):
        return "finite", _extrapolate(parts)
    d1, d2, d3 = d[-3], d[-2], d[-1]
    if d1 > 0 and d2 >= DIVERGENCE_RATIO * d1 and d3 >= DIVERGENCE_RATIO * d2:
        return "diverging", None
    return "inconclusive", None


def _extrapolate(parts: np.ndarray) -> float:
    """Aitken-style tail estimate from the last two increments."""
    last = float(parts[-1])
    d_prev, d_last = parts[-2] - parts[-3], parts[-1] - parts[-2]
    if d_prev != 0 and 0 < d_last / d_prev < 1:
        q = d_last / d_prev
        return last + float(d_last * q / (1 - q))
    return last


def default_points(n: int, max_nodes: int = 200_000, cap: int = DEFAULT_POINTS) -> int:
    """Largest odd count <= cap whose n-dimensional grid stays under max_nodes."""
    m = cap if cap % 2 else cap - 1
    while m > 3 and m**n > max_nodes:
        m -= 2
    return m


def stage_masks(chart: Chart, points: np.ndarray, stages) -> list[np.ndarray]:
    """Membership of grid nodes in each nested stage box (periodic axes never shrink)."""
    free = ~np.asarray(chart.periodic)
    offset = np.abs(points - np.asarray(chart.center))[:, free]
    masks = []
    for t in stages:
        if not free.any():
            masks.append(np.ones(points.shape[0], dtype=bool))
        else:
            masks.append(np.all(offset <= t * chart.half_width * (1 + 1e-12), axis=1))
    return masks


def _report(model, quantity, p, exhaustion: ExhaustionSpec | None, integrand) -> IntegrabilityReport:
    """One midpoint grid over the whole chart; stage k sums the nodes inside its
    box, so partials of a non-negative integrand are exactly non-decreasing."""
    exhaustion = exhaustion or ExhaustionSpec(points_per_axis=default_points(model.dimension))
    g = grid(model.chart, exhaustion.points_per_axis)

    def chunk(pts):
        mj = metric_jets(model, pts, order=0)
        ginv, density = inverse_and_density(mj.g)
        return integrand(pts, ginv) * density

    try:
        values = _parallel.concat(chunk, g.points) * g.weights
    except ExpressionDomainError:
        values = np.full(len(g), math.inf)
    partials = []
    for mask in stage_masks(model.chart, g.points, exhaustion.stages):
        vals = values[mask]
        partials.append(_parallel.ordered_sum(vals) if np.all(np.isfinite(vals)) else math.inf)
    if not all(math.isfinite(v) for v in partials):
        return IntegrabilityReport(
            quantity, p, tuple(partials), "diverging", None, True, model.declared_infinite_volume
        )
    verdict, extrapolated = classify_partials(partials)
    return IntegrabilityReport(
        quantity, p, tuple(partials), verdict, extrapolated, False, model.declared_infinite_volume
    )


def lp_report(
    model: ManifoldModel, phi: ScalarExpression, p: float, exhaustion: ExhaustionSpec | None = None,
    quantity: str | None = None,
) -> IntegrabilityReport:
    """Partial integrals of |φ|^p dVol over nested boxes."""
    if not p >= 1:
        raise ValueError("p must be >= 1")

    def integrand(pts, ginv):
        (values,) = _phi_jet(phi, pts, 0)
        return np.abs(values) ** p

    return _report(model, quantity or str(phi), float(p), exhaustion, integrand)


def grad_l1_report(
    model: ManifoldModel, phi: ScalarExpression, exhaustion: ExhaustionSpec | None = None, p: float = 1.0
) -> IntegrabilityReport:
    """Partial integrals of ‖grad φ‖^p (p = 1 for the L¹ hypothesis)."""

    def integrand(pts, ginv):
        _, grad = _phi_jet(phi, pts, 1)
        norm_sq = np.maximum(np.einsum("ni,nij,nj->n", grad, ginv, grad), 0.0)
        return np.sqrt(norm_sq) ** p

    return _report(model, f"‖grad {phi}‖", float(p), exhaustion, integrand)


def volume_report(model: ManifoldModel, exhaustion: ExhaustionSpec | None = None) -> IntegrabilityReport:
    def integrand(pts, ginv):
        return np.ones(pts.shape[0])

    return _report(model, "volume", 1.0, exhaustion, integrand)
