"""Coordinate charts, metric fields and the model-manifold zoo.

Completeness and volume finiteness cannot be decided from a single chart;
models *declare* them and downstream verdicts report them as declared.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import expr as ex
from .expr import ScalarExpression

# hyperbolic_ball box is shrunk so its half-diagonal is this fraction of the unit radius
HYPERBOLIC_CLIP = 0.9

ZOO_NAMES = ("euclidean", "sphere_stereographic", "hyperbolic_ball", "flat_torus", "custom")


class GeometryError(ValueError):
    pass


class NotPositiveDefiniteError(GeometryError):
    def __init__(self, minor: float, point_index: int | None = None):
        where = f" at point {point_index}" if point_index is not None else ""
        super().__init__(f"metric not positive definite{where}: smallest leading minor {minor:.6g}")
        self.minor = minor
        self.point_index = point_index


@dataclass(frozen=True)
class Chart:
    dimension: int
    center: tuple[float, ...]
    half_width: float
    periodic: tuple[bool, ...]

    def __post_init__(self):
        if self.dimension < 1:
            raise GeometryError("chart dimension must be positive")
        if not self.half_width > 0:
            raise GeometryError("half_width must be positive")
        if len(self.center) != self.dimension or len(self.periodic) != self.dimension:
            raise GeometryError("center and periodic must have one entry per axis")

    @property
    def lower(self) -> np.ndarray:
        return np.asarray(self.center, dtype=float) - self.half_width

    @property
    def upper(self) -> np.ndarray:
        return np.asarray(self.center, dtype=float) + self.half_width

    @property
    def all_periodic(self) -> bool:
        return all(self.periodic)

    def contains(self, points: np.ndarray, slack: float = 1e-12) -> np.ndarray:
        pts = np.atleast_2d(points)
        return np.all((pts >= self.lower - slack) & (pts <= self.upper + slack), axis=1)

    def scaled(self, t: float) -> "Chart":
        """Nested sub-box for exhaustion. Periodic axes are compact and stay whole,
        which is expressed by returning the same chart when every axis is periodic."""
        if self.all_periodic:
            return self
        return Chart(self.dimension, self.center, self.half_width * t, self.periodic)


@dataclass(frozen=True)
class MetricField:
    """Symmetric matrix of metric-entry expressions, optionally conformally flat."""

    entries: tuple[tuple[ScalarExpression, ...], ...]
    conformal_to_flat: ScalarExpression | None = None

    def __post_init__(self):
        n = len(self.entries)
        for i in range(n):
            if len(self.entries[i]) != n:
                raise GeometryError("metric entries must form a square matrix")
            for j in range(i):
                if self.entries[i][j].tree != self.entries[j][i].tree:
                    raise GeometryError(f"metric entries ({i + 1},{j + 1}) and ({j + 1},{i + 1}) differ")

    @property
    def dimension(self) -> int:
        return len(self.entries)

    @classmethod
    def conformally_flat(cls, sigma: ScalarExpression) -> "MetricField":
        n = sigma.arity
        factor = ex.exp(2 * sigma.tree)
        diag = ScalarExpression.from_tree(factor, n)
        zero = ScalarExpression.from_tree(ex.Num(0.0), n)
        rows = tuple(tuple(diag if i == j else zero for j in range(n)) for i in range(n))
        return cls(rows, sigma)

    @classmethod
    def flat(cls, n: int) -> "MetricField":
        one = ScalarExpression.from_tree(ex.Num(1.0), n)
        zero = ScalarExpression.from_tree(ex.Num(0.0), n)
        rows = tuple(tuple(one if i == j else zero for j in range(n)) for i in range(n))
        return cls(rows, ScalarExpression.from_tree(ex.Num(0.0), n))


@dataclass(frozen=True)
class ManifoldModel:
    name: str
    chart: Chart
    metric: MetricField
    declared_complete: bool
    declared_infinite_volume: bool
    known_scalar_curvature: ScalarExpression | None = None
    params: dict = field(default_factory=dict, compare=False)
    # flags copied from a base model through a conformal change, not re-declared
    flags_inherited: bool = False

    def __post_init__(self):
        n = self.chart.dimension
        if self.metric.dimension != n:
            raise GeometryError("metric dimension does not match chart")
        if self.known_scalar_curvature is not None and self.known_scalar_curvature.arity != n:
            raise GeometryError("known_scalar_curvature must have arity n")

    @property
    def dimension(self) -> int:
        return self.chart.dimension


# ---------------------------------------------------------------------------
# Metric evaluation
# ---------------------------------------------------------------------------


@dataclass
class MetricJets:
    """Metric and its coordinate derivatives over a batch of points.

    ``dg[:, k, i, j] = d_k g_ij`` and ``ddg[:, m, k, i, j] = d_m d_k g_ij``.
    """

    g: np.ndarray
    dg: np.ndarray | None
    ddg: np.ndarray | None


def metric_jets(model: ManifoldModel, points: np.ndarray, order: int = 2) -> MetricJets:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n_pts, n = pts.shape
    entries = model.metric.entries
    upper = [(i, j) for i in range(n) for j in range(i, n)]
    jets = ex.evaluate_many([entries[i][j] for i, j in upper], pts, order=order)
    g = np.zeros((n_pts, n, n))
    dg = np.zeros((n_pts, n, n, n)) if order >= 1 else None
    ddg = np.zeros((n_pts, n, n, n, n)) if order >= 2 else None
    for (i, j), jet in zip(upper, jets):
        g[:, i, j] = jet.value
        g[:, j, i] = g[:, i, j]
        if order >= 1 and jet.grad is not None:
            dg[:, :, i, j] = jet.grad
            dg[:, :, j, i] = jet.grad
        if order >= 2 and jet.hess is not None:
            ddg[:, :, :, i, j] = jet.hess
            ddg[:, :, :, j, i] = jet.hess
    bad = ~np.isfinite(g).all(axis=(1, 2))
    if bad.any():
        raise ex.ExpressionDomainError("non-finite metric entry", int(np.flatnonzero(bad)[0]))
    return MetricJets(g, dg, ddg)


def leading_minors(g: np.ndarray) -> np.ndarray:
    """Leading principal minors, shape (N, n)."""
    if g.ndim == 2:
        g = g[None]
    n = g.shape[-1]
    return np.stack([np.linalg.det(g[:, :k, :k]) for k in range(1, n + 1)], axis=1)


def check_spd(g: np.ndarray) -> None:
    """Raise NotPositiveDefiniteError for the first non-SPD matrix in the batch."""
    try:
        np.linalg.cholesky(g)
        return
    except np.linalg.LinAlgError:
        pass
    minors = leading_minors(g)
    bad = np.flatnonzero((minors <= 0).any(axis=1))
    idx = int(bad[0]) if bad.size else 0
    raise NotPositiveDefiniteError(float(minors[idx].min()), idx)


def inverse_and_density(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    check_spd(g)
    ginv = np.linalg.inv(g)
    density = np.sqrt(np.linalg.det(g))
    return ginv, density


def metric_at(model: ManifoldModel, point):
    """Metric matrix, its inverse and the volume density sqrt(det g) at one point
    (or an (N, n) batch)."""
    x = np.asarray(point, dtype=float)
    single = x.ndim == 1
    jets = metric_jets(model, np.atleast_2d(x), order=0)
    ginv, density = inverse_and_density(jets.g)
    if single:
        return jets.g[0], ginv[0], float(density[0])
    return jets.g, ginv, density


# ---------------------------------------------------------------------------
# Model zoo
# ---------------------------------------------------------------------------


def _radius_sq(n: int) -> ex.Node:
    tree: ex.Node = ex.Var(1) ** 2
    for k in range(2, n + 1):
        tree = tree + ex.Var(k) ** 2
    return tree


def _const(value: float, n: int) -> ScalarExpression:
    return ScalarExpression.from_tree(value, n)


def model_zoo(
    name: str,
    n: int,
    *,
    radius: float = 1.0,
    half_width: float | None = None,
    center: Sequence[float] | None = None,
    entries: Sequence[Sequence[str]] | None = None,
    periodic: Sequence[bool] | None = None,
    complete: bool = True,
    infinite_volume: bool = True,
    known_scalar_curvature: str | None = None,
) -> ManifoldModel:
    """Construct one of the catalogued model manifolds on a single chart."""
    if n < 2:
        raise GeometryError("dimension must be at least 2")
    origin = tuple(float(c) for c in center) if center is not None else (0.0,) * n
    params = {"radius": radius}

    if name == "euclidean":
        chart = Chart(n, origin, 1.0 if half_width is None else float(half_width), (False,) * n)
        return ManifoldModel(name, chart, MetricField.flat(n), True, True, _const(0.0, n), params)

    if name == "flat_torus":
        if center is not None or half_width is not None:
            raise GeometryError("flat_torus is fixed to [0,1)^n")
        chart = Chart(n, (0.5,) * n, 0.5, (True,) * n)
        return ManifoldModel(name, chart, MetricField.flat(n), True, False, _const(0.0, n), params)

    if name == "sphere_stereographic":
        if not radius > 0:
            raise GeometryError("sphere radius must be positive")
        r2 = float(radius) ** 2
        sigma = ScalarExpression.from_tree(ex.log(2.0 * r2 / (r2 + _radius_sq(n))), n)
        chart = Chart(n, origin, 1.0 if half_width is None else float(half_width), (False,) * n)
        s = _const(n * (n - 1) / r2, n)
        return ManifoldModel(name, chart, MetricField.conformally_flat(sigma), True, False, s, params)

    if name == "hyperbolic_ball":
        hw = HYPERBOLIC_CLIP / math.sqrt(n) if half_width is None else float(half_width)
        chart = Chart(n, origin, hw, (False,) * n)
        corner = np.abs(np.asarray(origin)) + hw
        if float(np.sqrt((corner**2).sum())) >= 1.0:
            raise GeometryError("hyperbolic_ball chart must lie inside the unit ball")
        sigma = ScalarExpression.from_tree(ex.log(2.0 / (1.0 - _radius_sq(n))), n)
        s = _const(-float(n * (n - 1)), n)
        return ManifoldModel(name, chart, MetricField.conformally_flat(sigma), True, True, s, params)

    if name == "custom":
        if entries is None:
            raise GeometryError("custom model needs metric entries")
        if len(entries) != n or any(len(row) != n for row in entries):
            raise GeometryError(f"custom metric must be {n}x{n}")
        parsed = [[ex.parse(str(entries[i][j]), n) for j in range(n)] for i in range(n)]
        for i in range(n):
            for j in range(i):
                if parsed[i][j].tree != parsed[j][i].tree:
                    raise GeometryError(f"custom metric not symmetric at ({i + 1},{j + 1})")
                parsed[i][j] = parsed[j][i]
        per = tuple(bool(p) for p in periodic) if periodic is not None else (False,) * n
        chart = Chart(n, origin, 1.0 if half_width is None else float(half_width), per)
        known = ex.parse(known_scalar_curvature, n) if known_scalar_curvature else None
        metric = MetricField(tuple(tuple(r) for r in parsed))
        return ManifoldModel(name, chart, metric, complete, infinite_volume, known, params)

    raise GeometryError(f"unknown model {name!r}; expected one of {', '.join(ZOO_NAMES)}")


def zoo_catalogue() -> list[dict]:
    """Static description of the catalogued models, in a stable order."""
    return [
        {"name": "euclidean", "dims": "n ≥ 2", "complete": "yes", "infinite_volume": "yes", "s": "0"},
        {"name": "sphere_stereographic", "dims": "n ≥ 2", "complete": "yes", "infinite_volume": "no",
         "s": "n(n−1)/r²"},
        {"name": "hyperbolic_ball", "dims": "n ≥ 2", "complete": "yes", "infinite_volume": "yes",
         "s": "−n(n−1)"},
        {"name": "flat_torus", "dims": "n ≥ 2", "complete": "yes", "infinite_volume": "no", "s": "0"},
        {"name": "custom", "dims": "n ≥ 2", "complete": "declared", "infinite_volume": "declared",
         "s": "computed"},
    ]


# ---------------------------------------------------------------------------
# Grids
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Grid:
    points: np.ndarray  # (N, n), lexicographic order (last axis fastest)
    weights: np.ndarray  # (N,)
    points_per_axis: int

    def __len__(self) -> int:
        return self.points.shape[0]


def grid(chart: Chart, points_per_axis: int) -> Grid:
    """Tensor-product midpoint grid (uniform nodes on periodic axes).

    Odd counts are required on any non-periodic axis so the chart centre is a node;
    fully periodic charts accept any count >= 3.
    """
    m = int(points_per_axis)
    if m != points_per_axis or m < 3:
        raise GeometryError("points_per_axis must be an integer >= 3")
    if m % 2 == 0 and not chart.all_periodic:
        raise GeometryError(f"points_per_axis must be odd, got {m}")
    axes = []
    widths = []
    for lo, per in zip(chart.lower, chart.periodic):
        h = 2.0 * chart.half_width / m
        k = np.arange(m, dtype=float)
        axes.append(lo + k * h if per else lo + (k + 0.5) * h)
        widths.append(h)
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([a.reshape(-1) for a in mesh], axis=1)
    weights = np.full(points.shape[0], float(np.prod(widths)))
    return Grid(points, weights, m)


def random_interior_points(chart: Chart, count: int, seed: int = 0, shrink: float = 0.95) -> np.ndarray:
    rng = np.random.default_rng(seed)
    u = rng.uniform(-1.0, 1.0, size=(count, chart.dimension))
    return np.asarray(chart.center) + shrink * chart.half_width * u
