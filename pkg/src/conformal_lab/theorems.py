"""Hypothesis/conclusion verdicts for the Liouville-type statements.

A theorem is universally quantified, so numerics can do two things on a
concrete instance: confirm the conclusion where every hypothesis holds, or
locate the hypothesis that fails. The vocabulary mirrors that:

* hypotheses are ``verified_numerically``, ``declared`` (completeness,
  smoothness: never upgraded to verified), ``violated`` (always with a witness
  point) or ``inconclusive``;
* a verdict is ``not_applicable`` when something is violated, ``inconclusive``
  when something could not be settled, otherwise ``holds_on_grid`` or
  ``CONTRADICTION``. The last one is a tripwire: it means a bug or a genuine
  counterexample.

Integral hypotheses come from chart exhaustions. A diverging exhaustion on a
bounded chart proves nothing about the manifold, so it yields
``inconclusive``, never ``violated``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import cached_property

import numpy as np

from . import _parallel
from .calculus import HARMONIC_TOL, classify_harmonicity, laplace_beltrami
from .conformal import (
    IDENTITY_TOL,
    ConformalDeformation,
    IdentityId,
    classify_sigma_values,
    identity_terms,
    ingredients,
)
from .curvature import curvature_batch, ricci_eigenvalues
from .expr import ScalarExpression
from .geometry import Grid, ManifoldModel, grid, inverse_and_density, metric_jets
from .integrability import ExhaustionSpec, IntegrabilityReport, grad_l1_report, lp_report


class TheoremId(str, Enum):
    LEMMA = "LEMMA"
    T1 = "T1"
    T2 = "T2"
    T3 = "T3"
    T4 = "T4"
    T5 = "T5"
    C1 = "C1"
    C2 = "C2"
    C3 = "C3"
    C4 = "C4"
    C5 = "C5"
    C6 = "C6"

    def __str__(self) -> str:
        return self.value


VERIFIED = "verified_numerically"
DECLARED = "declared"
VIOLATED = "violated"
INCONCLUSIVE = "inconclusive"
_RANK = {VIOLATED: 0, INCONCLUSIVE: 1, DECLARED: 2, VERIFIED: 3}

HOLDS = "holds_on_grid"
NOT_APPLICABLE = "not_applicable"
CONTRADICTION = "CONTRADICTION"

_ADMISSIBLE = {
    TheoremId.LEMMA: lambda n: n >= 2,
    TheoremId.T1: lambda n: n >= 3,
    TheoremId.C1: lambda n: n >= 3,
    TheoremId.T2: lambda n: n in (3, 4),
    TheoremId.C2: lambda n: n in (3, 4),
    TheoremId.T3: lambda n: n == 5,
    TheoremId.C3: lambda n: n == 5,
    TheoremId.T4: lambda n: n >= 3,
    TheoremId.C4: lambda n: n >= 3,
    TheoremId.C5: lambda n: n >= 3,
    TheoremId.C6: lambda n: n >= 4,
    TheoremId.T5: lambda n: n == 4,
}
_DIM_TEXT = {
    TheoremId.LEMMA: "n >= 2", TheoremId.T2: "n in {3, 4}", TheoremId.C2: "n in {3, 4}",
    TheoremId.T3: "n = 5", TheoremId.C3: "n = 5", TheoremId.C6: "n >= 4", TheoremId.T5: "n = 4",
}


class TheoremError(ValueError):
    pass


@dataclass(frozen=True)
class HypothesisRecord:
    name: str
    status: str
    evidence: str
    value: float | None = None
    witness: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.status == VIOLATED and self.witness is None:
            raise ValueError("violated hypotheses need a witness point")

    @property
    def satisfied(self) -> bool:
        return self.status in (VERIFIED, DECLARED)


@dataclass(frozen=True)
class TheoremVerdict:
    id: TheoremId
    n: int
    hypotheses: tuple[HypothesisRecord, ...]
    conclusion_status: str
    conclusion_evidence: dict
    notes: tuple[str, ...] = ()

    def hypothesis(self, name: str) -> HypothesisRecord:
        for h in self.hypotheses:
            if h.name == name:
                return h
        raise KeyError(name)


@dataclass
class Scenario:
    """Ingredients for one theorem check."""

    model: ManifoldModel
    deformation: ConformalDeformation | None = None
    phi: ScalarExpression | None = None
    p_values: tuple[float, ...] = (2.0,)
    grid_points: int = 7
    tol_identity: float = IDENTITY_TOL
    tol_class: float = HARMONIC_TOL
    exhaustion: ExhaustionSpec | None = None


class _Context:
    """Lazily computed, shared grid quantities for one scenario."""

    def __init__(self, sc: Scenario):
        self.sc = sc
        self.model = sc.model
        self.n = sc.model.dimension

    @cached_property
    def grid(self) -> Grid:
        return grid(self.model.chart, self.sc.grid_points)

    @property
    def points(self) -> np.ndarray:
        return self.grid.points

    @cached_property
    def ing(self):
        return ingredients(self.model, self._deformation(), self.points, need_s_bar=True)

    def _deformation(self) -> ConformalDeformation:
        if self.sc.deformation is None:
            raise TheoremError("scenario has no deformation")
        return self.sc.deformation

    @property
    def deformation(self) -> ConformalDeformation:
        return self._deformation()

    def witness(self, k: int) -> tuple[float, ...]:
        return tuple(float(v) for v in self.points[k])

    # hypothesis builders -------------------------------------------------

    def nonpositive(self, name: str, values, scale, tol: float) -> HypothesisRecord:
        """Pointwise ``values <= 0`` up to tol * (1 + scale)."""
        values = np.asarray(values, dtype=float)
        excess = values - tol * (1.0 + np.abs(scale))
        k = int(np.argmax(excess))
        worst = float(values.max())
        if excess[k] <= 0:
            return HypothesisRecord(name, VERIFIED, f"max over grid {worst:.3e} <= tol", worst)
        return HypothesisRecord(name, VIOLATED, f"max over grid {worst:.3e} > tol", worst, self.witness(k))

    def completeness(self) -> HypothesisRecord:
        name = "complete connected manifold"
        if self.model.declared_complete:
            return HypothesisRecord(name, DECLARED, f"declared by model {self.model.name}")
        center = tuple(float(c) for c in self.model.chart.center)
        return HypothesisRecord(name, VIOLATED, "model declares itself incomplete", None, center)

    def smoothness(self, what: str) -> HypothesisRecord:
        return HypothesisRecord(f"{what} is C^2 on M", DECLARED, "closed-form expression; global extent declared")

    def integral(self, name: str, reports: list[IntegrabilityReport], existential: bool) -> HypothesisRecord:
        parts = [f"p={r.p:g}: {r.verdict} (partial {r.last:.4g})" for r in reports]
        text = "; ".join(parts)
        if existential:
            text += " [existential in p; only listed p values were checked]"
        finite = [r for r in reports if r.verdict == "finite"]
        if finite:
            return HypothesisRecord(name, VERIFIED, text, finite[0].extrapolated_value)
        return HypothesisRecord(name, INCONCLUSIVE, text)

    def p_list(self, lower_open: float = 1.0) -> list[float]:
        ps = sorted({float(p) for p in self.sc.p_values if p > lower_open})
        return ps

    def lp(self, expr: ScalarExpression, exponents) -> list[IntegrabilityReport]:
        return [lp_report(self.model, expr, p, self.sc.exhaustion) for p in exponents]

    def grad_l1(self, expr: ScalarExpression) -> IntegrabilityReport:
        return grad_l1_report(self.model, expr, self.sc.exhaustion)

    # conclusion helpers ---------------------------------------------------

    @cached_property
    def mapping(self):
        return classify_sigma_values(self.ing.sigma, self.sc.tol_class)

    def curvature_zero(self) -> tuple[bool, dict]:
        s_max = float(np.abs(self.ing.s).max())
        sb_max = float(np.abs(self.ing.s_bar).max())
        ok = s_max <= self.sc.tol_identity and sb_max <= self.sc.tol_identity
        return ok, {"max|s|": s_max, "max|s_bar|": sb_max}


def _alternative(name: str, branches: list[list[HypothesisRecord]]) -> tuple[HypothesisRecord, list[bool]]:
    """Combine alternative hypothesis groups: the best branch decides."""
    statuses = []
    for branch in branches:
        statuses.append(min((h.status for h in branch), key=_RANK.__getitem__))
    best = max(range(len(branches)), key=lambda i: _RANK[statuses[i]])
    text = " | ".join(
        f"branch {i + 1}: " + ", ".join(f"{h.name}={h.status}" for h in b) for i, b in enumerate(branches)
    )
    witness = None
    if statuses[best] == VIOLATED:
        witness = next(h.witness for h in branches[best] if h.status == VIOLATED)
    ok = [_RANK[s] >= _RANK[DECLARED] for s in statuses]
    return HypothesisRecord(name, statuses[best], text, None, witness), ok


def _finish(tid, ctx: _Context, hyps: list[HypothesisRecord], conclusion, notes=()) -> TheoremVerdict:
    """``conclusion`` is a callable returning (holds, evidence)."""
    statuses = [h.status for h in hyps]
    evidence: dict = {}
    if VIOLATED in statuses:
        status = NOT_APPLICABLE
    elif INCONCLUSIVE in statuses:
        status = INCONCLUSIVE
    else:
        holds, evidence = conclusion()
        status = HOLDS if holds else CONTRADICTION
    return TheoremVerdict(TheoremId(tid), ctx.n, tuple(hyps), status, evidence, tuple(notes))


def _mapping_evidence(ctx: _Context) -> dict:
    m = ctx.mapping
    return {"mapping": m.tag, "sigma_spread": m.sigma_spread, "sigma_absmax": m.sigma_absmax}


# ---------------------------------------------------------------------------
# Individual statements
# ---------------------------------------------------------------------------


def _lemma(ctx: _Context) -> TheoremVerdict:
    sc = ctx.sc
    phi = sc.phi if sc.phi is not None else ctx.deformation.sigma
    cls = classify_harmonicity(ctx.model, phi, ctx.grid, sc.tol_class)
    name = "phi superharmonic (on sampled grid)"
    if cls.tag in ("superharmonic", "harmonic"):
        superh = HypothesisRecord(name, VERIFIED, f"{cls.tag}; max Δφ = {cls.witness_max:.3e}", cls.witness_max)
    else:
        superh = HypothesisRecord(
            name, VIOLATED, f"{cls.tag}; max Δφ = {cls.witness_max:.3e}", cls.witness_max, ctx.witness(cls.argmax)
        )
    values = phi(ctx.points)
    branch_a = [ctx.integral("‖grad φ‖ in L1", [ctx.grad_l1(phi)], False)]
    branch_b = [
        ctx.nonpositive("phi <= 0", values, values, sc.tol_class),
        ctx.integral("phi in L^p, 1<p<inf", ctx.lp(phi, ctx.p_list()), True),
    ]
    alt, ok = _alternative("integrability (L1 gradient | non-positive L^p)", [branch_a, branch_b])
    hyps = [ctx.completeness(), ctx.smoothness("phi"), superh, alt]

    def conclusion():
        evidence = {"laplacian_class": cls.label, "max|Δφ|": max(abs(cls.witness_min), abs(cls.witness_max))}
        holds = True
        if ok[0]:
            holds &= cls.tag == "harmonic"
        if ok[1]:
            spread = float(values.max() - values.min())
            evidence["phi_spread"] = spread
            holds &= spread <= sc.tol_class
            if ctx.model.declared_infinite_volume:
                absmax = float(np.abs(values).max())
                evidence["phi_absmax"] = absmax
                holds &= absmax <= sc.tol_class
        return bool(holds), evidence

    notes = ["second part concerns non-positive superharmonic functions only, as stated"]
    return _finish(TheoremId.LEMMA, ctx, hyps, conclusion, notes)


def _sigma_alternative(ctx: _Context):
    sc = ctx.sc
    sigma = ctx.deformation.sigma
    branch_a = [ctx.integral("‖grad σ‖ in L1", [ctx.grad_l1(sigma)], False)]
    branch_b = [
        ctx.nonpositive("sigma <= 0", ctx.ing.sigma, ctx.ing.sigma, sc.tol_identity),
        ctx.integral("sigma in L^p, 1<p<inf", ctx.lp(sigma, ctx.p_list()), True),
    ]
    return _alternative("integrability (L1 gradient | non-positive L^p)", [branch_a, branch_b])


def _homothety_conclusion(ctx: _Context, require_isometry: bool = False, curvature_zero: bool = False):
    def conclusion():
        evidence = _mapping_evidence(ctx)
        holds = ctx.mapping.homothetic
        if require_isometry:
            holds &= ctx.mapping.tag == "isometric"
            evidence["isometry_required"] = True
        if curvature_zero:
            ok, ev = ctx.curvature_zero()
            evidence.update(ev)
            holds &= ok
        return bool(holds), evidence

    return conclusion


def _t1_c1(tid: TheoremId, ctx: _Context) -> TheoremVerdict:
    ing, tol = ctx.ing, ctx.sc.tol_identity
    e2s_sb = np.exp(2 * ing.sigma) * ing.s_bar
    hyps = [ctx.completeness(), ctx.smoothness("sigma")]
    if tid is TheoremId.T1:
        hyps.append(ctx.nonpositive("s <= e^{2σ} s_bar", ing.s - e2s_sb, np.maximum(abs(ing.s), abs(e2s_sb)), tol))
    else:
        hyps.append(ctx.nonpositive("s <= 0", ing.s, ing.s, tol))
        hyps.append(ctx.nonpositive("s_bar >= 0", -ing.s_bar, ing.s_bar, tol))
    alt, ok = _sigma_alternative(ctx)
    hyps.append(alt)
    notes = []
    isometry = ok[1] and ctx.model.declared_infinite_volume
    if isometry:
        notes.append("non-positive L^p branch with declared infinite volume: isometry expected")
    conclusion = _homothety_conclusion(ctx, require_isometry=isometry, curvature_zero=tid is TheoremId.C1)
    return _finish(tid, ctx, hyps, conclusion, notes)


def _lambda_sign_hyps(tid: TheoremId, ctx: _Context, corollary: bool) -> list[HypothesisRecord]:
    ing, tol = ctx.ing, ctx.sc.tol_identity
    hyps = [ctx.completeness(), ctx.smoothness("lambda")]
    if corollary:
        hyps.append(ctx.nonpositive("s >= 0", -ing.s, ing.s, tol))
        hyps.append(ctx.nonpositive("s_bar <= 0", ing.s_bar, ing.s_bar, tol))
    else:
        l2sb = ing.lam**2 * ing.s_bar
        hyps.append(ctx.nonpositive("s >= λ² s_bar", l2sb - ing.s, np.maximum(abs(ing.s), abs(l2sb)), tol))
    return hyps


def _t2_c2(tid: TheoremId, ctx: _Context) -> TheoremVerdict:
    corollary = tid is TheoremId.C2
    hyps = _lambda_sign_hyps(tid, ctx, corollary)
    hyps.append(ctx.integral("lambda in L^p, p != 1", ctx.lp(ctx.deformation.lam, ctx.p_list()), True))
    return _finish(tid, ctx, hyps, _homothety_conclusion(ctx, curvature_zero=corollary))


def _t3_c3(tid: TheoremId, ctx: _Context) -> TheoremVerdict:
    corollary = tid is TheoremId.C3
    hyps = _lambda_sign_hyps(tid, ctx, corollary)
    exponents = [2 * p for p in ctx.p_list()]
    hyps.append(ctx.integral("lambda in L^{2p}, 1<p<inf", ctx.lp(ctx.deformation.lam, exponents), True))
    notes = []
    if not corollary:
        notes.append(
            "statement also claims s = s_bar = 0 without sign hypotheses; only homothety is checked here "
            "(the full conclusion is checked under C3)"
        )
    return _finish(tid, ctx, hyps, _homothety_conclusion(ctx, curvature_zero=corollary), notes)


def _t4_c4(tid: TheoremId, ctx: _Context) -> TheoremVerdict:
    corollary = tid is TheoremId.C4
    hyps = _lambda_sign_hyps(tid, ctx, corollary)
    hyps.append(ctx.integral("lambda^{(n-2)/2} in L^p, p != 1", ctx.lp(ctx.deformation.u, ctx.p_list()), True))
    return _finish(tid, ctx, hyps, _homothety_conclusion(ctx, curvature_zero=corollary))


def _conharmonic(ctx: _Context) -> HypothesisRecord:
    res, _, scale = identity_terms(IdentityId.EQ_3_1, ctx.model, ctx.deformation, ctx.points, ctx.ing)
    tol = ctx.sc.tol_identity
    excess = np.abs(res) - tol * (1.0 + scale)
    k = int(np.argmax(excess))
    worst = float(np.abs(res).max())
    name = "conharmonic: Δσ = -(n-2)/2 ‖grad σ‖²"
    if excess[k] <= 0:
        return HypothesisRecord(name, VERIFIED, f"max |residual| {worst:.3e}", worst)
    return HypothesisRecord(name, VIOLATED, f"max |residual| {worst:.3e}", worst, ctx.witness(k))


def _c5(ctx: _Context) -> TheoremVerdict:
    hyps = [ctx.completeness(), ctx.smoothness("sigma"), _conharmonic(ctx)]
    hyps.append(ctx.integral("‖grad σ‖ in L1", [ctx.grad_l1(ctx.deformation.sigma)], False))
    return _finish(TheoremId.C5, ctx, hyps, _homothety_conclusion(ctx))


def _c6(ctx: _Context) -> TheoremVerdict:
    hyps = [ctx.completeness(), ctx.smoothness("lambda"), _conharmonic(ctx)]
    hyps.append(ctx.integral("lambda in L^p, p != 1", ctx.lp(ctx.deformation.lam, ctx.p_list()), True))
    notes = ["conharmonicity checked through σ; λ then satisfies 2λΔλ = (4-n)‖grad λ‖²"]
    return _finish(TheoremId.C6, ctx, hyps, _homothety_conclusion(ctx), notes)


def _t5(ctx: _Context) -> TheoremVerdict:
    hyps = [ctx.completeness(), ctx.smoothness("sigma"), _conharmonic(ctx)]
    batch = curvature_batch(ctx.model, ctx.points, full=False)
    eig = ricci_eigenvalues(batch.g, batch.ricci)[:, 0]
    k = int(np.argmin(eig))
    low = float(eig[k])
    name = "Ric >= 0"
    if low >= -ctx.sc.tol_identity:
        hyps.append(HypothesisRecord(name, VERIFIED, f"min Ricci eigenvalue {low:.3e}", low))
    else:
        hyps.append(HypothesisRecord(name, VIOLATED, f"min Ricci eigenvalue {low:.3e}", low, ctx.witness(k)))
    return _finish(TheoremId.T5, ctx, hyps, _homothety_conclusion(ctx))


_DISPATCH = {
    TheoremId.LEMMA: _lemma,
    TheoremId.T1: lambda c: _t1_c1(TheoremId.T1, c),
    TheoremId.C1: lambda c: _t1_c1(TheoremId.C1, c),
    TheoremId.T2: lambda c: _t2_c2(TheoremId.T2, c),
    TheoremId.C2: lambda c: _t2_c2(TheoremId.C2, c),
    TheoremId.T3: lambda c: _t3_c3(TheoremId.T3, c),
    TheoremId.C3: lambda c: _t3_c3(TheoremId.C3, c),
    TheoremId.T4: lambda c: _t4_c4(TheoremId.T4, c),
    TheoremId.C4: lambda c: _t4_c4(TheoremId.C4, c),
    TheoremId.C5: _c5,
    TheoremId.C6: _c6,
    TheoremId.T5: _t5,
}


def check_admissible(tid, n: int) -> TheoremId:
    tid = TheoremId(tid)
    if not _ADMISSIBLE[tid](n):
        raise TheoremError(f"{tid} requires {_DIM_TEXT.get(tid, 'n >= 3')}, got n={n}")
    return tid


def check(tid, scenario: Scenario) -> TheoremVerdict:
    tid = check_admissible(tid, scenario.model.dimension)
    if tid is not TheoremId.LEMMA and scenario.deformation is None:
        raise TheoremError(f"{tid} needs a conformal deformation")
    if tid is TheoremId.LEMMA and scenario.deformation is None and scenario.phi is None:
        raise TheoremError("LEMMA needs a function (phi or sigma)")
    if scenario.deformation is not None and scenario.deformation.n != scenario.model.dimension:
        raise TheoremError("deformation dimension does not match model")
    return _DISPATCH[tid](_Context(scenario))


def closed_manifold_divergence_check(model: ManifoldModel, phi: ScalarExpression, grid_: Grid) -> float:
    """∫ Δφ dVol over a closed (fully periodic) chart; zero for smooth φ."""
    if not model.chart.all_periodic:
        raise TheoremError("divergence check needs every axis periodic")
    lap = laplace_beltrami(model, phi, grid_.points)
    _, density = inverse_and_density(metric_jets(model, grid_.points, order=0).g)
    return _parallel.ordered_sum(lap * density * grid_.weights)


def verdict_summary(v: TheoremVerdict) -> str:
    return "; ".join(f"{h.name}: {h.status}" for h in v.hypotheses)

