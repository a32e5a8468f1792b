import numpy as np
import pytest
from helpers import hopf_analogue

from conformal_lab.conformal import ConformalDeformation
from conformal_lab.expr import parse
from conformal_lab.geometry import grid, model_zoo
from conformal_lab.theorems import (
    CONTRADICTION,
    DECLARED,
    INCONCLUSIVE,
    VERIFIED,
    VIOLATED,
    HypothesisRecord,
    Scenario,
    TheoremError,
    TheoremId,
    check,
    closed_manifold_divergence_check,
)

R3 = "x1^2 + x2^2 + x3^2"


def _check(tid, model, **kw):
    kind, text = next(iter(kw.items()))
    build = {"sigma": ConformalDeformation.from_sigma, "lam": ConformalDeformation.from_lambda}[kind]
    return check(tid, Scenario(model, build(text, model.dimension)))


def test_t1_homothety():
    v = _check("T1", model_zoo("euclidean", 3), sigma="0.7")
    assert v.conclusion_status == "holds_on_grid"
    assert all(h.status in (VERIFIED, DECLARED) for h in v.hypotheses)
    assert v.conclusion_evidence["mapping"] == "homothetic"


def test_t1_ball_factor_is_not_applicable_with_witness():
    v = _check("T1", model_zoo("euclidean", 3, half_width=0.5), sigma=f"log(2/(1 - ({R3})))")
    assert v.conclusion_status == "not_applicable"
    bad = v.hypothesis("s <= e^{2σ} s_bar")
    assert bad.status == VIOLATED and bad.witness is not None and bad.value > 0


def test_c1_torus_isometry():
    v = _check("C1", model_zoo("flat_torus", 3), sigma="0")
    assert v.conclusion_status == "holds_on_grid"
    assert v.conclusion_evidence["max|s|"] == 0.0 and v.conclusion_evidence["max|s_bar|"] == 0.0


def test_t5_torus_homothety():
    assert _check("T5", model_zoo("flat_torus", 4), sigma="0.3").conclusion_status == "holds_on_grid"


def test_t5_needs_nonnegative_ricci():
    assert _check("T5", model_zoo("hyperbolic_ball", 4), sigma="0").conclusion_status == "not_applicable"


def test_c5_nondecaying_gradient_is_inconclusive():
    v = _check("C5", model_zoo("euclidean", 3), sigma="2*log(2 + x1)")
    assert v.hypothesis("‖grad σ‖ in L1").status == INCONCLUSIVE
    assert v.conclusion_status == "inconclusive"


@pytest.mark.parametrize(
    "tid, model, kw, expected",
    [
        ("LEMMA", ("euclidean", 3), {"sigma": "-0.5"}, "holds_on_grid"),
        ("LEMMA", ("euclidean", 3), {"sigma": R3}, "not_applicable"),
        ("T2", ("flat_torus", 3), {"lam": "2"}, "holds_on_grid"),
        ("T2", ("euclidean", 3), {"lam": f"2/(1 + {R3})"}, "not_applicable"),
        ("C2", ("flat_torus", 4), {"lam": "1"}, "holds_on_grid"),
        ("C3", ("sphere_stereographic", 5), {"sigma": "0"}, "not_applicable"),
        ("T4", ("euclidean", 3), {"sigma": f"-({R3})"}, "not_applicable"),
        ("C4", ("flat_torus", 3), {"sigma": "0"}, "holds_on_grid"),
        ("C6", ("flat_torus", 4), {"lam": "2"}, "holds_on_grid"),
    ],
)
def test_verdict_table(tid, model, kw, expected):
    v = _check(tid, model_zoo(*model), **kw)
    assert v.conclusion_status == expected
    assert v.conclusion_status != CONTRADICTION


def test_dimension_guards():
    with pytest.raises(TheoremError):
        _check("T2", model_zoo("euclidean", 5), sigma="0")
    with pytest.raises(TheoremError):
        _check("T3", model_zoo("euclidean", 4), sigma="0")
    with pytest.raises(TheoremError):
        _check("T5", model_zoo("euclidean", 3), sigma="0")
    with pytest.raises(ValueError):
        check("T7", Scenario(model_zoo("euclidean", 3), ConformalDeformation.from_sigma("0", 3)))


def test_violated_records_need_a_witness():
    with pytest.raises(ValueError):
        HypothesisRecord("s <= 0", VIOLATED, "max 1 > 0")


def test_theorem_ids_cover_all_statements():
    assert {t.value for t in TheoremId} == {"LEMMA", "T1", "T2", "T3", "T4", "T5", "C1", "C2", "C3", "C4", "C5", "C6"}


def test_closed_manifold_divergence_examples():
    t2, t3 = model_zoo("flat_torus", 2), model_zoo("flat_torus", 3)
    assert abs(closed_manifold_divergence_check(t2, parse("sin(2*pi*x1)*cos(2*pi*x2)", 2), grid(t2.chart, 32))) <= 1e-10
    assert closed_manifold_divergence_check(t2, parse("5", 2), grid(t2.chart, 8)) == 0.0
    assert abs(closed_manifold_divergence_check(t3, parse("sin(2*pi*x1) + cos(4*pi*x2)", 3), grid(t3.chart, 16))) <= 1e-10
    with pytest.raises(TheoremError):
        closed_manifold_divergence_check(model_zoo("euclidean", 2), parse("x1", 2), grid(model_zoo("euclidean", 2).chart, 3))


def test_hopf_analogue():
    for div, tag, spread, constant in hopf_analogue():
        assert abs(div) <= 1e-9
        if tag != "mixed":
            assert spread <= 1e-9
        assert (tag == "harmonic") == constant


RANK = {VERIFIED: 2, DECLARED: 2, INCONCLUSIVE: 1, VIOLATED: 0}


@pytest.mark.parametrize(
    "tid, model, sigma",
    [
        ("T1", ("euclidean", 3), "0.7"),
        ("C5", ("euclidean", 3), "2*log(2 + x1)"),
        ("T5", ("flat_torus", 4), "0.3"),
    ],
)
def test_tightening_tolerance_never_improves_a_hypothesis(tid, model, sigma):
    m = model_zoo(*model)
    d = ConformalDeformation.from_sigma(sigma, m.dimension)
    previous = None
    for tol in 10.0 ** -np.arange(2, 19, 2):
        v = check(tid, Scenario(m, d, grid_points=5, tol_identity=tol, tol_class=tol))
        ranks = {h.name: RANK[h.status] for h in v.hypotheses}
        if previous is not None:
            assert all(ranks[name] <= previous[name] for name in ranks)
        previous = ranks
