"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line in the summary."""

import filecmp
import math
import time

import numpy as np
from helpers import hopf_analogue, record

from conformal_lab import _parallel
from conformal_lab.cli import corpus_dir, load_manifest, run_file
from conformal_lab.conformal import ConformalDeformation, IdentityId, identity_report, identity_terms
from conformal_lab.curvature import curvature_batch, scalar_curvature
from conformal_lab.expr import parse
from conformal_lab.geometry import HYPERBOLIC_CLIP, grid, model_zoo, random_interior_points
from conformal_lab.integrability import lp_report, volume_report


def _r2(n):
    return " + ".join(f"x{i}^2" for i in range(1, n + 1))


GRID_FOR_DIM = {3: 33, 4: 15, 5: 9}


def test_criterion_1_scalar_transformation_law():
    start = time.perf_counter()
    worst, details = 0.0, []
    for family in ("hyperbolic_ball", "sphere_stereographic"):
        for n, k in GRID_FOR_DIM.items():
            if family == "hyperbolic_ball":
                base = model_zoo("euclidean", n, half_width=HYPERBOLIC_CLIP / math.sqrt(n))
                sigma = f"log(2/(1 - ({_r2(n)})))"
            else:
                base = model_zoo("euclidean", n, half_width=1.0)
                sigma = f"log(2/(1 + {_r2(n)}))"
            rep = identity_report(IdentityId.EQ_2_1, base, ConformalDeformation.from_sigma(sigma, n), grid(base.chart, k))
            worst = max(worst, rep.max_abs_residual)
            details.append(f"{family[:3]}{n}:{k}^{n}")
    elapsed = time.perf_counter() - start
    record(1, "EQ_2_1 cross-validation", worst <= 1e-8 and elapsed <= 60,
           f"max residual {worst:.2e} over {', '.join(details)}; {elapsed:.1f}s")


def test_criterion_2_constant_curvature_oracles():
    worst = 0.0
    for n in (2, 3, 4, 5):
        for name, expected in (
            ("euclidean", 0.0),
            ("flat_torus", 0.0),
            ("hyperbolic_ball", -n * (n - 1)),
            ("sphere_stereographic", n * (n - 1) / 1.5**2),
        ):
            kwargs = {"radius": 1.5} if name == "sphere_stereographic" else {}
            model = model_zoo(name, n, **kwargs)
            pts = random_interior_points(model.chart, 50, seed=100 + n)
            worst = max(worst, float(np.abs(scalar_curvature(model, pts) - expected).max()))
    record(2, "constant-curvature oracles", worst <= 1e-8, f"max |s - s_exact| {worst:.2e} (n=2..5, 50 points)")


def test_criterion_3_predicted_gap_exactness():
    worst = 0.0
    for n, k in ((3, 9), (5, 5)):
        model = model_zoo("euclidean", n)
        pts = grid(model.chart, k).points
        for lam in ("1 + x1^2", "exp(x1*x2)"):
            d = ConformalDeformation.from_lambda(lam, n)
            lam_grad_sq = identity_terms(IdentityId.LAP_SQUARE_PAPER, model, d, pts)[1]
            for ident, factor in ((IdentityId.LAP_SQUARE_PAPER, 1), (IdentityId.EQ_2_4_PAPER, n - 1)):
                res, gap, _ = identity_terms(ident, model, d, pts)
                target = factor * lam_grad_sq
                np.testing.assert_allclose(gap, target, rtol=1e-14)
                rel = float(np.abs(res - target).max() / np.abs(target).max())
                worst = max(worst, rel)
    record(3, "predicted-gap exactness", worst <= 1e-7, f"max relative deviation {worst:.2e}")


def test_criterion_4_conharmonic_construction():
    worst_31 = worst_32 = worst_gap = 0.0
    gap_at_4 = None
    for n in (3, 4, 5):
        model = model_zoo("euclidean", n)
        d = ConformalDeformation.from_sigma(f"({2 / (n - 2)!r})*log(2 + x1)", n)
        g = grid(model.chart, {3: 9, 4: 7, 5: 5}[n])
        worst_31 = max(worst_31, identity_report(IdentityId.EQ_3_1, model, d, g).max_abs_residual)
        worst_32 = max(worst_32, identity_report(IdentityId.EQ_3_2_DERIVED, model, d, g).max_abs_residual)
        res, gap, _ = identity_terms(IdentityId.EQ_3_2_PAPER, model, d, g.points)
        lam_grad_sq = identity_terms(IdentityId.LAP_SQUARE_PAPER, model, d, g.points)[1]
        target = -2 * (n - 4) * lam_grad_sq
        if n == 4:
            gap_at_4 = float(np.abs(gap).max())
            worst_gap = max(worst_gap, float(np.abs(res).max()))
        else:
            worst_gap = max(worst_gap, float(np.abs(res - target).max() / np.abs(target).max()))
    ok = worst_31 <= 1e-9 and worst_32 <= 1e-9 and worst_gap <= 1e-7 and gap_at_4 == 0.0
    record(4, "conharmonic construction", ok,
           f"EQ_3_1 {worst_31:.2e}, EQ_3_2_DERIVED {worst_32:.2e}, EQ_3_2_PAPER gap deviation {worst_gap:.2e}, "
           f"gap at n=4 {gap_at_4}")


def test_criterion_5_yamabe():
    model = model_zoo("euclidean", 3)
    d = ConformalDeformation.from_u(f"(2/(1 + {_r2(3)}))^0.5", 3)
    g = grid(model.chart, 9)
    rep = identity_report(IdentityId.EQ_2_5, model, d, g)
    s_bar = scalar_curvature(model_zoo("custom", 3, entries=[[f"(2/(1 + {_r2(3)}))^2" if i == j else "0"
                                                             for j in range(3)] for i in range(3)]), g.points)
    ok = rep.max_abs_residual <= 1e-8 and np.abs(s_bar - 6).max() <= 1e-8
    record(5, "Yamabe equation", ok, f"max residual {rep.max_abs_residual:.2e}, max |s_bar - 6| {np.abs(s_bar - 6).max():.2e}")


def test_criterion_6_tensor_symmetries():
    models = [model_zoo(name, 3) for name in ("euclidean", "sphere_stereographic", "hyperbolic_ball", "flat_torus")]
    models.append(model_zoo("custom", 3, entries=[["exp(x3)", "0", "0.2*x1"], ["0", "1 + x1^2*x3^2", "0"],
                                                  ["0.2*x1", "0", "2 + sin(x2)"]]))
    worst = 0.0
    for k, model in enumerate(models):
        b = curvature_batch(model, random_interior_points(model.chart, 50, seed=k))
        r = b.riemann_lowered
        defects = (
            r + r.transpose(0, 2, 1, 3, 4),
            r + r.transpose(0, 1, 2, 4, 3),
            r - r.transpose(0, 3, 4, 1, 2),
            r + r.transpose(0, 1, 3, 4, 2) + r.transpose(0, 1, 4, 2, 3),
            b.ricci - b.ricci.transpose(0, 2, 1),
        )
        worst = max(worst, max(float(np.abs(x).max()) for x in defects))
    record(6, "tensor symmetries", worst <= 1e-9, f"max defect {worst:.2e} over {len(models)} models x 50 points")


def test_criterion_7_integrability_verdicts():
    gauss = lp_report(model_zoo("euclidean", 3, half_width=4.0), parse(f"exp(-({_r2(3)}))", 3), 2.0)
    const = lp_report(model_zoo("euclidean", 3, half_width=4.0), parse("1", 3), 2.0)
    sine = lp_report(model_zoo("flat_torus", 2), parse("sin(2*pi*x1)", 2), 2.0)
    vol = volume_report(model_zoo("flat_torus", 3))
    exact = (math.pi / 2) ** 1.5
    ok = (
        gauss.verdict == "finite" and abs(gauss.extrapolated_value / exact - 1) <= 0.02
        and const.verdict == "diverging"
        and sine.verdict == "finite" and abs(sine.extrapolated_value - 0.5) <= 1e-3
        and vol.verdict == "finite" and abs(vol.last - 1) <= 1e-10
    )
    record(7, "integrability verdicts", ok,
           f"gaussian {gauss.verdict} {gauss.extrapolated_value:.6f} (exact {exact:.6f}); constant {const.verdict}; "
           f"torus sin^2 {sine.verdict} {sine.extrapolated_value:.6f}; torus volume {vol.last!r}")


def _run_corpus(out_dir):
    outcomes = {}
    for entry in load_manifest():
        path = corpus_dir() / entry["file"]
        code, rows = run_file(path, str(out_dir / (path.stem + ".csv")), quiet=True)
        outcomes[entry["file"]] = (entry, code, {r["id"]: r["verdict"] for r in rows})
    return outcomes


def test_criterion_8_verdict_engine(tmp_path):
    outcomes = _run_corpus(tmp_path)
    mismatches, contradictions, covered, exits = [], 0, set(), set()
    for name, (entry, code, got) in outcomes.items():
        exits.add(code)
        if code != entry["exit"] or any(got.get(k) != v for k, v in entry.get("verdicts", {}).items()):
            mismatches.append(name)
        contradictions += sum(v == "CONTRADICTION" for v in got.values())
        covered |= {k for k in got if k == "LEMMA" or k[:1] in "TC" and k[1:].isdigit()}
    wanted = {"LEMMA", "T1", "T2", "T3", "T4", "T5", "C1", "C2", "C3", "C4", "C5", "C6"}
    hopf = hopf_analogue()
    hopf_ok = all(abs(div) <= 1e-9 and (tag == "mixed" or spread <= 1e-9) for div, tag, spread, _ in hopf)
    ok = (not mismatches and contradictions == 0 and wanted <= covered and len(outcomes) >= 10
          and exits == {0, 1, 2} and hopf_ok and len(hopf) == 50)
    record(8, "verdict engine", ok,
           f"{len(outcomes)} scenarios, mismatches {mismatches or 'none'}, CONTRADICTION {contradictions}, "
           f"exit codes {sorted(exits)}, missing ids {sorted(wanted - covered) or 'none'}; "
           f"Hopf analogue {'ok' if hopf_ok else 'FAILED'} on {len(hopf)} polynomials "
           f"(max |div| {max(abs(h[0]) for h in hopf):.1e})")


def test_criterion_9_determinism(tmp_path):
    dirs = []
    try:
        for threads in (1, 4):
            _parallel.set_threads(threads)
            out = tmp_path / f"threads{threads}"
            _run_corpus(out)
            dirs.append(out)
    finally:
        _parallel.set_threads(None)
    names = sorted(p.name for p in dirs[0].iterdir())
    match, mismatch, errors = filecmp.cmpfiles(dirs[0], dirs[1], names, shallow=False)
    ok = names and not mismatch and not errors and sorted(p.name for p in dirs[1].iterdir()) == names
    record(9, "determinism across thread counts", bool(ok),
           f"{len(match)}/{len(names)} CSV reports byte-identical at 1 vs 4 threads")
