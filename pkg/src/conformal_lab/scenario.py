"""Declarative scenario files and the report rows they produce.

Scenario files are a TOML subset (tables, strings, numbers, arrays, booleans)::

    [manifold]
    model = "euclidean"          # euclidean | sphere_stereographic | hyperbolic_ball | flat_torus | custom
    dimension = 3
    radius = 1.0                 # sphere only
    half_width = 0.5
    center = [0.0, 0.0, 0.0]
    periodic = [false, false, false]   # custom only

    [deformation]
    sigma = "log(2/(1 - (x1^2 + x2^2 + x3^2)))"   # or lambda = ..., or u = ...

    [checks]
    identities = ["EQ_2_1", "LAP_SQUARE_PAPER"]
    theorems = ["T1"]
    lp = [{quantity = "lambda", p = 2.0}]

    [numeric]
    grid = 9
    tol_identity = 1e-8
    tol_class = 1e-8
    exhaustion_stages = 6

    [output]
    format = "csv"               # csv | jsonl
    path = "report.csv"

Custom models additionally take ``metric`` (a matrix of expression strings),
``complete``, ``infinite_volume`` and ``known_scalar_curvature``.
"""

from __future__ import annotations

import csv
import io
import json
import re
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import expr as ex
from .conformal import (
    ConformalDeformation,
    ConformalError,
    IdentityId,
    check_admissible,
    identity_report,
    ingredients,
    _needs_s_bar,
)
from .curvature import scalar_curvature
from .geometry import GeometryError, ManifoldModel, grid, model_zoo
from .integrability import (
    ExhaustionSpec,
    default_points,
    geometric_stages,
    grad_l1_report,
    lp_report,
    volume_report,
)
from . import theorems as th

CSV_FIELDS = ("kind", "id", "n", "grid", "max_abs_residual", "mean_abs_residual", "predicted_gap", "verdict", "notes")
LP_QUANTITIES = ("sigma", "lambda", "u", "grad_sigma", "grad_lambda", "volume")

_SCHEMA = {
    "manifold": {"model", "dimension", "radius", "half_width", "center", "periodic", "metric", "complete",
                 "infinite_volume", "known_scalar_curvature"},
    "deformation": {"sigma", "lambda", "u"},
    "checks": {"identities", "theorems", "lp", "curvature"},
    "numeric": {"grid", "tol_identity", "tol_class", "exhaustion_stages", "exhaustion_points"},
    "output": {"format", "path"},
}


class ScenarioError(ValueError):
    """Configuration problem; maps to exit code 2."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


@dataclass
class ScenarioSpec:
    name: str
    model: ManifoldModel
    deformation: ConformalDeformation
    identities: list[IdentityId] = field(default_factory=list)
    theorems: list[th.TheoremId] = field(default_factory=list)
    lp: list[tuple[str, float]] = field(default_factory=list)
    curvature: bool = False
    grid: int = 9
    tol_identity: float = 1e-8
    tol_class: float = 1e-8
    exhaustion: ExhaustionSpec | None = None
    output_format: str = "csv"
    output_path: str | None = None

    @property
    def p_values(self) -> tuple[float, ...]:
        ps = sorted({p for q, p in self.lp if q in ("sigma", "lambda", "u")})
        return tuple(ps) or (2.0,)


def _line_of(text: str, section: str, key: str | None = None) -> int | None:
    current = None
    for no, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        m = re.match(r"\[([^\]]+)\]", stripped)
        if m:
            current = m.group(1).strip()
            if key is None and current == section:
                return no
            continue
        if current == section and key is not None and re.match(rf"{re.escape(key)}\s*=", stripped):
            return no
    return None


def load_scenario(path: str | Path) -> ScenarioSpec:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as err:
        raise ScenarioError(f"cannot read scenario file {path}: {err}") from err
    return parse_scenario(text, path.stem)


def parse_scenario(text: str, name: str = "scenario") -> ScenarioSpec:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as err:
        raise ScenarioError(f"invalid TOML: {err}") from err

    def fail(msg, section, key=None):
        raise ScenarioError(f"[{section}]{'.' + key if key else ''}: {msg}", _line_of(text, section, key))

    for section, body in data.items():
        if section not in _SCHEMA:
            raise ScenarioError(f"unknown section [{section}]", _line_of(text, section))
        if not isinstance(body, dict):
            raise ScenarioError(f"{section} must be a table", _line_of(text, section))
        for key in body:
            if key not in _SCHEMA[section]:
                fail("unknown key", section, key)

    man = data.get("manifold")
    if man is None:
        raise ScenarioError("missing [manifold] section")
    for key in ("model", "dimension"):
        if key not in man:
            fail("required key missing", "manifold", key)
    n = man["dimension"]
    if not isinstance(n, int) or isinstance(n, bool) or n < 2:
        fail("dimension must be an integer >= 2", "manifold", "dimension")

    kwargs = {}
    for key in ("radius", "half_width"):
        if key in man:
            if not isinstance(man[key], (int, float)) or isinstance(man[key], bool):
                fail("must be a number", "manifold", key)
            kwargs[key] = float(man[key])
    if "center" in man:
        c = man["center"]
        if not isinstance(c, list) or len(c) != n or not all(isinstance(v, (int, float)) for v in c):
            fail(f"center must be a list of {n} numbers", "manifold", "center")
        kwargs["center"] = [float(v) for v in c]
    model_name = man["model"]
    if model_name == "custom":
        if "metric" not in man:
            fail("custom model needs a metric matrix", "manifold", "metric")
        kwargs["entries"] = man["metric"]
        if "periodic" in man:
            kwargs["periodic"] = man["periodic"]
        kwargs["complete"] = bool(man.get("complete", True))
        kwargs["infinite_volume"] = bool(man.get("infinite_volume", True))
        known = man.get("known_scalar_curvature")
        kwargs["known_scalar_curvature"] = None if known is None else str(known)
    else:
        for key in ("metric", "periodic", "complete", "infinite_volume", "known_scalar_curvature"):
            if key in man:
                fail("only allowed for custom models", "manifold", key)
    try:
        model = model_zoo(model_name, n, **kwargs)
    except (GeometryError, ex.ExpressionError) as err:
        fail(str(err), "manifold", "model")

    dfm = data.get("deformation", {})
    given = [k for k in ("sigma", "lambda", "u") if k in dfm]
    if len(given) != 1:
        raise ScenarioError(
            "[deformation] needs exactly one of sigma, lambda, u", _line_of(text, "deformation")
        )
    key = given[0]
    if not isinstance(dfm[key], str):
        fail("must be an expression string", "deformation", key)
    try:
        build = {"sigma": ConformalDeformation.from_sigma, "lambda": ConformalDeformation.from_lambda,
                 "u": ConformalDeformation.from_u}[key]
        deformation = build(ex.parse(dfm[key], n))
    except (ex.ExpressionError, ConformalError) as err:
        fail(str(err), "deformation", key)

    checks = data.get("checks", {})
    identities, theorems, lp = [], [], []
    for raw in checks.get("identities", []):
        try:
            ident = IdentityId(raw)
            check_admissible(ident, n)
        except ValueError as err:
            fail(f"unknown or inadmissible identity {raw!r}: {err}", "checks", "identities")
        identities.append(ident)
    for raw in checks.get("theorems", []):
        try:
            theorems.append(th.check_admissible(raw, n))
        except ValueError as err:
            fail(f"unknown or inadmissible theorem {raw!r}: {err}", "checks", "theorems")
    for entry in checks.get("lp", []):
        if not isinstance(entry, dict) or entry.get("quantity") not in LP_QUANTITIES:
            fail(f"lp entries need quantity in {LP_QUANTITIES}", "checks", "lp")
        p = entry.get("p", 1.0)
        if not isinstance(p, (int, float)) or p < 1:
            fail("lp entries need p >= 1", "checks", "lp")
        lp.append((entry["quantity"], float(p)))
    curvature = bool(checks.get("curvature", False))

    num = data.get("numeric", {})
    k = num.get("grid", 9)
    if not isinstance(k, int) or isinstance(k, bool) or k < 3 or k % 2 == 0:
        fail(f"grid must be an odd integer >= 3, got {k!r}", "numeric", "grid")
    tols = {}
    for key in ("tol_identity", "tol_class"):
        v = num.get(key, 1e-8)
        if not isinstance(v, (int, float)) or isinstance(v, bool) or v <= 0:
            fail("tolerance must be a positive number", "numeric", key)
        tols[key] = float(v)
    stages = num.get("exhaustion_stages", 6)
    try:
        if isinstance(stages, int) and not isinstance(stages, bool):
            stages = geometric_stages(stages)
        elif isinstance(stages, list):
            stages = tuple(float(s) for s in stages)
        else:
            raise ValueError("exhaustion_stages must be a count or a list of scales")
        points = num.get("exhaustion_points", default_points(n))
        exhaustion = ExhaustionSpec(stages, int(points))
    except (ValueError, TypeError) as err:
        fail(str(err), "numeric", "exhaustion_stages")

    out = data.get("output", {})
    fmt = out.get("format", "csv")
    if fmt not in ("csv", "jsonl"):
        fail("format must be 'csv' or 'jsonl'", "output", "format")
    return ScenarioSpec(
        name, model, deformation, identities, theorems, lp, curvature, k,
        tols["tol_identity"], tols["tol_class"], exhaustion, fmt, out.get("path"),
    )


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------


def _num(x) -> str:
    if x is None or x == "":
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


@dataclass
class RunResult:
    rows: list[dict]
    exit_code: int
    verdicts: dict = field(default_factory=dict)


def _lp_row(spec: ScenarioSpec, quantity: str, p: float) -> tuple[dict, object]:
    model, d = spec.model, spec.deformation
    if quantity == "volume":
        rep = volume_report(model, spec.exhaustion)
    elif quantity.startswith("grad_"):
        expr = d.sigma if quantity == "grad_sigma" else d.lam
        rep = grad_l1_report(model, expr, spec.exhaustion, p=p)
    else:
        expr = {"sigma": d.sigma, "lambda": d.lam, "u": d.u}[quantity]
        if expr is None:
            raise ScenarioError(f"quantity {quantity} needs n >= 3")
        rep = lp_report(model, expr, p, spec.exhaustion, quantity=quantity)
    notes = f"quantity={quantity};p={p:g};partials=" + "|".join(_num(v) for v in rep.partials)
    if rep.extrapolated_value is not None:
        notes += f";extrapolated={_num(rep.extrapolated_value)}"
    if rep.declared_infinite_volume:
        notes += ";declared_infinite_volume"
    row = dict(kind="integrability", id=f"L{p:g}:{quantity}", n=model.dimension,
               grid=spec.exhaustion.points_per_axis, max_abs_residual="", mean_abs_residual="",
               predicted_gap="", verdict=rep.verdict, notes=notes)
    return row, rep


def run_spec(spec: ScenarioSpec) -> RunResult:
    model, d, n = spec.model, spec.deformation, spec.model.dimension
    g = grid(model.chart, spec.grid)
    rows: list[dict] = []
    failed = False
    verdicts = {}

    if spec.curvature:
        s = scalar_curvature(model, g.points)
        if model.known_scalar_curvature is not None:
            known = np.broadcast_to(model.known_scalar_curvature(g.points), s.shape)
            err = np.abs(s - known)
            ok = bool(err.max() <= spec.tol_identity * (1 + np.abs(known).max()))
            failed |= not ok
            rows.append(dict(kind="curvature", id="scalar_vs_known", n=n, grid=spec.grid,
                             max_abs_residual=_num(err.max()), mean_abs_residual=_num(float(np.mean(err))),
                             predicted_gap="", verdict="holds" if ok else "fails_unexpectedly",
                             notes=f"known={model.known_scalar_curvature}"))
        else:
            rows.append(dict(kind="curvature", id="scalar", n=n, grid=spec.grid, max_abs_residual="",
                             mean_abs_residual="", predicted_gap="", verdict="computed",
                             notes=f"min={_num(s.min())};max={_num(s.max())}"))

    if spec.identities:
        need = any(_needs_s_bar(i) for i in spec.identities)
        ing = ingredients(model, d, g.points, need_s_bar=need)
        for ident in spec.identities:
            rep = identity_report(ident, model, d, g, spec.tol_identity, ing)
            failed |= rep.verdict not in ("holds", "fails_as_predicted")
            verdicts[str(ident)] = rep.verdict
            notes = f"tol={spec.tol_identity:g}"
            if rep.max_gap_deviation is not None:
                notes += f";max_gap_deviation={_num(rep.max_gap_deviation)}"
            rows.append(dict(kind="identity", id=str(ident), n=n, grid=spec.grid,
                             max_abs_residual=_num(rep.max_abs_residual),
                             mean_abs_residual=_num(rep.mean_abs_residual),
                             predicted_gap=_num(rep.predicted_gap_max), verdict=rep.verdict, notes=notes))

    for quantity, p in spec.lp:
        row, rep = _lp_row(spec, quantity, p)
        verdicts[row["id"]] = rep.verdict
        rows.append(row)

    if spec.theorems:
        scen = th.Scenario(model, d, None, spec.p_values, spec.grid, spec.tol_identity, spec.tol_class,
                           spec.exhaustion)
        for tid in spec.theorems:
            v = th.check(tid, scen)
            failed |= v.conclusion_status == th.CONTRADICTION
            verdicts[str(tid)] = v.conclusion_status
            notes = th.verdict_summary(v)
            if v.conclusion_evidence:
                notes += " || " + ";".join(f"{k}={_fmt_ev(val)}" for k, val in v.conclusion_evidence.items())
            violated = [h for h in v.hypotheses if h.status == th.VIOLATED]
            if violated:
                notes += f" || witness={violated[0].name}@" + ",".join(f"{c:.6g}" for c in violated[0].witness)
            if v.notes:
                notes += " || " + " ".join(v.notes)
            rows.append(dict(kind="theorem", id=str(tid), n=n, grid=spec.grid, max_abs_residual="",
                             mean_abs_residual="", predicted_gap="", verdict=v.conclusion_status, notes=notes))

    return RunResult(rows, 1 if failed else 0, verdicts)


def _fmt_ev(value) -> str:
    if isinstance(value, float):
        return _num(value)
    return str(value)


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: row.get(k, "") for k in CSV_FIELDS})
    return buf.getvalue()


def rows_to_jsonl(rows: list[dict]) -> str:
    lines = []
    for row in rows:
        obj = {}
        for k in CSV_FIELDS:
            v = row.get(k, "")
            if k in ("max_abs_residual", "mean_abs_residual", "predicted_gap"):
                v = float(v) if v != "" else None
            obj[k] = v
        lines.append(json.dumps(obj, ensure_ascii=False))
    return "\n".join(lines) + ("\n" if lines else "")


def write_reports(rows: list[dict], path: Path, fmt: str) -> list[Path]:
    """CSV is always written; a JSON-lines mirror is added for format 'jsonl'."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    written = []
    if fmt == "jsonl":
        csv_path = path.with_suffix(".csv")
        json_path = path.with_suffix(".jsonl")
        json_path.write_text(rows_to_jsonl(rows), encoding="utf-8")
        written.append(json_path)
    else:
        csv_path = path
    csv_path.write_text(rows_to_csv(rows), encoding="utf-8")
    written.insert(0, csv_path)
    return written


def render_table(rows: list[dict]) -> str:
    cols = ("kind", "id", "n", "grid", "max_abs_residual", "predicted_gap", "verdict")
    cells = [[str(r.get(c, "")) for c in cols] for r in rows]
    widths = [max([len(c)] + [len(row[i]) for row in cells]) for i, c in enumerate(cols)]
    lines = [" | ".join(c.ljust(w) for c, w in zip(cols, widths)), "-+-".join("-" * w for w in widths)]
    lines += [" | ".join(v.ljust(w) for v, w in zip(row, widths)) for row in cells]
    return "\n".join(lines)
