"""Command-line driver: ``conformal-lab run | zoo list | identity-sweep | corpus``.

Exit codes: 0 when every identity holds (or fails exactly as predicted) and no
theorem check ends in CONTRADICTION, 1 on any other check failure, 2 on
configuration, parse or evaluation errors.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys
from importlib import resources
from pathlib import Path

from . import _parallel
from . import expr as ex
from .conformal import ConformalDeformation, ConformalError, IdentityId, check_admissible, identity_report, ingredients
from .geometry import HYPERBOLIC_CLIP, GeometryError, grid, model_zoo, zoo_catalogue
from .scenario import (
    ScenarioError,
    load_scenario,
    render_table,
    run_spec,
    write_reports,
    _num,
)
from .theorems import TheoremError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

EXIT_OK, EXIT_CHECK, EXIT_CONFIG = 0, 1, 2
SWEEP_FIELDS = ("id", "n", "grid", "max_abs_residual", "mean_abs_residual", "predicted_gap", "verdict")
_RUNTIME_ERRORS = (ex.ExpressionError, GeometryError, ConformalError, TheoremError, ArithmeticError)


def corpus_dir() -> Path:
    return Path(str(resources.files("conformal_lab") / "scenarios"))


def _report_path(spec, scenario_path: Path, out: str | None) -> Path:
    if out:
        return Path(out)
    if spec.output_path:
        return Path(spec.output_path)
    return Path(f"{scenario_path.stem}.{spec.output_format}")


def run_file(path, out: str | None = None, quiet: bool = False) -> tuple[int, list[dict]]:
    path = Path(path)
    try:
        spec = load_scenario(path)
        result = run_spec(spec)
    except ScenarioError as err:
        print(f"error: {path}: {err}", file=sys.stderr)
        return EXIT_CONFIG, []
    except _RUNTIME_ERRORS as err:
        print(f"error: {path}: evaluation failed: {err}", file=sys.stderr)
        return EXIT_CONFIG, []
    written = write_reports(result.rows, _report_path(spec, path, out), spec.output_format)
    if not quiet:
        print(render_table(result.rows))
        print("report: " + ", ".join(str(p) for p in written))
    return result.exit_code, result.rows


def cmd_run(args) -> int:
    code, _ = run_file(args.file, args.out)
    return code


def zoo_lines() -> list[str]:
    return [
        f"{row['name']} | complete={row['complete']} | infinite_volume={row['infinite_volume']} "
        f"| s = {row['s']} | {row['dims']}"
        for row in zoo_catalogue()
    ]


def cmd_zoo(args) -> int:
    print("\n".join(zoo_lines()))
    return EXIT_OK


def _sweep_setup(model_name: str, n: int, args):
    """Base model and deformation for one sweep dimension.

    Without an explicit deformation the curved models are realised as a
    conformal change of a flat box (so s̄ is the model curvature), and the
    Euclidean model uses λ = 1 + x1².
    """
    r2 = _radius_sq_text(n)
    if model_name == "hyperbolic_ball":
        hw = args.half_width or HYPERBOLIC_CLIP / math.sqrt(n)
        base = model_zoo("euclidean", n, half_width=hw)
        default = ("sigma", f"log(2/(1 - ({r2})))")
    elif model_name == "sphere_stereographic":
        rr = args.radius**2
        base = model_zoo("euclidean", n, half_width=args.half_width or 1.0)
        default = ("sigma", f"log(2*{rr!r}/({rr!r} + {r2}))")
    elif model_name == "flat_torus":
        base = model_zoo("flat_torus", n)
        default = ("sigma", "0.1*sin(2*pi*x1)")
    elif model_name == "euclidean":
        base = model_zoo("euclidean", n, half_width=args.half_width or 1.0)
        default = ("lambda", "1 + x1^2")
    else:
        raise GeometryError("identity-sweep supports euclidean, flat_torus, sphere_stereographic, hyperbolic_ball")
    kind, text = next(((k, getattr(args, k)) for k in ("sigma", "lam", "u") if getattr(args, k)), default)
    build = {"sigma": ConformalDeformation.from_sigma, "lambda": ConformalDeformation.from_lambda,
             "lam": ConformalDeformation.from_lambda, "u": ConformalDeformation.from_u}[kind]
    return base, build(text, n)


def _radius_sq_text(n: int) -> str:
    return " + ".join(f"x{i}^2" for i in range(1, n + 1))


def identity_sweep(ids, model_name: str, dims, grids, args) -> tuple[list[dict], int]:
    ids = [IdentityId(i) for i in ids]
    for ident in ids:
        for n in dims:
            check_admissible(ident, n)
    rows, failed = [], False
    for n in dims:
        base, deformation = _sweep_setup(model_name, n, args)
        for k in grids:
            g = grid(base.chart, k)
            ing = ingredients(base, deformation, g.points, need_s_bar=True)
            for ident in ids:
                rep = identity_report(ident, base, deformation, g, args.tol, ing)
                failed |= rep.verdict not in ("holds", "fails_as_predicted")
                rows.append(dict(id=str(ident), n=n, grid=k, max_abs_residual=_num(rep.max_abs_residual),
                                 mean_abs_residual=_num(rep.mean_abs_residual),
                                 predicted_gap=_num(rep.predicted_gap_max), verdict=rep.verdict))
    rows.sort(key=lambda r: (ids.index(IdentityId(r["id"])), r["n"], r["grid"]))
    return rows, EXIT_CHECK if failed else EXIT_OK


def sweep_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=SWEEP_FIELDS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def _int_list(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.replace(",", " ").split()]
    except ValueError as err:
        raise argparse.ArgumentTypeError(f"expected a comma-separated integer list, got {text!r}") from err
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def cmd_sweep(args) -> int:
    ids = [s for s in args.eq.replace(",", " ").split() if s]
    bad = [g for g in args.grid if g < 3 or g % 2 == 0]
    if bad:
        print(f"error: --grid must be odd and >= 3, got {bad[0]}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        rows, code = identity_sweep(ids, args.model, args.dims, args.grid, args)
    except (ValueError, ArithmeticError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    text = sweep_csv(rows)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return code


def load_manifest(directory: Path | None = None) -> list[dict]:
    directory = directory or corpus_dir()
    with open(directory / "manifest.toml", "rb") as fh:
        return tomllib.load(fh)["scenario"]


def cmd_corpus(args) -> int:
    """Run every shipped scenario and compare with the manifest."""
    directory = corpus_dir()
    out_dir = Path(args.out_dir)
    mismatches = 0
    for entry in load_manifest(directory):
        path = directory / entry["file"]
        code, rows = run_file(path, str(out_dir / (path.stem + ".csv")), quiet=True)
        got = {r["id"]: r["verdict"] for r in rows}
        problems = [f"exit {code} != {entry['exit']}"] if code != entry["exit"] else []
        for cid, want in entry.get("verdicts", {}).items():
            if got.get(cid) != want:
                problems.append(f"{cid}: {got.get(cid)} != {want}")
        mismatches += bool(problems)
        print(f"{'ok ' if not problems else 'BAD'} {entry['file']} exit={code} " + "; ".join(problems))
    return EXIT_CHECK if mismatches else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="conformal-lab", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=int, default=None, help="worker threads for point batches")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a scenario file")
    p.add_argument("file")
    p.add_argument("--out", help="report path (overrides [output].path)")
    p.add_argument("--threads", type=int, default=argparse.SUPPRESS)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("zoo", help="model catalogue")
    p.add_argument("action", choices=["list"])
    p.set_defaults(func=cmd_zoo)

    p = sub.add_parser("identity-sweep", help="identity residuals across dimensions and resolutions")
    p.add_argument("--eq", required=True, help="comma-separated identity ids")
    p.add_argument("--model", required=True)
    p.add_argument("--dims", required=True, type=_int_list)
    p.add_argument("--grid", required=True, type=_int_list, help="odd points per axis (list allowed)")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--sigma")
    group.add_argument("--lambda", dest="lam")
    group.add_argument("--u")
    p.add_argument("--radius", type=float, default=1.0)
    p.add_argument("--half-width", type=float, default=None)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--out")
    p.add_argument("--threads", type=int, default=argparse.SUPPRESS)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("corpus", help="run the shipped scenario corpus against its manifest")
    p.add_argument("--out-dir", default="corpus-reports")
    p.add_argument("--threads", type=int, default=argparse.SUPPRESS)
    p.set_defaults(func=cmd_corpus)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return EXIT_CONFIG if err.code else EXIT_OK
    if args.threads is not None:
        if args.threads < 1:
            print("error: --threads must be >= 1", file=sys.stderr)
            return EXIT_CONFIG
        _parallel.set_threads(args.threads)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
