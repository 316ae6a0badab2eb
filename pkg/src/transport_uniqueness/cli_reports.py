"""Scenario files in, JSON reports and CSV tables out.

Exit codes: 0 unique / certified / identity holds, 2 not unique (a witness
or a second extension was exhibited), 3 inconclusive, 1 error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
import time
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__, finite_dim_lab, flow_engine, uniqueness1d, weak_solution
from .errors import CertificateFailure, SchemaError, TransportError
from .field_expr import RadialBound, VectorField, parse

EXIT_OK, EXIT_ERROR, EXIT_NOT_UNIQUE, EXIT_INCONCLUSIVE = 0, 1, 2, 3

KINDS = ("Analyze1D", "AnalyzeGeneral1D", "Flow", "Escape3_6", "WeakResidual", "MatrixLab")
SUBCOMMAND_KINDS = {
    "analyze": ("Analyze1D", "AnalyzeGeneral1D"),
    "flow": ("Flow",),
    "escape-cert": ("Escape3_6",),
    "weak-residual": ("WeakResidual",),
    "matrix-lab": ("MatrixLab",),
}

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_vec = {"type": "array", "items": _num, "minItems": 1}
_mat = {"type": "array", "items": _vec, "minItems": 1}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required), "additionalProperties": False}


SCENARIO_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "transport-uniqueness scenario",
    **_obj(
        {
            "name": {"type": "string", "minLength": 1},
            "kind": {"enum": list(KINDS)},
            "b": {"oneOf": [{"type": "string"}, {"type": "array", "items": {"type": "string"}, "minItems": 1}]},
            "lambda": _pos,
            "exact_antiderivative": {"type": "string"},
            "seed": {"type": "integer", "minimum": 0},
            "c0": _num,
            "cN": _num,
            "x0": _vec,
            "horizon": _pos,
            "radial_bound": _obj({"beta": {"type": "string"}, "R": _pos}, ["beta", "R"]),
            "test_radii": _vec,
            "t_max": _pos,
            "n_directions": {"type": "integer", "minimum": 1},
            "n_times": {"type": "integer", "minimum": 2},
            "density": {"type": "string"},
            "box": _mat,
            "n_particles": {"type": "integer", "minimum": 1},
            "jitter": {"type": "boolean"},
            "t": _pos,
            "n_time": {"type": "integer", "minimum": 2},
            "bump": _obj({"center": _vec, "radius": _pos}, ["center", "radius"]),
            "audit_times": _vec,
            "lab": _obj(
                {
                    "preset": {"enum": ["fixed3"]},
                    "random": _obj({"n": {"type": "integer", "minimum": 2}, "k": {"type": "integer", "minimum": 0},
                                    "target": {"type": "number", "minimum": 0, "exclusiveMaximum": 1}},
                                   ["n", "k", "target"]),
                    "L": _mat,
                    "D_basis": {"type": "array", "items": _vec},
                    "phi": _vec,
                    "u": _vec,
                    "lambda0": _num,
                    "u_alt": _vec,
                    "t_grid": _vec,
                    "probe_lambda": _num,
                }
            ),
            "options": _obj(
                {
                    "rtol": _pos, "atol": _pos, "R_explode": _pos, "h_min": _pos, "max_steps": {"type": "integer"},
                    "tol_cert": _pos, "residual_tol": _pos, "glue_tol": _pos, "M": _pos, "weak_tol": _pos,
                }
            ),
        },
        ["name", "kind"],
    ),
    "allOf": [
        {"if": {"properties": {"kind": {"const": k}}}, "then": {"required": req}}
        for k, req in (
            ("Analyze1D", ["b"]),
            ("AnalyzeGeneral1D", ["b", "c0", "cN"]),
            ("Flow", ["b", "x0", "horizon"]),
            ("Escape3_6", ["b", "radial_bound", "test_radii", "t_max"]),
            ("WeakResidual", ["b", "density", "box", "n_particles", "t", "bump"]),
            ("MatrixLab", ["lab"]),
        )
    ],
}

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "transport-uniqueness report",
    "type": "object",
    "required": ["tool", "scenario", "kind", "verdict", "exit_code", "results", "wall_clock_seconds"],
    "additionalProperties": False,
    "properties": {
        "tool": _obj({"name": {"type": "string"}, "version": {"type": "string"}}, ["name", "version"]),
        "scenario": {"type": "object"},
        "kind": {"enum": list(KINDS)},
        "verdict": {"enum": ["unique", "not_unique", "inconclusive", "certified", "certificate_failed",
                             "alive", "exploded", "step_failure", "identity_holds", "identity_violated",
                             "core", "not_a_core"]},
        "exit_code": {"enum": [0, 2, 3]},
        "results": {"type": "object"},
        "outputs": {"type": "array", "items": {"type": "string"}},
        "wall_clock_seconds": {"type": "number"},
    },
}

WALL_CLOCK_KEY = "wall_clock_seconds"


def validate_scenario(doc) -> dict:
    errors = sorted(jsonschema.Draft202012Validator(SCENARIO_SCHEMA).iter_errors(doc), key=lambda e: list(e.path))
    if errors:
        e = errors[0]
        raise SchemaError("/" + "/".join(str(p) for p in e.path), e.message)
    return doc


def load_scenario(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise SchemaError(str(path), f"cannot read scenario: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}:{exc.lineno}:{exc.colno}", f"malformed JSON: {exc.msg}") from exc
    return validate_scenario(doc)


# --------------------------------------------------------------------------
# JSON and CSV helpers


def jsonable(obj):
    """Plain JSON types; non-finite floats become the strings "inf", "-inf", "nan"."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    return obj


def dumps_report(report: dict) -> str:
    return json.dumps(jsonable(report), sort_keys=True, indent=2) + "\n"


def strip_wall_clock(text: str) -> dict:
    doc = json.loads(text)
    doc.pop(WALL_CLOCK_KEY, None)
    return doc


def write_csv(path: Path, header, rows) -> Path:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return path


# --------------------------------------------------------------------------
# runners; each returns (verdict, exit_code, results, tables)


def _field(sc: dict) -> VectorField:
    b = sc["b"]
    return VectorField.from_strings([b] if isinstance(b, str) else b)


def _flow_opts(sc: dict) -> flow_engine.FlowOptions:
    o = sc.get("options", {})
    keys = ("rtol", "atol", "R_explode", "h_min", "max_steps")
    return flow_engine.FlowOptions(**{k: o[k] for k in keys if k in o})


def _run_analyze(sc: dict):
    b = _field(sc)
    if b.dim != 1:
        raise SchemaError("/b", "uniqueness analysis needs a one-dimensional field")
    o = sc.get("options", {})
    opts = uniqueness1d.AnalysisOptions(
        lam=sc.get("lambda", 1.0),
        residual_tol=o.get("residual_tol", 1e-5),
        glue_tol=o.get("glue_tol", 1e-6),
        M=o.get("M", 1e3),
    )
    anti = parse(sc["exact_antiderivative"]) if sc.get("exact_antiderivative") else None
    if sc["kind"] == "Analyze1D":
        rep = uniqueness1d.analyze_positive_b(b, opts, antiderivative=anti)
    else:
        rep = uniqueness1d.analyze_general_b(b, sc["c0"], sc["cN"], opts, antiderivative=anti)
    code = {"unique": EXIT_OK, "not_unique": EXIT_NOT_UNIQUE}.get(rep.verdict, EXIT_INCONCLUSIVE)
    tables = {}
    if rep.verdict == "not_unique":
        w = rep.witness
        lo, hi = max(w.support[0], -10.0), min(w.support[1], 10.0)
        x, h = w.sample(lo, hi, 401)
        tables["witness.csv"] = (["x", "h"], zip(x.tolist(), h.tolist()))
    return rep.verdict, code, rep.to_dict(), tables


def _run_flow(sc: dict):
    b = _field(sc)
    x0 = np.asarray(sc["x0"], dtype=float)
    if x0.size != b.dim:
        raise SchemaError("/x0", f"expected {b.dim} coordinates, got {x0.size}")
    traj = flow_engine.integrate(b, x0, sc["horizon"], _flow_opts(sc))
    results = {
        "status": traj.status,
        "horizon": traj.horizon,
        "n_samples": int(traj.times.size),
        "final_time": float(traj.times[-1]),
        "final_state": traj.final_state,
        "tau_e_estimate": traj.tau_e_estimate,
        "bracket_width": traj.bracket_width,
        "failure_time": traj.failure_time,
    }
    code = EXIT_INCONCLUSIVE if traj.status == "step_failure" else EXIT_OK
    header = ["t"] + [f"x{i + 1}" for i in range(b.dim)]
    rows = ([t, *s] for t, s in zip(traj.times.tolist(), traj.states.tolist()))
    return traj.status, code, results, {"trajectory.csv": (header, rows)}


def _run_escape(sc: dict, seed: int):
    b = _field(sc)
    rb = sc["radial_bound"]
    bound = RadialBound.from_string(rb["beta"], rb["R"])
    tol = sc.get("options", {}).get("tol_cert", 1e-6)
    failure = None
    try:
        cert = flow_engine.escape_certificate(
            b, bound, sc["test_radii"], sc["t_max"], n_directions=sc.get("n_directions", 32),
            n_times=sc.get("n_times", 61), tol_cert=tol, seed=seed, opts=_flow_opts(sc))
    except CertificateFailure as exc:
        cert = getattr(exc, "certificate", None)
        failure = str(exc)
        if cert is None:
            return "certificate_failed", EXIT_INCONCLUSIVE, {"failure": failure}, {}
    results = {
        "passed": cert.passed,
        "min_margin": cert.min_margin,
        "tol_cert": cert.tol_cert,
        "n_checked": int(cert.margin.size),
        "n_violations": int(np.sum(cert.margin < -cert.tol_cert)),
        "divergence": cert.divergence.to_dict() if cert.divergence is not None else None,
        "min_radius_by_start": cert.min_radius_by_start,
        "trend_nondecreasing": cert.trend_nondecreasing,
        "bound_excess": cert.bound_excess,
        "h_table": cert.h_table,
        "failure": failure,
    }
    d = b.dim
    header = [f"x{i + 1}" for i in range(d)] + ["t", "h_state", "h_start_minus_t", "margin"]
    rows = ([*p, t, a, lb, m] for p, t, a, lb, m in cert.checked_points)
    verdict, code = ("certified", EXIT_OK) if cert.passed else ("certificate_failed", EXIT_INCONCLUSIVE)
    return verdict, code, results, {"certificate.csv": (header, rows)}


def _run_weak(sc: dict, seed: int):
    b = _field(sc)
    density = parse(sc["density"], b.dim)
    cloud = weak_solution.sample_cloud(density, sc["box"], sc["n_particles"], seed=seed,
                                       jitter=sc.get("jitter", False), signed=True)
    bump = weak_solution.BumpFunction(tuple(sc["bump"]["center"]), sc["bump"]["radius"])
    opts = _flow_opts(sc)
    tol = sc.get("options", {}).get("weak_tol", 1e-5)
    wr = weak_solution.weak_residual(b, cloud, bump, sc["t"], sc.get("n_time", 64), opts, details=True)
    audit_times = sc.get("audit_times") or [0.0, sc["t"]]
    audit = weak_solution.mass_audit(b, cloud, audit_times, opts)
    final = weak_solution.pushforward(cloud, b, sc["t"], opts)
    results = {
        "residual": wr.residual,
        "raw_residual": wr.raw,
        "tolerance": tol,
        "n_time": wr.n_time,
        "initial_mass": cloud.total_mass,
        "riemann_error": cloud.riemann_error,
        "final_alive_mass": final.alive_mass,
        "final_dead_mass": final.dead_mass,
        "provenance": cloud.provenance,
    }
    tables = {
        "pairings.csv": (["t", "pair_f_u"], zip(wr.times.tolist(), wr.pairings.tolist())),
        "mass_audit.csv": (["t", "alive_mass", "dead_mass"], audit),
        "cloud.csv": (["id", *[f"x{i + 1}" for i in range(b.dim)], "w", "alive"], final.rows()),
    }
    ok = wr.residual <= tol
    return ("identity_holds" if ok else "identity_violated"), (EXIT_OK if ok else EXIT_INCONCLUSIVE), results, tables


def _lab_scenario(lab: dict, seed: int) -> finite_dim_lab.LabScenario:
    if "random" in lab:
        r = lab["random"]
        return finite_dim_lab.random_scenario(r["n"], r["k"], r["target"], seed)
    if lab.get("preset") == "fixed3":
        s = finite_dim_lab.fixed_scenario()
        return s.with_u(lab["u"]) if "u" in lab else s
    missing = [k for k in ("L", "D_basis", "phi", "u", "lambda0") if k not in lab]
    if missing:
        raise SchemaError("/lab", f"explicit scenario needs {missing} (or a preset / random block)")
    D = np.asarray(lab["D_basis"], dtype=float).T if lab["D_basis"] else np.zeros((len(lab["L"]), 0))
    return finite_dim_lab.LabScenario(lab["L"], D, lab["phi"], lab["u"], lab["lambda0"])


def _run_matrix_lab(sc: dict, seed: int):
    lab = sc["lab"]
    s = _lab_scenario(lab, seed)
    checks = s.validate()
    bundle = finite_dim_lab.build_bundle(s)
    t_grid = lab.get("t_grid", [0.0, 0.25, 0.5, 1.0, 2.0])
    curve = finite_dim_lab.extension_divergence(s, bundle, t_grid)
    results = {
        "scenario": s.to_dict(),
        "checks": checks,
        "bundle": bundle.to_dict(),
        "similarity_defect": finite_dim_lab.similarity_check(s, bundle),
        "extension_divergence": [{"t": t, "agreement_on_D": a, "divergence_off_D": d} for t, a, d in curve],
    }
    rows = [[t, a, d] for t, a, d in curve]
    header = ["t", "agreement_on_D", "divergence_off_D"]
    u_alt = lab.get("u_alt")
    if u_alt is None and lab.get("preset") == "fixed3":
        u_alt = [0.0, 1.0, 0.0]
    if u_alt is not None:
        s2 = s.with_u(u_alt)
        b2 = finite_dim_lab.build_bundle(s2)
        curve2 = finite_dim_lab.extension_divergence(s2, b2, t_grid)
        gaps = [float(np.linalg.norm(finite_dim_lab.expm(t * (s.L + bundle.C)) - finite_dim_lab.expm(t * (s.L + b2.C))))
                for t in t_grid]
        results["second_extension"] = {
            "u": s2.u,
            "similarity_defect": finite_dim_lab.similarity_check(s2, b2),
            "extension_divergence": [{"t": t, "agreement_on_D": a, "divergence_off_D": d} for t, a, d in curve2],
            "distance_between_semigroups": [{"t": t, "frobenius": g} for t, g in zip(t_grid, gaps)],
        }
        header += ["divergence_off_D_alt", "distance_between_semigroups"]
        rows = [[*r, c2[2], g] for r, c2, g in zip(rows, curve2, gaps)]
    lam = lab.get("probe_lambda", finite_dim_lab.default_probe_lambda(s, bundle))
    probe = finite_dim_lab.semigroup_uniqueness_probe(s, bundle, lam)
    results["kernel"] = probe.to_dict()
    verdict, code = ("core", EXIT_OK) if probe.is_core else ("not_a_core", EXIT_NOT_UNIQUE)
    return verdict, code, results, {"extension_divergence.csv": (header, rows)}


def run(scenario: dict, out_dir=None, seed: int | None = None, lam: float | None = None,
        exact_antiderivative: str | None = None) -> tuple[dict, int]:
    """Validate, dispatch, write report.json plus CSV tables; returns (report, exit_code)."""
    started = time.perf_counter()
    sc = dict(scenario)
    if lam is not None:
        sc["lambda"] = lam
    if exact_antiderivative is not None:
        sc["exact_antiderivative"] = exact_antiderivative
    if seed is not None:
        sc["seed"] = seed
    validate_scenario(sc)
    seed = sc.get("seed", 0)
    kind = sc["kind"]
    if kind in ("Analyze1D", "AnalyzeGeneral1D"):
        verdict, code, results, tables = _run_analyze(sc)
    elif kind == "Flow":
        verdict, code, results, tables = _run_flow(sc)
    elif kind == "Escape3_6":
        verdict, code, results, tables = _run_escape(sc, seed)
    elif kind == "WeakResidual":
        verdict, code, results, tables = _run_weak(sc, seed)
    else:
        verdict, code, results, tables = _run_matrix_lab(sc, seed)

    outputs = []
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, (header, rows) in sorted(tables.items()):
            write_csv(out / name, header, rows)
            outputs.append(name)
    report = {
        "tool": {"name": "transport-uniqueness", "version": __version__},
        "scenario": sc,
        "kind": kind,
        "verdict": verdict,
        "exit_code": code,
        "results": results,
        "outputs": outputs,
        WALL_CLOCK_KEY: time.perf_counter() - started,
    }
    report = jsonable(report)
    jsonschema.validate(report, REPORT_SCHEMA)
    if out_dir is not None:
        (Path(out_dir) / "report.json").write_text(dumps_report(report))
    return report, code


# --------------------------------------------------------------------------
# command line


class _Parser(argparse.ArgumentParser):
    # usage errors must not masquerade as the "not unique" exit code
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="transport-uniqueness",
                                description="Uniqueness of L1 weak solutions of d/dt rho = -div(b rho).")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, scenario_required=True):
        sp.add_argument("--scenario", required=scenario_required, help="scenario JSON file")
        sp.add_argument("--out", default=None, help="output directory (default: out/<scenario name>)")
        sp.add_argument("--seed", type=int, default=None, help="overrides the scenario seed")

    sp = sub.add_parser("analyze", help="1-D uniqueness verdict (Analyze1D / AnalyzeGeneral1D)")
    common(sp, scenario_required=False)
    sp.add_argument("--b", help="inline field instead of --scenario, e.g. '1+x^2' (use --b=-x for a leading minus)")
    sp.add_argument("--c0", type=float, help="with --b: left end of the zero window")
    sp.add_argument("--cN", type=float, help="with --b: right end of the zero window")
    sp.add_argument("--exact-antiderivative", dest="exact_antiderivative", help="antiderivative of 1/b")
    sp.add_argument("--lambda", dest="lam", type=float, help="eigenvalue for the witness (default 1)")
    for name, text in (("flow", "integrate one characteristic"),
                       ("escape-cert", "escape-to-infinity certificate for a radial bound"),
                       ("weak-residual", "weak-solution identity on a particle cloud"),
                       ("matrix-lab", "rank-one perturbation lab"),
                       ("run", "any scenario kind")):
        common(sub.add_parser(name, help=text))
    sp = sub.add_parser("schema", help="print the scenario (or report) JSON schema")
    sp.add_argument("--report", action="store_true", help="print the report schema instead")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "schema":
        print(json.dumps(REPORT_SCHEMA if args.report else SCENARIO_SCHEMA, indent=2, sort_keys=True))
        return EXIT_OK
    try:
        if args.command == "analyze" and args.scenario is None:
            if args.b is None:
                raise SchemaError("--b", "give --scenario or an inline --b")
            sc = {"name": "inline", "kind": "Analyze1D", "b": args.b}
            if args.c0 is not None or args.cN is not None:
                sc.update(kind="AnalyzeGeneral1D", c0=args.c0, cN=args.cN)
        else:
            sc = load_scenario(args.scenario)
        allowed = SUBCOMMAND_KINDS.get(args.command)
        if allowed and sc["kind"] not in allowed:
            raise SchemaError("/kind", f"'{args.command}' runs {' or '.join(allowed)}, got {sc['kind']}")
        out = args.out if args.out is not None else Path("out") / sc["name"]
        report, code = run(sc, out, seed=args.seed, lam=getattr(args, "lam", None),
                           exact_antiderivative=getattr(args, "exact_antiderivative", None))
    except SchemaError as exc:
        print(f"error: scenario {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (TransportError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    print(f"{report['kind']}: {report['verdict']} (exit {code}) -> {Path(out) / 'report.json'}")
    return code
