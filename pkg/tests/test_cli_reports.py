import json
from pathlib import Path

import jsonschema
import pytest

from transport_uniqueness.cli_reports import (
    REPORT_SCHEMA,
    SCENARIO_SCHEMA,
    WALL_CLOCK_KEY,
    load_scenario,
    main,
    run,
    validate_scenario,
)
from transport_uniqueness.errors import SchemaError

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"


def _write(tmp_path, doc, name="s.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc) if not isinstance(doc, str) else doc)
    return p


def _report(out):
    return json.loads((Path(out) / "report.json").read_text())


def test_every_shipped_scenario_validates():
    files = sorted(SCENARIOS.glob("*.json"))
    assert len(files) >= 8
    for f in files:
        load_scenario(f)


def test_analyze_non_unique_writes_witness(tmp_path):
    sc = _write(tmp_path, {"name": "a", "kind": "Analyze1D", "b": "1+x^2"})
    out = tmp_path / "out"
    assert main(["analyze", "--scenario", str(sc), "--out", str(out)]) == 2
    rep = _report(out)
    assert rep["verdict"] == "not_unique"
    assert rep["results"]["witness"]["normalization"] == "h(c) = 1"
    lines = (out / "witness.csv").read_text().splitlines()
    assert lines[0] == "x,h" and len(lines) == 402


def test_analyze_unique(tmp_path):
    sc = _write(tmp_path, {"name": "a", "kind": "Analyze1D", "b": "1"})
    assert main(["run", "--scenario", str(sc), "--out", str(tmp_path / "o")]) == 0
    assert _report(tmp_path / "o")["verdict"] == "unique"


def test_inline_analyze_with_flags(tmp_path):
    out = tmp_path / "o"
    assert main(["analyze", "--b=-1-x^2", "--c0", "-1", "--cN", "0", "--lambda", "2", "--out", str(out)]) == 2
    rep = _report(out)
    assert rep["scenario"]["lambda"] == 2.0 and rep["results"]["lambda"] == 2.0
    assert main(["analyze", "--b", "1+x^2", "--exact-antiderivative", "atan(x)", "--out", str(out)]) == 2
    assert _report(out)["scenario"]["exact_antiderivative"] == "atan(x)"


def test_malformed_json_is_an_error(tmp_path, capsys):
    sc = _write(tmp_path, '{"name": "x", "kind": ')
    assert main(["run", "--scenario", str(sc)]) == 1
    assert "malformed JSON" in capsys.readouterr().err


def test_unknown_keys_are_rejected(tmp_path, capsys):
    sc = _write(tmp_path, {"name": "x", "kind": "Analyze1D", "b": "1", "extra": 1})
    assert main(["run", "--scenario", str(sc)]) == 1
    assert "extra" in capsys.readouterr().err
    with pytest.raises(SchemaError) as info:
        validate_scenario({"name": "x", "kind": "Flow", "b": "x", "x0": [1], "horizon": 1, "options": {"rtl": 1}})
    assert info.value.path == "/options"


def test_kind_specific_fields_are_required():
    with pytest.raises(SchemaError):
        validate_scenario({"name": "x", "kind": "AnalyzeGeneral1D", "b": "x"})
    with pytest.raises(SchemaError):
        validate_scenario({"name": "x", "kind": "Nope"})


def test_subcommand_must_match_kind(tmp_path):
    sc = _write(tmp_path, {"name": "a", "kind": "Analyze1D", "b": "1"})
    assert main(["flow", "--scenario", str(sc), "--out", str(tmp_path / "o")]) == 1


def test_usage_errors_exit_with_one():
    with pytest.raises(SystemExit) as info:
        main(["analyze", "--lambda", "not-a-number"])
    assert info.value.code == 1


def test_module_errors_are_surfaced(tmp_path, capsys):
    sc = _write(tmp_path, {"name": "a", "kind": "Analyze1D", "b": "x"})
    assert main(["run", "--scenario", str(sc), "--out", str(tmp_path / "o")]) == 1
    assert "SignViolation" in capsys.readouterr().err


def test_flow_csv_header(tmp_path):
    sc = _write(tmp_path, {"name": "f", "kind": "Flow", "b": ["-x1", "-x2"], "x0": [3, 4], "horizon": 1})
    out = tmp_path / "o"
    assert main(["flow", "--scenario", str(sc), "--out", str(out)]) == 0
    lines = (out / "trajectory.csv").read_text().splitlines()
    assert lines[0] == "t,x1,x2"
    assert lines[1] == "0.0,3.0,4.0"


def test_flow_explosion_report(tmp_path):
    rep, code = run(load_scenario(SCENARIOS / "explosion.json"), tmp_path)
    assert code == 0 and rep["verdict"] == "exploded"
    assert abs(rep["results"]["tau_e_estimate"] - 0.5) <= 1e-3


def test_escape_reports(tmp_path):
    rep, code = run(load_scenario(SCENARIOS / "escape_linear.json"), tmp_path / "a")
    assert code == 0 and rep["verdict"] == "certified"
    assert rep["results"]["divergence"]["kind"] == "diverges"
    rep, code = run(load_scenario(SCENARIOS / "escape_wrong_bound.json"), tmp_path / "b")
    assert code == 3 and rep["verdict"] == "certificate_failed"
    assert rep["results"]["n_violations"] > 0


def test_weak_residual_outputs(tmp_path):
    sc = {"name": "w", "kind": "WeakResidual", "b": "-x", "density": "exp(-x^2)", "box": [[-3, 3]],
          "n_particles": 400, "t": 1, "n_time": 16, "bump": {"center": [0.5], "radius": 1}}
    out = tmp_path / "o"
    rep, code = run(sc, out)
    assert rep["results"]["tolerance"] == 1e-5
    assert (out / "pairings.csv").read_text().splitlines()[0] == "t,pair_f_u"
    assert (out / "mass_audit.csv").read_text().splitlines()[0] == "t,alive_mass,dead_mass"
    assert (out / "cloud.csv").read_text().splitlines()[0] == "id,x1,w,alive"
    assert len((out / "pairings.csv").read_text().splitlines()) == 18


def test_matrix_lab_report(tmp_path):
    out = tmp_path / "o"
    assert main(["matrix-lab", "--scenario", str(SCENARIOS / "matrix_fixed.json"), "--out", str(out)]) == 2
    rep = _report(out)
    assert rep["results"]["similarity_defect"] <= 1e-12
    assert rep["results"]["kernel"]["annihilator_dimension"] == 1
    curves = rep["results"]["extension_divergence"], rep["results"]["second_extension"]["extension_divergence"]
    assert all(len(c) == 4 for c in curves)
    header = (out / "extension_divergence.csv").read_text().splitlines()[0]
    assert header == "t,agreement_on_D,divergence_off_D,divergence_off_D_alt,distance_between_semigroups"


def test_reports_validate_against_report_schema(tmp_path):
    for f in sorted(SCENARIOS.glob("*.json")):
        if f.stem.startswith("weak"):
            continue  # covered above; the full-size clouds are slow
        rep, _ = run(load_scenario(f), tmp_path / f.stem)
        jsonschema.validate(rep, REPORT_SCHEMA)
        jsonschema.validate(json.loads((tmp_path / f.stem / "report.json").read_text()), REPORT_SCHEMA)


def test_schema_subcommand(capsys):
    assert main(["schema"]) == 0
    assert json.loads(capsys.readouterr().out) == json.loads(json.dumps(SCENARIO_SCHEMA))
    assert main(["schema", "--report"]) == 0
    assert "wall_clock_seconds" in capsys.readouterr().out


def test_seed_override_reaches_report(tmp_path):
    sc = _write(tmp_path, {"name": "m", "kind": "MatrixLab", "seed": 1, "lab": {"random": {"n": 5, "k": 2, "target": 0.3}}})
    main(["matrix-lab", "--scenario", str(sc), "--out", str(tmp_path / "a"), "--seed", "9"])
    main(["matrix-lab", "--scenario", str(sc), "--out", str(tmp_path / "b")])
    a, b = _report(tmp_path / "a"), _report(tmp_path / "b")
    assert a["scenario"]["seed"] == 9 and b["scenario"]["seed"] == 1
    assert a["results"]["scenario"]["L"] != b["results"]["scenario"]["L"]


def test_wall_clock_is_the_only_volatile_field(tmp_path):
    sc = load_scenario(SCENARIOS / "sign_changing.json")
    run(sc, tmp_path / "a")
    run(sc, tmp_path / "b")
    a = (tmp_path / "a" / "report.json").read_text().splitlines()
    b = (tmp_path / "b" / "report.json").read_text().splitlines()
    keep = [i for i, line in enumerate(a) if WALL_CLOCK_KEY not in line]
    assert [a[i] for i in keep] == [b[i] for i in keep]
    assert (tmp_path / "a" / "witness.csv").read_bytes() == (tmp_path / "b" / "witness.csv").read_bytes()
