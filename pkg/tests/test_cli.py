import csv
import json
import os

import pytest

from geocaustic.cli import (EXIT_CONVEXITY, EXIT_NUMERICAL, EXIT_OK, EXIT_PARSE,
                            EXIT_THRESHOLD, main)

from conftest import fixture_path


def run(args, capsys):
    code = main([str(a) for a in args])
    out, err = capsys.readouterr()
    return code, out, err


def test_trace_sphere_latitude(tmp_path, capsys):
    code, out, _ = run(["trace", "--curve", fixture_path("sphere_latitude.json"),
                        "--p-range", "-2..2", "--out", tmp_path], capsys)
    assert code == EXIT_OK
    names = sorted(os.listdir(tmp_path))
    assert names == ["branch_p-1.csv", "branch_p-2.csv", "branch_p1.csv", "branch_p2.csv",
                     "decomposition.json", "envelope.svg"]
    with open(tmp_path / "branch_p1.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["xi", "tau", "u", "v", "chart"] and len(rows) == 513
    doc = json.loads((tmp_path / "decomposition.json").read_text())
    assert [b["p"] for b in doc["branches"]] == [-2, -1, 0, 1, 2]
    assert doc["inflectional_geodesics"] == [] and doc["truncated"] is False
    assert doc["config"]["grid"] == 512 and doc["config"]["p_range"] == [-2, -1, 0, 1, 2]
    svg = (tmp_path / "envelope.svg").read_bytes()
    assert svg.startswith(b"<?xml") and b"p = 1" in svg
    assert "p = +1" in out


def test_trace_plane_circle_has_no_caustics(tmp_path, capsys):
    code, _, _ = run(["trace", "--curve", fixture_path("plane_circle.json"), "--out", tmp_path,
                      "--format", "json"], capsys)
    assert code == EXIT_OK
    assert os.listdir(tmp_path) == ["decomposition.json"]
    doc = json.loads((tmp_path / "decomposition.json").read_text())
    caustics = [b for b in doc["branches"] if b["p"] != 0]
    assert all(b["n_samples"] == 0 and b["singularities"] == [] for b in caustics)


def test_malformed_json_exits_2_without_outputs(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "kind": "expression",\n  "u": "xi"\n  "v": "0"\n}\n')
    out_dir = tmp_path / "out"
    code, _, err = run(["trace", "--curve", bad, "--out", out_dir], capsys)
    assert code == EXIT_PARSE
    assert "bad.json:4:3:" in err
    assert not out_dir.exists()


def test_bad_expression_reports_its_column(tmp_path, capsys):
    bad = tmp_path / "expr.json"
    bad.write_text('{"surface": "unit-sphere", "kind": "expression", "u": "xi",\n'
                   ' "v": "0.5 + sin(xi", "xi_range": [0, "2*pi"], "closed": true}\n')
    code, _, err = run(["trace", "--curve", bad, "--out", tmp_path / "o"], capsys)
    assert code == EXIT_PARSE
    # line 2, the unclosed parenthesis inside the string literal
    line = bad.read_text().splitlines()[1]
    col = line.index('"0.5 + sin(xi"') + 1 + 1 + len("0.5 + sin")
    assert f"expr.json:2:{col}:" in err


def test_unknown_surface_kind_is_a_parse_error(tmp_path, capsys):
    bad = tmp_path / "torus.json"
    bad.write_text('{"surface": {"kind": "torus"}, "u": "xi", "v": "0", "xi_range": [0, 1]}')
    code, _, err = run(["trace", "--curve", bad, "--out", tmp_path / "o"], capsys)
    assert code == EXIT_PARSE and "torus" in err


def test_singular_curve_exits_3_with_parameter(tmp_path, capsys):
    bad = tmp_path / "cusp.json"
    bad.write_text('{"surface": "euclidean-plane", "u": "xi^3", "v": "xi^2", '
                   '"xi_range": [-1, 1]}')
    code, _, err = run(["trace", "--curve", bad, "--out", tmp_path / "o"], capsys)
    assert code == EXIT_NUMERICAL
    assert "at xi = " in err
    assert not (tmp_path / "o").exists()


def test_verify_sphere_passes(tmp_path, capsys):
    code, out, _ = run(["verify", "--curve", fixture_path("sphere_latitude.json"),
                        "--out", tmp_path], capsys)
    assert code == EXIT_OK and "PASS" in out
    doc = json.loads((tmp_path / "verify.json").read_text())
    assert doc["theorem1"]["coverage"] == 1.0 and doc["theorem1"]["membership"] == 1.0
    assert doc["passed"] is True


def test_verify_with_too_small_horizon_fails(tmp_path, capsys):
    code, out, _ = run(["verify", "--curve", fixture_path("sphere_latitude.json"),
                        "--t-max", 2, "--out", tmp_path, "--format", "json"], capsys)
    assert code == EXIT_THRESHOLD
    doc = json.loads((tmp_path / "verify.json").read_text())
    assert doc["theorem1"]["truncated"] is True and doc["passed"] is False
    assert "truncated" in out


def test_verify_plane_cubic_covers_inflectional_line(tmp_path, capsys):
    code, _, _ = run(["verify", "--curve", fixture_path("plane_cubic.json"), "--t-max", 10,
                      "--out", tmp_path, "--format", "json"], capsys)
    assert code == EXIT_OK
    doc = json.loads((tmp_path / "verify.json").read_text())
    assert doc["theorem1"]["inflectional_coverage"] == [pytest.approx(1.0, abs=0.01)]


def test_stability_sphere_default_sweep(tmp_path, capsys):
    code, out, _ = run(["stability", "--curve", fixture_path("sphere_latitude.json"),
                        "--out", tmp_path], capsys)
    assert code == EXIT_OK and "PASS" in out
    doc = json.loads((tmp_path / "stability.json").read_text())
    assert sorted(doc["largest_stable_lambda"]) == ["1", "2", "3"]
    with open(tmp_path / "stability.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["p", "lambda", "kind", "base_count", "pert_count", "hausdorff", "verdict"]
    assert len(rows) == 1 + 3 * 3 * 2


def test_stability_lambda_zero_row(tmp_path, capsys):
    code, _, _ = run(["stability", "--curve", fixture_path("sphere_latitude.json"),
                      "--lambdas", "0,1e-3", "--p-range", "1..1", "--grid", 128,
                      "--out", tmp_path, "--format", "csv"], capsys)
    assert code == EXIT_OK
    with open(tmp_path / "stability.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert float(rows[0]["lambda"]) == 0.0 and float(rows[0]["hausdorff"]) == 0.0


def test_stability_hyperbolic_exits_4(tmp_path, capsys):
    code, _, err = run(["stability", "--curve", fixture_path("hyperbolic_circle.json"),
                        "--out", tmp_path / "o"], capsys)
    assert code == EXIT_CONVEXITY and "not closed" in err
    assert not (tmp_path / "o").exists()


def test_stability_open_curve_is_rejected(tmp_path, capsys):
    code, _, err = run(["stability", "--curve", fixture_path("ellipsoid_inflection.json"),
                        "--out", tmp_path / "o"], capsys)
    assert code == EXIT_PARSE and "closed" in err


def test_surfaces_lists_builtins(capsys):
    code, out, _ = run(["surfaces"], capsys)
    assert code == EXIT_OK
    for name in ("euclidean-plane", "unit-sphere", "hyperbolic-half-plane",
                 "ellipsoid-of-revolution", "conformal-perturbation", "custom"):
        assert name in out


def test_conjugate_on_sphere(tmp_path, capsys):
    code, out, _ = run(["conjugate", "--surface", fixture_path("sphere.json"),
                        "--point", "0.1,0.2", "--direction", "1,0.5", "--t-max", 10,
                        "--out", tmp_path, "--format", "json"], capsys)
    assert code == EXIT_OK
    doc = json.loads((tmp_path / "conjugate.json").read_text())
    taus = [r["tau"] for r in doc["records"]]
    assert taus == pytest.approx([3.141592653589793, 6.283185307179586, 9.42477796076938],
                                 abs=1e-8)


def test_negative_p_range_and_bad_flags(tmp_path, capsys):
    code, _, _ = run(["trace", "--curve", fixture_path("plane_circle.json"), "--p-range",
                      "-1..1", "--grid", 64, "--out", tmp_path, "--format", "json"], capsys)
    assert code == EXIT_OK
    code, _, err = run(["trace", "--curve", fixture_path("plane_circle.json"), "--grid", 10],
                       capsys)
    assert code == EXIT_PARSE and "grid" in err
    code, _, _ = run(["trace", "--bogus"], capsys)
    assert code == EXIT_PARSE
