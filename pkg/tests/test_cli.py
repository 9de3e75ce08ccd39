import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from pdrci import cli
from pdrci.model import problem_to_dict

DI_ARGS = ["synthesize", "--preset", "demo-double-integrator", "--iters1", "2", "--iters2", "2",
           "--mc-samples", "5000", "--seed", "7"]


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def di_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("di")
    assert cli.main(DI_ARGS + ["--out", str(out)]) == 0
    return out


# -- synthesize -----------------------------------------------------------------------------

def test_synthesize_one_dim(tmp_path, capsys):
    code, out, _ = run(["synthesize", "--preset", "demo-1d", "--np", "1", "--iters1", "2",
                        "--iters2", "2", "--mc-samples", "2000", "--out", tmp_path], capsys)
    assert code == 0
    summary = json.loads(out)
    assert summary["status"] == "ok" and summary["files"] == ["result.json", "trace.csv"]
    result, _ = cli.load_result(tmp_path / "result.json")
    poly = result.robust_set()
    assert np.min(poly.g / np.abs(poly.F[:, 0])) >= 0.9


def test_trace_rows_match_budgets(di_run):
    rows = cli.read_trace_csv(di_run / "trace.csv")
    assert len(rows) == 2 + 2
    assert list(rows[0]) == ["iter", "stage", "detW", "sigma_sum", "mc_volume", "exact_area",
                             "solver_status", "wall_s"]
    assert [r["stage"] for r in rows] == ["1", "1", "2", "2"]


def test_polygons_csv_columns(di_run):
    with open(di_run / "polygons.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["xi_index", "slice_id", "vertex_id", "x1", "x2"]
    assert all(len(r) == 5 for r in rows)
    ids = {(r[0], r[1]) for r in rows[1:]}
    assert ("-1", "robust") in ids and len(ids) == 5 + 1


def test_result_json_byte_identical(di_run, tmp_path):
    assert cli.main(DI_ARGS + ["--out", str(tmp_path)]) == 0
    a = json.loads((di_run / "result.json").read_text())
    b = json.loads((tmp_path / "result.json").read_text())
    a.pop("timing"), b.pop("timing")
    assert cli.dumps(a) == cli.dumps(b)
    strip = lambda p: [line.rsplit(",", 1)[0] for line in p.read_text().splitlines()]
    assert strip(di_run / "trace.csv") == strip(tmp_path / "trace.csv")


def test_result_round_trip(di_run, tmp_path):
    result, problem = cli.load_result(di_run / "result.json")
    cli.write_result(tmp_path / "again.json", result, problem, "demo-double-integrator",
                     timestamp=0.0)
    again, problem2 = cli.load_result(tmp_path / "again.json")
    assert all(np.array_equal(p, q) for p, q in zip(result.polytope.P, again.polytope.P))
    assert np.array_equal(result.polytope.W, again.polytope.W)
    assert all(np.array_equal(p, q) for p, q in zip(result.K, again.K))
    for r, q in zip(result.trace, again.trace, strict=True):
        assert [str(v) for v in r.as_row()] == [str(v) for v in q.as_row()]
    assert problem_to_dict(problem) == problem_to_dict(problem2)


def test_float_format_is_lossless():
    values = np.random.default_rng(0).standard_normal(50) * 10.0 ** np.arange(-25, 25)
    assert np.array_equal(np.array(json.loads(cli.dumps(values.tolist()))), values)
    assert cli.dumps({"b": 1.0, "a": float("nan")}) == '{\n  "a": null,\n  "b": 1.0\n}'


def test_synthesis_failure_exit_code(tmp_path, capsys):
    problem = {"n_x": 1, "n_u": 1, "n_w": 1, "n_z": 1, "N_xi": 2,
               "A": [[[-2.0]], [[2.0]]], "B": [[[1.0]], [[1.0]]], "E": [[[0.0]], [[0.0]]],
               "C": [[[1.0]], [[1.0]]], "D": [[[0.0]], [[0.0]]],
               "H_x": [[0.0], [0.0]], "H_u": [[1e12], [-1e12]], "G": [[1.0]]}
    path = tmp_path / "degenerate.json"
    path.write_text(json.dumps(problem))
    code, _, err = run(["synthesize", "--problem", path, "--np", "1", "--out", tmp_path], capsys)
    assert code == 3
    assert json.loads(err)["error"] == "synthesis"


def test_invalid_flags_exit_code(tmp_path, capsys):
    code, _, err = run(["synthesize", "--preset", "demo-double-integrator", "--np", "1",
                        "--out", tmp_path], capsys)
    assert code == 2 and "n_p" in json.loads(err)["message"]


def test_missing_problem_file(tmp_path, capsys):
    code, _, err = run(["synthesize", "--problem", tmp_path / "nope.json"], capsys)
    assert code == 2 and json.loads(err)["error"] == "input"


# -- verify ----------------------------------------------------------------------------------

def test_verify_certified_result(di_run, tmp_path, capsys):
    code, out, _ = run(["verify", "--result", di_run / "result.json", "--trials", "20000",
                        "--out", tmp_path], capsys)
    assert code == 0, out
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["passed"] and report["checks"]["invariance"]["trials"] == 20000


def test_verify_tampered_result(di_run, tmp_path, capsys):
    data = json.loads((di_run / "result.json").read_text())
    data["W"] = (2 * np.array(data["W"])).tolist()
    path = tmp_path / "tampered.json"
    path.write_text(json.dumps(data))
    code, out, _ = run(["verify", "--result", path, "--trials", "20000", "--out", tmp_path],
                       capsys)
    assert code == 1
    assert json.loads(out)["violations"] > 0


def test_verify_missing_file(tmp_path, capsys):
    code, _, err = run(["verify", "--result", tmp_path / "missing.json", "--out", tmp_path],
                       capsys)
    assert code == 2
    assert json.loads(err)["status"] == "error"


def test_verify_corrupt_file(tmp_path, capsys):
    path = tmp_path / "corrupt.json"
    path.write_text('{"P": [1, 2]}')
    code, _, _ = run(["verify", "--result", path, "--out", tmp_path], capsys)
    assert code == 2


# -- export-plot ------------------------------------------------------------------------------

def test_export_plot(di_run, tmp_path, capsys):
    code, out, _ = run(["export-plot", "--result", di_run / "result.json", "--out", tmp_path],
                       capsys)
    assert code == 0
    assert json.loads(out)["files"] == ["trace.csv", "polygons.csv", "grid.csv",
                                        "trajectories.csv"]
    grid = list(csv.DictReader((tmp_path / "grid.csv").open()))
    assert sorted(float(g["xi1"]) for g in grid) == [0.0, 0.25, 0.5, 0.75, 1.0]
    traj = list(csv.DictReader((tmp_path / "trajectories.csv").open()))
    assert len(traj) == 20 * 301


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "pdrci.cli", "--help"], capture_output=True,
                          text=True)
    assert proc.returncode == 0 and "synthesize" in proc.stdout
