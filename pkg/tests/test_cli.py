import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from qbdsolve.cli import main

# caps large enough that the truncated chains and the LPCA solution (one
# dimension unbounded) agree far below the comparison tolerance
PRIORITY = {"family": "Priority", "params": {"lambda1": 0.2, "lambda2": 0.3, "mu": 1.0}, "truncation": {"levels": 40, "stages": 40}}
BATCH = {
    "family": "BatchPriority",
    "params": {"lambda1": 0.2, "lambda2": 0.2, "mu": 1.0},
    "batch1": {"1": 0.5, "2": 0.5},
    "batch2": {"1": 1.0},
    "truncation": {"levels": 20, "stages": 20},
}
HETERO = {"family": "LongestQueueHetero", "params": {"lambda1": 0.3, "lambda2": 0.5, "mu": 1.0}, "truncation": {"levels": 15, "stages": 15}}
# two-state levels whose down blocks hit both states of the level below
TWO_COLUMN = {
    "blocks": {
        "W": [[[-1.0, 0.5], [0.5, -1.0]], [[-3.0, 0.5], [0.5, -3.0]], [[-2.5, 0.5], [0.5, -2.5]]],
        "U": [[[0.5, 0.0], [0.0, 0.5]], [[0.5, 0.0], [0.0, 0.5]]],
        "D": [[[1.0, 1.0], [1.0, 1.0]], [[1.0, 1.0], [1.0, 1.0]]],
    }
}


@pytest.fixture
def spec_file(tmp_path):
    def write(data, name="spec.json"):
        path = tmp_path / name
        path.write_text(json.dumps(data) if not isinstance(data, str) else data)
        return str(path)

    return write


@pytest.mark.parametrize("method", ["auto", "qdesa++", "qdesa+", "qdesa", "lpca", "direct"])
def test_solve_priority_every_method(spec_file, tmp_path, method):
    out = tmp_path / "r.json"
    assert main(["solve", "--spec", spec_file(PRIORITY), "--method", method, "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    assert report["method_used"] == ("qdesa++" if method == "auto" else method)
    assert report["num_states"] == 1600
    assert abs(sum(p["probability"] for p in report["pi"]) - 1) < 1e-12
    assert report["residuals"]["generator_residual_inf"] < 1e-12
    assert "variant" in report and "timings" in report


def test_json_probabilities_round_trip(spec_file, tmp_path):
    from qbdsolve.models import ModelSpec
    from qbdsolve.solvers import solve

    out = tmp_path / "r.json"
    main(["solve", "--spec", spec_file(PRIORITY), "--method", "qdesa++", "--out", str(out)])
    written = np.array([p["probability"] for p in json.loads(out.read_text())["pi"]])
    direct = solve(ModelSpec.from_dict(PRIORITY), "qdesa++").distribution()
    assert np.array_equal(written, direct)


def test_csv_output(spec_file, tmp_path):
    out = tmp_path / "r.csv"
    assert main(["solve", "--spec", spec_file(PRIORITY), "--format", "csv", "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert list(rows[0]) == ["level", "position", "state", "probability"]
    assert len(rows) == 1600
    assert rows[0]["state"] == "0;0"
    assert abs(sum(float(r["probability"]) for r in rows) - 1) < 1e-12


def test_top_k(spec_file, tmp_path):
    out = tmp_path / "r.json"
    main(["solve", "--spec", spec_file(PRIORITY), "--top-k", "5", "--out", str(out)])
    pi = [p["probability"] for p in json.loads(out.read_text())["pi"]]
    assert len(pi) == 5 and pi == sorted(pi, reverse=True)


@pytest.mark.parametrize(
    "data, method, code",
    [
        (BATCH, "lpca", 2),
        (HETERO, "lpca", 2),
        (HETERO, "qdesa++", 2),
        (TWO_COLUMN, "qdesa", 2),
        (TWO_COLUMN, "direct", 0),
        ({"family": "Feedback", "params": {}}, "auto", 4),
        ({"family": "Priority", "params": {"lambda1": 1}}, "auto", 4),
        ("{broken", "auto", 4),
    ],
)
def test_solve_exit_codes(spec_file, data, method, code):
    assert main(["solve", "--spec", spec_file(data), "--method", method]) == code


def test_auto_picks_best_variant(spec_file, tmp_path):
    out = tmp_path / "r.json"
    main(["solve", "--spec", spec_file(HETERO), "--out", str(out)])
    assert json.loads(out.read_text())["method_used"] == "qdesa+"
    main(["solve", "--spec", spec_file(TWO_COLUMN), "--out", str(out)])
    assert json.loads(out.read_text())["method_used"] in ("lpca", "direct")


def test_usage_errors_exit_4(spec_file):
    assert main(["solve", "--spec", spec_file(PRIORITY), "--method", "bogus"]) == 4
    assert main([]) == 4
    assert main(["solve"]) == 4


def test_missing_spec_file_exit_4(tmp_path):
    assert main(["solve", "--spec", str(tmp_path / "none.json")]) == 4


def test_unwritable_output_exit_4(spec_file, tmp_path):
    assert main(["solve", "--spec", spec_file(PRIORITY), "--out", str(tmp_path / "no" / "dir" / "r.json")]) == 4


def test_compare_agreeing_methods(spec_file, tmp_path):
    out = tmp_path / "c.json"
    code = main(["compare", "--spec", spec_file(PRIORITY), "--methods", "qdesa++,lpca,direct", "--out", str(out)])
    assert code == 0
    report = json.loads(out.read_text())
    assert report["passed"] and len(report["pairs"]) == 3
    assert all(p["linf_error"] < 1e-7 for p in report["pairs"])


def test_compare_partial_failure_still_reports(spec_file, tmp_path):
    out = tmp_path / "c.json"
    code = main(["compare", "--spec", spec_file(BATCH), "--methods", "qdesa,lpca,direct", "--out", str(out)])
    assert code == 2
    report = json.loads(out.read_text())
    assert "lpca" in report["errors"]
    ok = [p for p in report["pairs"] if "error" not in p]
    assert ok and ok[0]["passed"]


def test_compare_csv(spec_file, tmp_path):
    out = tmp_path / "c.csv"
    main(["compare", "--spec", spec_file(PRIORITY), "--methods", "qdesa,direct", "--format", "csv", "--out", str(out)])
    rows = list(csv.DictReader(out.open()))
    assert rows[0]["method_a"] == "qdesa" and rows[0]["passed"] == "True"


def test_compare_needs_two_methods(spec_file):
    assert main(["compare", "--spec", spec_file(PRIORITY), "--methods", "direct"]) == 4


def test_validate(spec_file, capsys):
    assert main(["validate", "--spec", spec_file(HETERO)]) == 0
    text = capsys.readouterr().out
    assert "generator: ok" in text
    assert "qdesa+   applicable" in text
    assert "lpca     not applicable" in text


def test_bench_small(tmp_path):
    out = tmp_path / "b.csv"
    assert main(["bench", "--family", "priority", "--sizes", "8,16,32,64", "--repeats", "3", "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    slopes = [r for r in rows if r["kind"] == "slope"]
    assert {r["algorithm"] for r in slopes} == {"qdesa++", "lpca"}
    assert all(float(r["residual_inf"]) < 1e-10 for r in rows if r["kind"] == "record")


@pytest.mark.parametrize("sizes", ["8,16,32", "8,32,16,64", "a,b,c,d"])
def test_bench_rejects_bad_sizes(tmp_path, sizes):
    assert main(["bench", "--family", "priority", "--sizes", sizes, "--out", str(tmp_path / "b.csv")]) == 4


def test_module_entry_point(spec_file):
    proc = subprocess.run(
        [sys.executable, "-m", "qbdsolve", "solve", "--spec", spec_file(HETERO), "--method", "lpca"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 2
    assert "lpca" in proc.stderr.lower() or "stage" in proc.stderr.lower()
