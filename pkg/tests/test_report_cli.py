from __future__ import annotations

import json
import math

import numpy as np
import pytest

from qcx import cli, report


# -- report helpers -----------------------------------------------------------------


def test_sanitize_converts_numpy_and_non_finite_values():
    out = report.sanitize({"a": np.int64(3), "b": np.array([1.5, np.inf]), "c": (np.bool_(True), -math.inf),
                           "d": float("nan")})
    assert out == {"a": 3, "b": [1.5, "inf"], "c": [True, "-inf"], "d": "nan"}
    assert type(out["a"]) is int and type(out["c"][0]) is bool


def test_dumps_is_sorted_valid_json_with_trailing_newline():
    text = report.dumps({"b": 1, "a": {"z": math.inf, "y": 2}})
    assert text.endswith("}\n")
    assert list(json.loads(text)) == ["a", "b"]
    assert json.loads(text)["a"]["z"] == "inf"


def test_build_report_layout_and_wall_time_removal():
    rep = report.build_report("classify", {"seed": 0}, {"q_index": 1}, "0.1.0", 0.5)
    assert rep["schema"] == report.SCHEMA_VERSION
    assert set(rep) == {"schema", "version", "subcommand", "config", "result", report.WALL_TIME_KEY}
    assert report.WALL_TIME_KEY not in report.without_wall_time(rep)


def test_csv_header_rows_and_line_endings():
    pts = np.array([[0.0, 1.0], [0.5, -0.25], [1.0, 2.0]])
    text = report.csv_text(pts, [1.0, -np.inf, 0.125])
    lines = text.split("\n")
    assert lines[0] == "x1,x2,value"
    assert len(lines) == 5 and lines[-1] == ""
    assert "\r" not in text
    assert lines[2] == "0.5,-0.25,-inf"


def test_csv_rejects_mismatched_lengths():
    with pytest.raises(ValueError):
        report.csv_text(np.zeros((2, 1)), [1.0])


# -- command line -------------------------------------------------------------------


def run(capsys, *argv):
    code = cli.main(list(argv))
    cap = capsys.readouterr()
    return code, cap.out.strip().splitlines(), cap.err


@pytest.mark.parametrize("expr, index", [("-x1^2", "1"), ("-x2^2", "1"), ("-x1^2-x2^2", "2"), ("x1^2+x2^2", "0")])
def test_classify_prints_q_index_last(capsys, expr, index):
    code, lines, _ = run(capsys, "classify", "--expr", expr, "--dim", "2", "--threads", "1")
    assert code == 0 and lines[-1] == index


def test_classify_complex_mode(capsys):
    code, lines, _ = run(capsys, "classify", "--expr", "x1^2-y1^2", "--dim", "1", "--complex", "--threads", "1")
    assert code == 0 and lines[-1] == "0"


def test_witness_found_is_success(capsys):
    code, lines, _ = run(capsys, "witness", "--expr", "-x1^2-x2^2", "--dim", "2", "--q", "1", "--threads", "1")
    assert code == 0 and "witness margin" in lines[-1]
    code, lines, _ = run(capsys, "witness", "--expr", "-x1^2", "--dim", "2", "--q", "1", "--threads", "1")
    assert code == 0 and lines[-1] == "none"


def test_set_check_and_tube(capsys, tmp_path):
    box = json.dumps({"box": [[0, 1], [0, 1]]})
    code, lines, _ = run(capsys, "set-check", "--set", box, "--q", "0", "--slices", "16", "--threads", "1")
    assert code == 0 and "consistent" in lines[-1]
    out = tmp_path / "tube.json"
    code, _, _ = run(capsys, "tube", "--set", box, "--q", "0", "--a", "1", "--slices", "16",
                     "--threads", "1", "--out", str(out))
    rep = json.loads(out.read_text())
    assert code == 0 and rep["subcommand"] == "tube" and rep["config"]["a"] == "1"


def test_graph_demo_reports_violation_on_graph(capsys, tmp_path):
    out = tmp_path / "g.json"
    code, _, _ = run(capsys, "graph-demo", "--f", "-x1^2", "--x1", "[-1]", "--x2", "[1]", "--threads", "1",
                     "--out", str(out))
    verdict = json.loads(out.read_text())["result"]["verdict"]
    assert code == 0 and verdict["status"] == "violated"
    x, y = verdict["point"]
    assert abs(y + x * x) <= 1e-6


def test_report_and_csv_files(capsys, tmp_path):
    out, csv_path = tmp_path / "r.json", tmp_path / "r.csv"
    code, _, _ = run(capsys, "classify", "--expr", "-x1^2", "--dim", "2", "--resolution", "7", "--threads", "1",
                     "--out", str(out), "--csv", str(csv_path), "--records")
    assert code == 0
    rep = json.loads(out.read_text())
    assert rep["schema"] == "qcx-report-v1" and rep["result"]["q_index"] == 1
    assert rep["config"]["resolution"] == 7 and "threads" not in rep["config"]
    assert len(rep["result"]["records"]) == 49
    raw = csv_path.read_bytes()
    assert b"\r" not in raw and raw.count(b"\n") == 49 + 1


def test_regularize_csv_row_count(capsys, tmp_path):
    csv_path = tmp_path / "reg.csv"
    code, _, _ = run(capsys, "regularize", "--expr", "x1^2-x2^2", "--dim", "2", "--resolution", "9",
                     "--threads", "1", "--csv", str(csv_path))
    assert code == 0
    lines = csv_path.read_text().splitlines()
    n = round(math.sqrt(len(lines) - 1))
    assert n * n == len(lines) - 1


@pytest.mark.parametrize("argv", [
    ["classify", "--expr", "x1+", "--dim", "1"],
    ["classify", "--expr", "x3", "--dim", "2"],
    ["classify", "--expr", "x1", "--dim", "1", "--resolution", "1"],
    ["witness", "--expr", "x1", "--dim", "1", "--q", "-1"],
    ["set-check", "--set", "{not json", "--q", "0"],
    ["graph-demo", "--f", "x1", "--k", "2"],
])
def test_usage_errors_exit_2(capsys, argv):
    code, _, err = run(capsys, *argv, "--threads", "1")
    assert code == 2 and err.startswith("qcx:")


def test_argparse_errors_exit_2(capsys):
    with pytest.raises(SystemExit) as info:
        cli.main(["classify", "--dim", "1"])
    assert info.value.code == 2


def test_numeric_failure_exits_3(capsys):
    code, _, err = run(capsys, "classify", "--expr", "ln(x1)", "--dim", "1", "--box", "[[-1,-0.5]]", "--threads", "1")
    assert code == 3 and "numeric" in err


def _report_bytes(tmp_path, name, argv, threads):
    out = tmp_path / name
    assert cli.main(argv + ["--threads", str(threads), "--out", str(out)]) == 0
    return report.dumps(report.without_wall_time(json.loads(out.read_text())))


@pytest.mark.parametrize("argv", [
    ["witness", "--expr", "-x1^2-x2^2+x3^2", "--dim", "3", "--q", "1", "--slices", "16"],
    ["classify", "--expr", "x1^3-x2^2", "--dim", "2", "--resolution", "9", "--records"],
])
def test_reports_independent_of_thread_count(capsys, tmp_path, argv):
    a = _report_bytes(tmp_path, "a.json", argv, 1)
    b = _report_bytes(tmp_path, "b.json", argv, 8)
    capsys.readouterr()
    assert a == b


def test_threads_fall_back_to_environment(monkeypatch):
    monkeypatch.setenv("QCX_THREADS", "3")
    from qcx._parallel import resolve_threads
    assert resolve_threads(None) == 3
    assert resolve_threads(2) == 2
    with pytest.raises(ValueError):
        resolve_threads(0)
