import json

from graphrbm import read_csv
from graphrbm.cli import main


def test_check_demo_problem(capsys):
    assert main(["check"]) == 0
    out = capsys.readouterr().out
    assert "check: ok" in out
    assert "unbiasedness deviation" in out


def test_check_reports_uncovered(tmp_path, capsys):
    batches = {
        "parts": [["e1", "e2", "e3"], ["e4", "e5"], ["e6", "e7"], ["e8", "e9", "e10"]],
        "batches": [[1], [2], [3], [4]],
        "probs": [0.25, 0.25, 0.25, 0.25],
    }
    path = tmp_path / "batches.json"
    path.write_text(json.dumps(batches))
    code = main(["check", "--batches", str(path)])
    assert code == 2
    out = capsys.readouterr().out
    assert "FAILED" in out
    assert "v4" in out and "v7" in out


def test_solve_small(capsys):
    assert main(["solve", "--nodes-per-edge", "5", "--dt", "0.05", "--t-final", "0.2"]) == 0
    assert "squared L2 error" in capsys.readouterr().out


def test_rbm_small(capsys):
    code = main(
        ["rbm", "--nodes-per-edge", "5", "--dt", "0.05", "--h", "0.1",
         "--t-final", "0.2", "--seed", "9"]
    )
    assert code == 0
    out = capsys.readouterr().out
    assert "windows per batch" in out


def test_study_writes_csv(tmp_path, capsys):
    out = tmp_path / "study.csv"
    code = main(
        ["study", "--nodes-per-edge", "5", "--dt", "0.05", "--h", "0.05,0.1",
         "--t-final", "0.2", "--realizations", "2", "--seed", "3", "--out", str(out)]
    )
    assert code == 0
    records = read_csv(out)
    assert [(r.scheme, r.h) for r in records] == [("ie", 0.05), ("ie", 0.1)]


def test_study_rejects_misaligned_h(tmp_path):
    out = tmp_path / "study.csv"
    code = main(
        ["study", "--nodes-per-edge", "5", "--dt", "0.04", "--h", "0.05",
         "--t-final", "0.2", "--realizations", "1", "--seed", "3", "--out", str(out)]
    )
    assert code == 2
    assert not out.exists()


def test_missing_graph_file_is_config_error(capsys):
    assert main(["solve", "--graph", "/nonexistent/graph.json"]) == 2


def test_unknown_scheme_is_config_error():
    assert main(["solve", "--scheme", "rk4", "--nodes-per-edge", "5"]) == 2


def test_bad_subcommand_exit_code():
    assert main(["frobnicate"]) == 2


def test_theta_scheme_flag(capsys):
    code = main(
        ["solve", "--scheme", "theta", "--theta", "0.75", "--nodes-per-edge", "5",
         "--dt", "0.05", "--t-final", "0.2"]
    )
    assert code == 0
    assert "theta:0.75" in capsys.readouterr().out
