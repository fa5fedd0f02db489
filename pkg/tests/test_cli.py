import csv
import os

import pytest

from xdgtrack.cli import main, read_config


def run(tmp_path, name, *extra):
    out = tmp_path / name
    code = main(["run", "--case", "burgers_straight", "--max-iter", "2", "--resolution", "2",
                 "--out", str(out), *extra])
    return code, out


def read_summary(path):
    out = {}
    for line in open(path):
        k, v = line.rstrip("\n").split(" = ", 1)
        out[k] = v
    return out


def test_run_writes_declared_outputs(tmp_path):
    code, out = run(tmp_path, "a")
    assert code in (0, 1)
    files = set(os.listdir(out))
    assert {"trace.csv", "summary.txt", "levelset.txt"} <= files
    assert {f"field_{k:03d}.csv" for k in range(3)} <= files
    assert {f"interface_{k:03d}.csv" for k in range(3)} <= files
    rows = list(csv.DictReader(open(out / "trace.csv")))
    assert len(rows) == 3 and rows[0]["iteration"] == "0"
    field = list(csv.reader(open(out / "field_000.csv")))
    assert field[0] == ["x", "y", "phi_s", "u0"]
    assert len(field) == 1 + 20 * 20
    summary = read_summary(out / "summary.txt")
    assert summary["case"] == "burgers_straight"
    assert summary["converged"] in ("true", "false")
    assert (code == 0) == (summary["converged"] == "true")
    assert "config.beta" in summary and summary["seed"] == "0"


def test_runs_are_deterministic(tmp_path):
    _, a = run(tmp_path, "a", "--snapshot-every", "0")
    _, b = run(tmp_path, "b", "--snapshot-every", "0")
    assert (a / "trace.csv").read_bytes() == (b / "trace.csv").read_bytes()
    assert not any(f.startswith("field_") for f in os.listdir(a))


def test_config_file_overrides(tmp_path):
    cfg = tmp_path / "solver.cfg"
    cfg.write_text("# tighter line search\nbeta = 1e-3\nmin_iters = (5, 5, 5, 5)\nreinit = false\n")
    assert read_config(cfg) == {"beta": 1e-3, "min_iters": [5, 5, 5, 5], "reinit": False}
    code, out = run(tmp_path, "c", "--config", str(cfg), "--snapshot-every", "0")
    assert read_summary(out / "summary.txt")["config.beta"] == "0.001"


def test_bad_arguments_exit_with_usage_error(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["run", "--case", "nonexistent"])
    assert exc.value.code == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("no_such_setting = 1\n")
    with pytest.raises(SystemExit) as exc:
        main(["run", "--case", "advection", "--config", str(bad), "--out", str(tmp_path / "x")])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 2


def test_verify_suites(capsys):
    assert main(["verify", "--suite", "kkt"]) == 0
    text = capsys.readouterr().out
    assert "kkt.three_cell_fixture" in text and "PASS" in text and "0 failed" in text
    assert main(["verify", "--suite", "flux", "--seed", "7"]) == 0
    assert main(["verify", "--suite", "nope"]) == 2
