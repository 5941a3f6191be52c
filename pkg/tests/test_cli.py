import json
import subprocess
import sys

import pytest

from lowrank_lab import bound_lab
from lowrank_lab.cli import main

from conftest import FIXTURES


def run(args, capsys):
    code = main(args)
    out, err = capsys.readouterr()
    return code, out, err


def test_solve_writes_outputs(tmp_path, capsys):
    code, out, _ = run(["solve", "--config", str(FIXTURES / "lyapunov.json"), "--out", str(tmp_path), "-v"], capsys)
    assert code == 0
    assert out.splitlines()[0] == "lyapunov: PASS"
    names = sorted(p.name for p in tmp_path.iterdir())
    assert "lyapunov.json" in names and "lyapunov_trace.csv" in names
    assert "lyapunov_curve_t=1.csv" in names
    doc = json.loads((tmp_path / "lyapunov.json").read_text())
    assert doc["verdict"] == "PASS" and doc["environment"]["seed"] == 7


def test_validate_rejects_full_splitting(capsys):
    code, _, err = run(["validate-config", "--config", str(FIXTURES / "full_splitting.json")], capsys)
    assert code == 1
    assert err.startswith("error: splitting_full:")


def test_validate_accepts_cells(capsys):
    code, out, _ = run(["validate-config", "--config", str(FIXTURES / "cells.json")], capsys)
    assert code == 0
    assert out.splitlines() == ["cells_0: ok (linear)", "cells_1: ok (linear)", "cells_2: ok (linear)"]


def test_eigen_degenerate(tmp_path, capsys):
    code, _, err = run(["eigen", "--config", str(FIXTURES / "degenerate.json"), "--out", str(tmp_path)], capsys)
    assert code == 1
    assert "lambda1_degenerate" in err


def test_unknown_subcommand(capsys):
    code, _, err = run(["fly", "--config", "x.json"], capsys)
    assert code == 1
    assert "unknown_subcommand" in err


def test_missing_config_flag(capsys):
    code, _, err = run(["solve"], capsys)
    assert code == 1 and "usage_error" in err


def test_mode_mismatch(capsys):
    code, _, err = run(["eigen", "--config", str(FIXTURES / "lyapunov.json")], capsys)
    assert code == 1 and "mode_mismatch" in err


def test_missing_config_file(tmp_path, capsys):
    code, _, err = run(["solve", "--config", str(tmp_path / "none.json")], capsys)
    assert code == 1 and "config_not_found" in err


def test_failed_verdict_exits_two(tmp_path, capsys, monkeypatch):
    monkeypatch.setattr(bound_lab, "bound_thm21_full", lambda *a, **k: 0.0)
    code, out, _ = run(["solve", "--config", str(FIXTURES / "lyapunov.json"), "--out", str(tmp_path)], capsys)
    assert code == 2
    assert "lyapunov: FAIL" in out and "bound_thm21_full" in out
    assert (tmp_path / "lyapunov.json").exists()


def test_overrides_reach_report(tmp_path, capsys):
    args = ["solve", "--config", str(FIXTURES / "lyapunov.json"), "--out", str(tmp_path),
            "--seed", "99", "--steps", "5", "--eps-rank", "1e-9"]
    assert run(args, capsys)[0] == 0
    doc = json.loads((tmp_path / "lyapunov.json").read_text())
    assert doc["environment"]["seed"] == 99
    assert doc["config"]["n_steps"] == 5
    assert doc["tolerance"]["eps_rank"] == 1e-9


def test_env_output_dir(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("LOWRANK_LAB_OUT", str(tmp_path / "env"))
    assert run(["spectrum", "--config", str(FIXTURES / "spectrum.json")], capsys)[0] == 0
    assert (tmp_path / "env" / "spectrum.json").exists()


def strip(doc_text):
    doc = json.loads(doc_text)
    doc["environment"].pop("timestamp")
    return doc


def test_runs_are_byte_identical_apart_from_timestamp(tmp_path, capsys):
    for sub in ("a", "b"):
        args = ["sweep", "--config", str(FIXTURES / "sweep.json"), "--out", str(tmp_path / sub)]
        assert run(args, capsys)[0] == 0
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert files == sorted(p.name for p in (tmp_path / "b").iterdir())
    for name in files:
        a, b = (tmp_path / "a" / name).read_text(), (tmp_path / "b" / name).read_text()
        if name.endswith(".json"):
            assert strip(a) == strip(b)
        else:
            assert a == b


def test_jobs_keeps_cell_order(tmp_path, capsys):
    code, out, _ = run(["solve", "--config", str(FIXTURES / "cells.json"), "--out", str(tmp_path), "--jobs", "2"],
                       capsys)
    assert code == 0
    assert out.splitlines() == ["cells_0: PASS", "cells_1: PASS", "cells_2: PASS"]


@pytest.mark.parametrize("flag", [["--jobs", "0"], ["--steps", "-1"]])
def test_bad_flag_values(flag, capsys):
    code, _, err = run(["solve", "--config", str(FIXTURES / "lyapunov.json"), *flag], capsys)
    assert code == 1 and "usage_error" in err


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "lowrank_lab", "commuting", "--config", str(FIXTURES / "commuting.json"),
         "--out", str(tmp_path)],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.startswith("commuting: PASS")
