import csv
import json
import math
import subprocess
import sys

import pytest

from fracfb.cli import main
from fracfb.config import ConfigError, load_config, parse_config
from fracfb.feedback import SWEEP_COLUMNS, SimReport


def write_config(tmp_path, **fields):
    path = tmp_path / "run.json"
    path.write_text(json.dumps(fields, indent=2))
    return str(path)


def printed(capsys, key):
    for line in capsys.readouterr().out.splitlines():
        if line.startswith(key + " "):
            return float(line.split()[1])
    raise AssertionError(f"no '{key}' line printed")


def test_no_arguments_prints_usage(capsys):
    assert main([]) == 64
    assert "usage" in capsys.readouterr().err


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "fracfb"], capture_output=True, text=True)
    assert proc.returncode == 64 and "usage" in proc.stderr


def test_simulate_writes_csv_and_json(tmp_path, capsys):
    out = tmp_path / "deep" / "nested"
    cfg = write_config(tmp_path, starts=[{"w0": 0.5}, {"t": 0.25, "w0": -1.0}], diameters=[0.25, 1 / 16],
                       strategies=["example", "smooth"])
    assert main(["simulate", "--config", cfg, "--out", str(out)]) == 0
    rows = list(csv.DictReader((out / "runs.csv").open()))
    assert len(rows) == 2 * 2 * 2
    assert tuple(rows[0]) == ("start", "t", "w0", "strategy") + SWEEP_COLUMNS
    reports = json.loads((out / "runs.json").read_text())
    assert len(reports) == 8
    back = SimReport.from_json(reports[0])
    assert math.isclose(back.cost, float(rows[0]["cost"]), rel_tol=1e-11)
    assert "cost=" in capsys.readouterr().out


def test_simulate_quiet_and_deterministic(tmp_path, capsys):
    cfg = write_config(tmp_path, starts=[{"w0": 0.2}], diameters=[0.125])
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "a"), "--quiet"]) == 0
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "b"), "--quiet"]) == 0
    assert capsys.readouterr().out == ""

    def strip_time(path):
        return [{k: v for k, v in r.items() if k != "wall_time_ms"} for r in csv.DictReader(path.open())]

    assert strip_time(tmp_path / "a" / "runs.csv") == strip_time(tmp_path / "b" / "runs.csv")


def test_sweep_csv_rows(tmp_path):
    cfg = write_config(tmp_path, starts=[{"w0": 0.5}], diameters=[1 / 4, 1 / 16, 1 / 64], out=str(tmp_path / "o"))
    assert main(["sweep", "--config", cfg, "--steps", "4", "--quiet"]) == 0
    rows = list(csv.DictReader((tmp_path / "o" / "sweep.csv").open()))
    assert [int(r["k"]) for r in rows] == [4, 16, 64]
    assert float(rows[-1]["epsilon"]) <= 0.05


def test_sweep_thread_fan_out(tmp_path, monkeypatch):
    monkeypatch.setenv("FRACFB_THREADS", "2")
    cfg = write_config(tmp_path, starts=[{"w0": 0.5}, {"w0": -0.5}], diameters=[0.25], out=str(tmp_path / "o"))
    assert main(["sweep", "--config", cfg, "--quiet"]) == 0
    rows = list(csv.DictReader((tmp_path / "o" / "sweep.csv").open()))
    assert [r["start"] for r in rows] == ["0", "1"]


def test_bad_thread_count(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("FRACFB_THREADS", "zero")
    assert main(["value", "--config", write_config(tmp_path), "--quiet"]) == 1
    assert "FRACFB_THREADS" in capsys.readouterr().err


@pytest.mark.parametrize("fields, needle", [
    ({"alpha": 1.5}, "alpha out of (0,1)"),
    ({"alpha": 0.5, "colour": "red"}, "colour"),
    ({"g": "exp"}, "unknown g"),
    ({"diameters": [0.1, 0.2]}, "decreasing"),
    ({"problem": "coupled", "strategies": ["example"]}, "example"),
    ({"bruteforce_pieces": 13}, "enumeration limit"),
])
def test_config_errors_exit_1(tmp_path, capsys, fields, needle):
    assert main(["simulate", "--config", write_config(tmp_path, **fields)]) == 1
    assert needle in capsys.readouterr().err


def test_config_diagnostic_has_line(tmp_path):
    with pytest.raises(ConfigError, match=r"run.json:3: field 'alpha'"):
        load_config(write_config(tmp_path, T=1.0, alpha=2.0))
    with pytest.raises(ConfigError, match=r"<cfg>:1:\d+: invalid JSON"):
        parse_config("{alpha: 1}", "<cfg>")
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.json")


def test_invalid_json_exit_1(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{\n  \"alpha\": 0.5,\n")
    assert main(["value", "--config", str(path)]) == 1


def test_dderiv_origin(tmp_path, capsys):
    cfg = write_config(tmp_path, direction=[0.0])
    assert main(["dderiv", "--config", cfg]) == 0
    out = capsys.readouterr().out
    formula = float(out.split("formula ")[1].split()[0])
    fd = float(out.split("fd ")[1].split()[0])
    assert abs(formula - 4.0) <= 5e-2
    assert abs(formula - fd) <= 0.02 * abs(formula)
    assert "active [0, 2]" in out


def test_dderiv_optimal_direction(tmp_path, capsys):
    assert main(["dderiv", "--config", write_config(tmp_path, direction=[math.sqrt(math.pi)])]) == 0
    assert abs(printed(capsys, "formula")) <= 5e-2


def test_dderiv_at_horizon_exit_1(tmp_path, capsys):
    assert main(["dderiv", "--config", write_config(tmp_path, starts=[{"t": 1.0, "w0": 0.0}])]) == 1
    assert "t < T" in capsys.readouterr().err


def test_dderiv_direction_size(tmp_path):
    assert main(["dderiv", "--config", write_config(tmp_path, direction=[1.0, 2.0])]) == 1


def test_value_command(tmp_path, capsys):
    cfg = write_config(tmp_path, starts=[{"w0": 0.5}])
    assert main(["value", "--config", cfg, "--steps", "256"]) == 0
    out = capsys.readouterr().out
    closed = float(out.split("closed-form ")[1].split()[0])
    brute = float(out.split("bruteforce ")[1].split()[0])
    env = float(out.split("envelope ")[1].split()[0])
    assert closed == pytest.approx(-6.25)
    assert abs(brute - closed) <= 5e-2 and abs(env - closed) <= 5e-2


def test_coupled_problem_value(tmp_path, capsys):
    cfg = write_config(tmp_path, problem="coupled", strategies=["envelope"], direction=[0.0, 0.0],
                       starts=[{"w0": [0.3, -0.2]}], bruteforce_pieces=2, sensitivity_m=128)
    assert main(["value", "--config", cfg]) == 0
    assert "closed-form" not in capsys.readouterr().out


def test_solver_failure_exit_2(tmp_path, capsys):
    # one solver step over the whole horizon breaks the contraction check
    cfg = write_config(tmp_path, problem="coupled", strategies=["envelope"], starts=[{"w0": [0.0, 0.0]}],
                       diameters=[1.0], steps_per_piece=1)
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "solver failure" in capsys.readouterr().err


def test_selftest_subset(capsys):
    assert main(["selftest", "--criteria", "10"]) == 0
    assert "[PASS] 10" in capsys.readouterr().out


def test_selftest_detects_perturbed_gamma(capsys):
    assert main(["selftest", "--criteria", "10", "--perturb-gamma", "1.001"]) == 3
    captured = capsys.readouterr()
    assert "[FAIL] 10" in captured.out and "criterion 10 failed" in captured.err
