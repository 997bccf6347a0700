import csv
import io
import json
import subprocess
import sys

import pytest

from pevcoord.cli import main
from pevcoord.grid import bundled_case_path


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def check_manifest(out):
    doc = json.loads((out / "manifest.json").read_text())
    for name in doc["files"]:
        path = out / name
        assert path.exists()
        text = path.read_bytes()
        if name.endswith(".json"):
            json.loads(text)
        elif name.endswith(".jsonl"):
            [json.loads(line) for line in text.decode().splitlines()]
        elif name.endswith(".csv"):
            assert list(csv.reader(io.StringIO(text.decode())))
    return doc


def test_validate_bundled(capsys):
    code, out, _ = run(["validate", "--case", "case4_demo.json"], capsys)
    assert code == 0
    assert "4 buses" in out and "2 stations" in out


def test_validate_writes_report(tmp_path, capsys):
    code, _, _ = run(["--mode", "validate", "--case", "case3_lossless", "--out", str(tmp_path)], capsys)
    assert code == 0
    doc = check_manifest(tmp_path)
    assert doc["files"] == ["validate.json"]


def test_validate_malformed(tmp_path, capsys):
    doc = json.loads(bundled_case_path("case4_demo").read_text())
    doc["lines"][2]["to"] = 42
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    code, _, err = run(["validate", "--case", str(bad)], capsys)
    assert code == 2
    assert "lines[2]" in err


def test_missing_case(capsys):
    code, _, err = run(["validate", "--case", "nope_case"], capsys)
    assert code == 2 and "nope_case" in err


def test_missing_mode(capsys):
    code, _, err = run(["--case", "case4_demo"], capsys)
    assert code == 2 and "mode" in err


def test_bad_parameter(capsys):
    code, _, err = run(["simulate", "--case", "case4_demo", "--L", "0.5"], capsys)
    assert code == 2 and "L" in err


def test_simulate_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    code, out, _ = run(["simulate", "--case", "case4_demo.json", "--seed", "42", "--out", str(a)], capsys)
    assert code == 0
    summary = json.loads(out)
    assert summary["binary_variables"] == 14
    run(["simulate", "--case", "case4_demo.json", "--seed", "42", "--out", str(b)], capsys)
    doc = check_manifest(a)
    assert {"trace.csv", "trace.json", "soc.csv", "summary.json", "diagnostics.jsonl"} <= set(doc["files"])
    for name in ("trace.csv", "soc.csv", "diagnostics.jsonl"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_simulate_generated_fleet(tmp_path, capsys):
    cfg = tmp_path / "fleet.json"
    cfg.write_text(json.dumps({"count": 2, "max_rate_kw": 50.0, "capacity_kwh": 20.0,
                               "arrival": {"mean_hour": 18.5, "sd_hour": 0.5, "window": [18.0, 19.0]},
                               "departure_slack": [0, 1], "seed": 1}))
    code, out, _ = run(["simulate", "--case", "case4_demo", "--fleet", str(cfg), "--seed", "3",
                        "--out", str(tmp_path / "o")], capsys)
    assert code == 0
    soc = list(csv.reader(io.StringIO((tmp_path / "o" / "soc.csv").read_text())))
    assert soc[0] == ["t", "ev0", "ev1"]


def test_oracle_mode(tmp_path, capsys):
    code, out, _ = run(["oracle", "--case", "case4_demo.json", "--out", str(tmp_path)], capsys)
    assert code == 0
    check_manifest(tmp_path)
    doc = json.loads((tmp_path / "oracle.json").read_text())
    assert doc["oracle_objective"] <= doc["mpc_objective"] * (1 + 1e-6)
    assert abs(doc["relative_difference"]) <= 1e-3


def test_solve_slot(tmp_path, capsys):
    code, out, _ = run(["solve-slot", "--case", "case4_demo", "--slot", "3", "--out", str(tmp_path)], capsys)
    assert code == 0
    rec = json.loads((tmp_path / "slot.json").read_text())
    assert rec["t"] == 3
    assert json.loads(out)["t"] == 3
    check_manifest(tmp_path)


def test_solve_slot_requires_slot(capsys):
    code, _, err = run(["solve-slot", "--case", "case4_demo"], capsys)
    assert code == 2 and "--slot" in err


def test_infeasible_exit_code(tmp_path, capsys):
    fleet = tmp_path / "heavy.json"
    fleet.write_text(json.dumps([{"id": "big", "station": 1, "arrival_slot": 2, "departure_slot": 2,
                                  "capacity_kwh": 1000.0, "initial_soc": 0.9, "max_rate_kw": 3000.0,
                                  "efficiency": 1.0}]))
    code, _, err = run(["simulate", "--case", "case4_demo", "--fleet", str(fleet),
                        "--out", str(tmp_path / "o")], capsys)
    assert code == 1 and "slot 2" in err


def test_nonconvergence_exit_code(tmp_path, capsys):
    code, _, err = run(["simulate", "--case", "case3_lossless", "--lambda", "1e-6", "--max-iters", "1",
                        "--out", str(tmp_path)], capsys)
    assert code == 3 and "no convergence" in err


def test_bad_fleet_record(tmp_path, capsys):
    fleet = tmp_path / "f.json"
    fleet.write_text(json.dumps([{"id": "x", "station": 3}]))
    code, _, err = run(["simulate", "--case", "case4_demo", "--fleet", str(fleet)], capsys)
    assert code == 2 and "pevs[0]" in err


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "pevcoord.cli", "validate", "--case", "case4_demo"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "case4_demo" in proc.stdout
