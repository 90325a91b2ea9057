import csv
import io
import json
from pathlib import Path

import pytest

from sea_dob.cli import EXIT_ABORT, EXIT_CHECK, EXIT_CONFIG, EXIT_OK, main

GOLDEN = Path(__file__).parent / "golden"


@pytest.mark.parametrize("sub", ["main", "run", "analyze", "usecase", "presets"])
def test_help_matches_golden(sub, capsys, monkeypatch):
    monkeypatch.setenv("COLUMNS", "80")
    argv = ["--help"] if sub == "main" else [sub, "--help"]
    assert main(argv) == EXIT_OK
    assert capsys.readouterr().out == (GOLDEN / f"help_{sub}.txt").read_text()


def test_missing_subcommand_is_usage_error(capsys):
    assert main([]) == EXIT_CONFIG
    assert "usage:" in capsys.readouterr().err


# ---------------------------------------------------------------------------
# run


@pytest.fixture(scope="module")
def dob_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("dob")
    code = main(["run", "--scenario", "paper_v_a", "--controller", "dob-paper", "--out", str(out)])
    return code, out


def test_run_dob_succeeds_and_writes_outputs(dob_run):
    code, out = dob_run
    assert code == EXIT_OK
    text = (out / "trace.csv").read_text()
    assert text.startswith("# schema_version=1\n")
    rows = list(csv.reader(io.StringIO(text.split("\n", 1)[1])))
    assert rows[0][0] == "time_s" and len(rows) == 2502
    m = json.loads((out / "metrics.json").read_text())
    assert m["schema_version"] == 1 and m["controller"] == "DOB" and m["complete"]
    assert m["unstable_phases"] == []
    assert [p["name"] for p in m["phases"]] == ["swing", "hold", "press", "release", "swing_back"]


def test_run_is_byte_identical(dob_run, tmp_path):
    _, out = dob_run
    assert main(["run", "--scenario", "paper_v_a", "--controller", "dob-paper", "--out", str(tmp_path)]) == EXIT_OK
    for name in ("trace.csv", "metrics.json"):
        assert (tmp_path / name).read_bytes() == (out / name).read_bytes()


def test_run_direct_p_aborts_and_records_instability(tmp_path, capsys):
    code = main(["run", "--scenario", "paper_v_a", "--controller", "p-paper", "--out", str(tmp_path)])
    assert code == EXIT_ABORT
    assert "hard stop" in capsys.readouterr().err
    m = json.loads((tmp_path / "metrics.json").read_text())
    assert not m["complete"]
    assert "swing" in m["unstable_phases"]
    assert (tmp_path / "trace.csv").read_text().startswith("# schema_version=1\n")


def test_run_unknown_key_exits_2_naming_key(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"schema_version": 1, "controller": {"k_p": 1.0}}))
    assert main(["run", "--scenario", str(path), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "'k_p'" in capsys.readouterr().err


def test_run_missing_scenario_exits_2(tmp_path):
    assert main(["run", "--scenario", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_run_output_suppression(tmp_path):
    doc = {
        "schema_version": 1,
        "scenario": {
            "phases": [{"name": "rest", "start_s": 0.0, "end_s": 0.05, "theta_from_rad": 0.0, "theta_to_rad": 0.0}],
            "gravity": {"enabled": False},
        },
    }
    path = tmp_path / "s.json"
    path.write_text(json.dumps(doc))
    out = tmp_path / "o"
    assert main(["run", "--scenario", str(path), "--out", str(out), "--no-trace"]) == EXIT_OK
    assert not (out / "trace.csv").exists() and (out / "metrics.json").exists()


# ---------------------------------------------------------------------------
# analyze


def test_analyze_bode_and_poles(tmp_path):
    assert main(["analyze", "--preset", "dob-paper", "--bode", "--poles", "--out", str(tmp_path)]) == EXIT_OK
    lines = (tmp_path / "bode.csv").read_text().splitlines()
    assert lines[0] == "# schema_version=1"
    assert lines[1].startswith("omega_rad_s,")
    assert "G_ss_d" in lines[1] and "G_hat_se" in lines[1] and "Z_s" in lines[1]
    poles = json.loads((tmp_path / "poles.json").read_text())
    assert poles["schema_version"] == 1


def test_analyze_min_inertia_direct_p(tmp_path, capsys):
    assert main(["analyze", "--preset", "p-paper", "--min-inertia", "--out", str(tmp_path)]) == EXIT_OK
    res = json.loads((tmp_path / "stability.json").read_text())
    assert res["schema_version"] == 1 and res["status"] == "boundary"
    assert res["m_star_kgm2"] > 2.0e-3
    assert "minimum stable inertia" in capsys.readouterr().out


def test_analyze_verify_identities(tmp_path, capsys):
    assert main(["analyze", "--verify-identities", "--out", str(tmp_path)]) in (EXIT_OK, EXIT_CHECK)
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.count("PASS") >= 5


def test_analyze_without_action_is_error(tmp_path):
    assert main(["analyze", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_analyze_bad_search_range(tmp_path):
    assert main(["analyze", "--min-inertia", "--m-min", "1e-3", "--m-max", "1", "--out", str(tmp_path)]) == EXIT_CONFIG


# ---------------------------------------------------------------------------
# usecase / presets


def test_usecase_prints_report(tmp_path, capsys):
    assert main(["usecase", "--out", str(tmp_path)]) == EXIT_OK
    rep = json.loads(capsys.readouterr().out)
    assert rep["max_joint_torque_Nm"]["wrist"] == pytest.approx(0.4905, rel=1e-3)
    assert json.loads((tmp_path / "usecase.json").read_text()) == rep


def test_usecase_unreachable_base(capsys):
    assert main(["usecase", "--base-x", "0.0"]) == EXIT_CONFIG
    assert "out of reach" in capsys.readouterr().err


def test_presets_list_and_show(capsys):
    assert main(["presets"]) == EXIT_OK
    assert "paper_v_a" in capsys.readouterr().out.split()
    assert main(["presets", "dob-paper"]) == EXIT_OK
    assert json.loads(capsys.readouterr().out)["schema_version"] == 1
    assert main(["presets", "nope"]) == EXIT_CONFIG
