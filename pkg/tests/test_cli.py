import json
import subprocess
import sys

import pytest

from avgctl.cli import main
from avgctl.errors import NumericalFailure
from avgctl.track import read_trajectory_csv

from conftest import DATA, SCENARIOS

FLAT = str(SCENARIOS / "sin_flat.json")


def test_check_valid(capsys):
    assert main(["check", FLAT]) == 0
    out = capsys.readouterr().out
    assert "rank 1/1" in out and "PASS" in out


@pytest.mark.parametrize(
    "name, code",
    [("rank_deficient", 1), ("bound_violation", 1), ("unknown_key", 2), ("syntax_error", 2), ("not_json", 2)],
)
def test_check_failures(name, code, capsys):
    assert main(["check", str(DATA / "malformed" / f"{name}.json")]) == code


def test_check_rank_message(capsys):
    main(["check", str(DATA / "malformed" / "rank_deficient.json")])
    assert "rank 1 < 2" in capsys.readouterr().err


def test_missing_file():
    assert main(["check", "/nonexistent/scenario.json"]) == 2


def test_bad_usage():
    assert main(["frobnicate", FLAT]) == 2


def test_steer(tmp_path, capsys):
    code = main(["steer", str(SCENARIOS / "double_integrator.json"), "--to", "1,0", "--tau", "0.5",
                 "--step", "1e-4", "--out", str(tmp_path)])
    assert code == 0
    rep = json.loads((tmp_path / "steer.json").read_text())
    assert rep["endpoint_error"] <= 1e-8
    assert (tmp_path / "manifest.json").exists()


def test_average(tmp_path):
    assert main(["average", str(SCENARIOS / "sin_atoms.json"), "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "average.json").read_text())
    assert rep["error"] <= rep["bound"]
    assert rep["target"] == [0.2]
    assert json.loads((tmp_path / "schedule.json").read_text())[0]["kind"] == "move"


def test_track_sweep(tmp_path, capsys):
    assert main(["track", FLAT, "--sweep", "0.4,0.2", "--out", str(tmp_path), "--jobs", "2"]) == 0
    reports = [json.loads((tmp_path / f"S{S}_eps1" / "report.json").read_text()) for S in ("0.4", "0.2")]
    assert all(r["pass"] for r in reports)
    assert reports[1]["bound_paper"] == pytest.approx(reports[0]["bound_paper"] / 2)
    manifest = json.loads((tmp_path / "S0.2_eps1" / "manifest.json").read_text())
    assert manifest["command"] == "track" and manifest["exit_status"] == 0 and manifest["seed"] == 7
    header, rows = read_trajectory_csv(tmp_path / "S0.2_eps1" / "trajectory.csv")
    assert header == ["t", "y_1", "z_1", "u_1", "zref_1"]
    assert rows[-1, 0] == 1.0
    assert len(capsys.readouterr().out.strip().splitlines()) == 2


def test_track_eps_sweep(capsys):
    assert main(["track", FLAT, "--S", "0.2", "--eps-sweep", "0.5,2", "--jobs", "1"]) == 0
    out = capsys.readouterr().out
    assert "S=0.4 eps=0.5" in out and "S=0.1 eps=2" in out


def test_track_window_out_of_range():
    assert main(["track", FLAT, "--S", "5"]) == 2


def test_track_numerical_failure(monkeypatch, capsys):
    import avgctl.track as track

    def broken(*args):
        raise NumericalFailure("forced")

    monkeypatch.setattr(track, "rebuild", broken)
    assert main(["track", FLAT, "--S", "0.5", "--jobs", "1"]) == 3
    assert "interval 0: forced" in capsys.readouterr().out


def test_track_deterministic_and_seed_override(tmp_path, monkeypatch):
    for name in ("a", "b"):
        assert main(["track", FLAT, "--S", "0.2", "--out", str(tmp_path / name)]) == 0
    for f in ("report.json", "trajectory.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    monkeypatch.setenv("AVGCTL_SEED", "11")
    assert main(["track", FLAT, "--S", "0.2", "--out", str(tmp_path / "c")]) == 0
    assert json.loads((tmp_path / "c" / "manifest.json").read_text())["seed"] == 11
    monkeypatch.setenv("AVGCTL_SEED", "eleven")
    assert main(["track", FLAT, "--S", "0.2"]) == 2


def test_optimize(tmp_path, capsys):
    assert main(["optimize", FLAT, "--S", "0.2", "--pieces", "2", "--budget", "800", "--out", str(tmp_path)]) == 0
    assert "gap=" in capsys.readouterr().out
    rep = json.loads((tmp_path / "corollary.json").read_text())
    assert rep["G_hat_star"] <= -0.999 and rep["pass"]


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "avgctl.cli", "check", FLAT], capture_output=True, text=True)
    assert proc.returncode == 0 and "rank 1/1" in proc.stdout
