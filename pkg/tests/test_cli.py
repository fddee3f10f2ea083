import io
import os

import pandas as pd
import pytest

from cli import (
    EXIT_CONFIG,
    EXIT_NO_SCENARIOS,
    EXIT_OK,
    StatusLog,
    build_parser,
    cmd_certify,
    cmd_list_scenarios,
    cmd_simulate,
    main,
)

POTENTIAL_SCENARIO = """
[scenario]
name = small
description = F(x) = 1 - x with two rules
n = 3

[mechanism]
kind = memoryless
game_A = -1, 0, 0; 0, -1, 0; 0, 0, -1
game_b = 1, 1, 1

{rules}

[initial_conditions]
a = 0.7, 0.3, 0
b = 0, 0.2, 0.8

[integrator]
dt = 0.01
t_max = {t_max}

[certify]
samples = 300
horizon = 20
"""

TWO_RULES = "[rule:smith]\npreset = smith\n\n[rule:bnn]\npreset = bnn"


def _write(tmp_path, rules=TWO_RULES, t_max=5):
    path = tmp_path / "small.cfg"
    path.write_text(POTENTIAL_SCENARIO.format(rules=rules, t_max=t_max), encoding="utf-8")
    return str(path)


def _quiet():
    return StatusLog(io.StringIO())


def _report(path):
    lines = open(path, encoding="utf-8").read().splitlines()
    return {line.split(":")[0]: line for line in lines if not line.startswith("#")}


class TestParser:
    def test_subcommands(self):
        args = build_parser().parse_args(["certify", "paper_sec5", "--ni-gain", "1", "--pure-replicator"])
        assert args.command == "certify" and args.ni_gain == 1.0 and args.pure_replicator
        args = build_parser().parse_args(["simulate", "x.cfg", "--clean", "--verbose"])
        assert args.clean and args.verbose
        assert not build_parser().parse_args(["list-scenarios"]).details

    def test_missing_command(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args([])


class TestListScenarios:
    def test_bundled(self, capsys):
        assert main(["list-scenarios", "-v"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "paper_sec5: Filtered potential game" in out
        assert "mechanism=filtered_potential" in out

    def test_empty_directory(self, tmp_path, monkeypatch):
        monkeypatch.setenv("EVODYN_SCENARIO_DIR", str(tmp_path))
        status = _quiet()
        assert cmd_list_scenarios(status=status) == EXIT_NO_SCENARIOS
        assert status.errors


class TestConfigurationErrors:
    def test_cone_violation(self, tmp_path):
        status = _quiet()
        path = _write(tmp_path, rules="[rule:imitation]\nalpha_i = 1")
        assert cmd_simulate(path, status=status) == EXIT_CONFIG
        assert "alpha_CO + alpha_EP > 0" in status.errors[0]
        assert cmd_certify(path, status=_quiet()) == EXIT_CONFIG

    def test_unknown_scenario(self, tmp_path, monkeypatch):
        monkeypatch.setenv("EVODYN_SCENARIO_DIR", str(tmp_path))
        assert cmd_simulate("nowhere", status=_quiet()) == EXIT_CONFIG


class TestSimulate:
    def test_artifacts(self, tmp_path, monkeypatch):
        path = _write(tmp_path)
        monkeypatch.chdir(tmp_path)
        assert cmd_simulate(path, status=_quiet()) == EXIT_OK
        folder = tmp_path / "output" / "small"
        assert sorted(name for name in os.listdir(folder) if name.endswith(".csv")) == [
            "bnn_a.csv", "bnn_b.csv", "smith_a.csv", "smith_b.csv",
        ]
        assert (folder / "small.svg").read_bytes().lstrip().startswith(b"<?xml")
        report = _report(folder / "report.txt")
        assert "converged[smith/a]" in report
        assert report["ccw"].startswith("ccw: certified")
        workbook = pd.ExcelFile(folder / "results.xlsx")
        assert workbook.sheet_names == ["Runs", "Properties", "Summary"]
        assert len(pd.read_excel(workbook, "Runs")) == 4

    def test_clean_removes_stale_outputs(self, tmp_path, monkeypatch):
        path = _write(tmp_path, rules="[rule:smith]\npreset = smith", t_max=1)
        monkeypatch.chdir(tmp_path)
        folder = tmp_path / "output" / "small"
        folder.mkdir(parents=True)
        (folder / "old_run.csv").write_text("t\n0\n", encoding="utf-8")
        (folder / "notes.md").write_text("kept", encoding="utf-8")
        (folder / "archive").mkdir()
        (folder / "archive" / "older.csv").write_text("t\n0\n", encoding="utf-8")
        assert cmd_simulate(path, clean=True, status=_quiet()) == EXIT_OK
        assert not (folder / "old_run.csv").exists()
        assert (folder / "notes.md").exists()
        assert (folder / "archive" / "older.csv").exists()
        assert (folder / "smith_a.csv").exists()


class TestCertify:
    def test_potential_game(self, tmp_path, monkeypatch):
        path = _write(tmp_path)
        monkeypatch.chdir(tmp_path)
        status = _quiet()
        assert cmd_certify(path, ni_gain=1.0, status=status) == EXIT_OK
        report = _report(tmp_path / "output" / "small" / "report_certify.txt")
        for rule in ("smith", "bnn"):
            assert report[f"positive_correlation[{rule}]"].split(":")[1].strip().startswith("pass")
            assert report[f"nash_stationarity[{rule}]"].split(":")[1].strip().startswith("pass")
            assert report[f"tellegen_identity[{rule}]"].split(":")[1].strip().startswith("pass")
        assert report["ccw"].startswith("ccw: certified")
        assert report["potential_identity"].startswith("potential_identity: pass")
        assert "negative_imaginary" not in report
        assert any("--ni-gain ignored" in message for message in status.warnings)

    def test_pure_replicator_fails_nash_stationarity(self, tmp_path, monkeypatch):
        path = _write(tmp_path, rules="[rule:smith]\npreset = smith")
        monkeypatch.chdir(tmp_path)
        assert cmd_certify(path, pure_replicator=True, status=_quiet()) == EXIT_OK
        report = _report(tmp_path / "output" / "small" / "report_certify.txt")
        assert report["nash_stationarity[replicator]"].startswith("nash_stationarity[replicator]: fail")
        assert report["positive_correlation[replicator]"].startswith("positive_correlation[replicator]: pass")


@pytest.mark.slow
class TestBundledScenarios:
    def test_filtered_potential_scenario(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        assert cmd_simulate("paper_sec5", status=_quiet()) == EXIT_OK
        folder = tmp_path / "output" / "paper_sec5"
        assert len([name for name in os.listdir(folder) if name.endswith(".csv")]) == 12
        assert (folder / "paper_sec5.svg").exists()
        report = _report(folder / "report.txt")
        converged = [line for key, line in report.items() if key.startswith("converged[")]
        assert len(converged) == 12
        assert all(": pass" in line for line in converged)
        assert report["ccw"].startswith("ccw: certified")

    def test_filtered_potential_certification(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        assert main(["certify", "paper_sec5", "--ni-gain", "1"]) == EXIT_OK
        report = _report(tmp_path / "output" / "paper_sec5" / "report_certify.txt")
        assert report["negative_imaginary"].startswith("negative_imaginary: pass")
        assert report["negative_imaginary[k=1]"].startswith("negative_imaginary[k=1]: fail")
        assert report["ccw"].startswith("ccw: certified")

    def test_skew_game_drifts(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        cmd_simulate("skew_rps", status=_quiet())
        report = _report(tmp_path / "output" / "skew_rps" / "report.txt")
        assert report["ccw"].startswith("ccw: fail")
