import json

import numpy as np
import pytest

from drmpc import cli, scenario


@pytest.fixture()
def tiny_config_file(tmp_path):
    cfg = scenario.paper_scenario().with_updates(steps=4, runs=2,
                                                 n_samples=600, seed=77)
    path = tmp_path / "scenario.json"
    path.write_text(cfg.to_json())
    return str(path)


def run_cli(capsys, *args):
    rc = cli.main(list(args))
    out = capsys.readouterr().out
    return rc, out


class TestCalibrate:
    def test_reports_epsilon_and_minimum(self, capsys, tiny_config_file):
        rc, out = run_cli(capsys, "calibrate", "--config", tiny_config_file)
        assert rc == 0
        payload = json.loads(out)
        assert payload["min_samples"] == 515
        assert payload["epsilon"] == pytest.approx(0.0428, abs=2e-3)
        assert payload["kappa"] > 1.0

    def test_default_scenario(self, capsys):
        rc, out = run_cli(capsys, "calibrate")
        assert rc == 0
        assert json.loads(out)["n_samples"] == 550


class TestTerminal:
    def test_ingredients_serialized(self, capsys, tiny_config_file):
        rc, out = run_cli(capsys, "terminal", "--config", tiny_config_file)
        payload = json.loads(out)
        assert payload["alpha"] > 0
        assert np.asarray(payload["weight"]).shape == (2, 2)
        assert np.asarray(payload["sigma_inf"]).shape == (2, 2)


class TestRun:
    def test_json_report(self, capsys, tiny_config_file):
        rc, out = run_cli(capsys, "run", "--config", tiny_config_file)
        payload = json.loads(out)
        assert payload["n_runs"] == 2
        assert len(payload["per_step_rates"]) == 4

    def test_csv_output_deterministic(self, capsys, tiny_config_file, tmp_path):
        out1 = tmp_path / "a.csv"
        out2 = tmp_path / "b.csv"
        run_cli(capsys, "run", "--config", tiny_config_file, "--format", "csv",
                "--out", str(out1))
        run_cli(capsys, "run", "--config", tiny_config_file, "--format", "csv",
                "--out", str(out2))
        assert out1.read_text() == out2.read_text()
        assert out1.read_text().splitlines()[0] == "metric,value"

    def test_runs_override(self, capsys, tiny_config_file):
        rc, out = run_cli(capsys, "run", "--config", tiny_config_file,
                          "--runs", "3")
        assert json.loads(out)["n_runs"] == 3


class TestExperiments:
    def test_sweep_csv(self, capsys, tmp_path):
        cfg = scenario.paper_scenario().with_updates(
            steps=3, runs=2, ns_sweep=(600, 2000))
        path = tmp_path / "cfg.json"
        path.write_text(cfg.to_json())
        rc, out = run_cli(capsys, "sweep-ns", "--config", str(path),
                          "--format", "csv")
        lines = out.strip().splitlines()
        assert lines[0].startswith("n_samples,kappa,mean_cost")
        assert len(lines) == 3

    def test_table1_rows(self, capsys, tmp_path):
        cfg = scenario.paper_scenario().with_updates(steps=3, runs=2)
        path = tmp_path / "cfg.json"
        path.write_text(cfg.to_json())
        rc, out = run_cli(capsys, "table1", "--config", str(path),
                          "--levels", "0.7", "--sizes", "600")
        payload = json.loads(out)
        assert payload[0]["p"] == 0.7
        assert payload[0]["n_samples"] == 600

    def test_table2_default_unmodeled(self, capsys, tmp_path):
        cfg = scenario.paper_scenario().with_updates(steps=6, runs=2,
                                                     c_sweep=(0.0,))
        path = tmp_path / "cfg.json"
        path.write_text(cfg.to_json())
        rc, out = run_cli(capsys, "table2", "--config", str(path))
        payload = json.loads(out)
        assert payload[0]["lambda_penalty"] == 0.0
        assert "satisfaction_at_step" in payload[0]

    def test_fig1(self, capsys, tmp_path):
        cfg = scenario.paper_scenario().with_updates(
            steps=3, runs=2, ns_sweep=(600,))
        path = tmp_path / "cfg.json"
        path.write_text(cfg.to_json())
        rc, out = run_cli(capsys, "fig1", "--config", str(path))
        payload = json.loads(out)
        assert payload["exact_moment_baseline"]["kappa"] == 1.0
        assert len(payload["sweep"]) == 1
