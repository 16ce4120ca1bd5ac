import json
import os

import pandas as pd
import pytest
from click.testing import CliRunner
from sqlalchemy import func, select
from sqlalchemy.orm import Session

from src.cli import create_cli
from src.model import KnownRun, RunStatus, SuperpositionSampleRecord, create_registry

RUN_FILE = """
[calibration]
n_permutations = 100

[validation]
benchmark_first_year = 2010
benchmark_last_year = 2012
train_last_year = 2009
sweep = [0.3]

[superposition]
pool_size = 6

[scenarios.drought]
shocks = [{ sector = "B:wheat", phi = 1.0 }]
"""


@pytest.fixture
def workspace(tmp_path, data_dir):
    config = tmp_path / "run.toml"
    config.write_text(RUN_FILE)
    return {
        "config": str(config),
        "data": data_dir,
        "out": str(tmp_path / "out"),
        "registry": f"sqlite:///{tmp_path / 'registry.db'}",
    }


@pytest.fixture
def invoke(workspace):
    runner = CliRunner()

    def run(*args, data=None):
        options = ["--config", workspace["config"], "--data-dir", data or workspace["data"], "--out",
                   workspace["out"], "--seed", "5", "--registry-url", workspace["registry"]]
        return runner.invoke(create_cli(), [*options, *args])

    return run


def _output(workspace, *parts):
    return os.path.join(workspace["out"], *parts)


def test_calibrate(invoke, workspace):
    result = invoke("calibrate")
    assert result.exit_code == 0, result.output

    for name in ("events.csv", "rules.csv", "substitution.csv", "substitution_tests.csv", "coverage.csv",
                 "stability.csv", "manifest.json"):
        assert os.path.isfile(_output(workspace, "calibration", name)), name
    events = pd.read_csv(_output(workspace, "calibration", "events.csv"))
    assert events[["area", "item", "year"]].values.tolist() == [["A", "wheat", 2007]]

    with open(_output(workspace, "calibration", "manifest.json")) as file:
        manifest = json.load(file)
    assert manifest["seed"] == 5
    assert manifest["counts"]["events"] == 1
    assert "catalog/areas.csv" in manifest["inputs"]

    with Session(create_registry(workspace["registry"])) as session:
        [run] = session.scalars(select(KnownRun)).all()
        assert run.command == "calibrate"
        assert run.status == RunStatus.FINISHED.value
        assert json.loads(run.manifest)["counts"]["events"] == 1


def test_simulate_after_calibration(invoke, workspace):
    assert invoke("calibrate").exit_code == 0
    result = invoke("simulate", "--scenario", "drought")
    assert result.exit_code == 0, result.output

    losses = pd.read_csv(_output(workspace, "simulate", "drought", "losses.csv"))
    assert list(losses.columns) == ["area", "item", "unit", "L_static", "L_adaptive"]
    assert len(losses) == 9
    assert os.path.isfile(_output(workspace, "simulate", "drought", "hdi.csv"))
    for variant in ("drought_stat", "drought_adap"):
        for name in ("trajectory.csv", "losses.csv", "adaptations.csv", "manifest.json"):
            assert os.path.isfile(_output(workspace, "simulate", variant, name)), (variant, name)
    adaptations = pd.read_csv(_output(workspace, "simulate", "drought_adap", "adaptations.csv"))
    assert not adaptations.empty


def test_simulate_needs_rules(invoke):
    result = invoke("simulate")
    assert result.exit_code == 2
    assert "run calibrate first" in result.output


def test_unknown_scenario(invoke):
    result = invoke("simulate", "--scenario", "flood")
    assert result.exit_code == 1
    assert '"error": "ScenarioException"' in result.output
    assert '"scenario": "flood"' in result.output


def test_static_pair(invoke, workspace):
    result = invoke("superpose", "--pair", "A:wheat,B:maize", "--static")
    assert result.exit_code == 0, result.output
    frame = pd.read_csv(_output(workspace, "superpose", "superposition.csv"))
    assert frame[["area_1", "item_1", "area_2", "item_2"]].values.tolist() == [["A", "wheat", "B", "maize"]]
    with open(_output(workspace, "superpose", "summary.json")) as file:
        assert json.load(file)["samples"] == 1


def test_malformed_pair(invoke):
    result = invoke("superpose", "--pair", "A-wheat", "--static")
    assert result.exit_code == 1
    assert "ValidationException" in result.output


def test_sampled_sweep_resumes(invoke, workspace):
    assert invoke("superpose", "--samples", "3", "--static").exit_code == 0
    first = pd.read_csv(_output(workspace, "superpose", "superposition.csv"))
    result = invoke("superpose", "--samples", "3", "--static")
    assert result.exit_code == 0, result.output
    second = pd.read_csv(_output(workspace, "superpose", "superposition.csv"))

    pd.testing.assert_frame_equal(first, second)
    with Session(create_registry(workspace["registry"])) as session:
        assert session.scalar(select(func.count()).select_from(SuperpositionSampleRecord)) == 3
        assert session.scalar(select(func.count()).select_from(KnownRun)) == 1


def test_validate(invoke, workspace):
    result = invoke("validate")
    assert result.exit_code == 0, result.output
    summary = pd.read_csv(_output(workspace, "validate", "reconciliation_summary.csv"))
    assert list(summary["series"]) == ["benchmark", "baseline", "static", "adaptive"]
    sweep = pd.read_csv(_output(workspace, "validate", "stability.csv"))
    assert set(sweep["varied"]) == {"delta_rel", "delta_dev"}


def test_report(invoke, workspace):
    assert invoke("calibrate").exit_code == 0
    result = invoke("report", "--top", "3")
    assert result.exit_code == 0, result.output
    impacts = pd.read_csv(_output(workspace, "report", "impacts.csv"))
    assert list(impacts.columns) == ["family", "row", "col", "multiplier", "support", "impact"]
    assert "calibrate" in result.output


def test_missing_data_directory(invoke, tmp_path):
    result = invoke("calibrate", data=str(tmp_path / "nothing"))
    assert result.exit_code == 2
    assert '"error": "DataException"' in result.output


def test_missing_years(tmp_path, workspace):
    config = tmp_path / "early.toml"
    config.write_text("first_year = 1980\n")
    result = CliRunner().invoke(create_cli(), [
        "--config", str(config), "--data-dir", workspace["data"], "--out", workspace["out"],
        "--registry-url", workspace["registry"], "calibrate",
    ], env={"FOODSHOCK_SEED": "1"})
    assert result.exit_code == 2
    assert '"error": "MissingYearsException"' in result.output
    assert '"years": [1980, 1981' in result.output
