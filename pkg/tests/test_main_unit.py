import json
import logging

import pytest

from molecular_sync.__main__ import main
from molecular_sync.cache import CACHE_DIR_ENVIRONMENT_VARIABLE
from molecular_sync.experiments import read_report_csv
from .mock_cache import MockStatsCache


@pytest.fixture
def mocks(monkeypatch, tmp_path):
    monkeypatch.setenv(CACHE_DIR_ENVIRONMENT_VARIABLE, str(tmp_path / "cache"))
    return MockStatsCache(str(tmp_path / "cache"))


@pytest.mark.unit
def test_simulate_writes_report(mocks, tmp_path):
    out = str(tmp_path / "report.csv")
    status = main(["simulate", mocks.config_path("quick_training.ini"), "--out", out, "--seed", "5",
                   "--trials", "1500"])
    assert status == 0, f"exit status was {status}"
    with open(out, encoding="utf-8") as report_file:
        assert "seed=5" in report_file.readline(), "seed override missing from the header"
    frame = read_report_csv(out)
    assert set(frame.trials[frame.estimator == "ule"]) == {1500}, "trials override was not applied"
    logging.warning("Successfully tested test_simulate_writes_report")


@pytest.mark.unit
def test_simulate_json_to_stdout(mocks, capsys):
    status = main(["simulate", mocks.config_path("quick_blind.ini"), "--format", "json"])
    captured = capsys.readouterr()
    assert status == 0, f"exit status was {status}: {captured.err}"
    assert json.loads(captured.out)["config"]["name"] == "quick_blind", "stdout did not carry the report"
    logging.warning("Successfully tested test_simulate_json_to_stdout")


@pytest.mark.unit
def test_theory_and_precompute_commands(mocks, capsys):
    assert main(["precompute", mocks.config_path("quick_iule.ini")]) == 0, "precompute failed"
    assert main(["theory", mocks.config_path("quick_iule.ini")]) == 0, "theory failed"
    assert capsys.readouterr().out.startswith("# experiment=quick_iule"), "theory report missing from stdout"
    logging.warning("Successfully tested test_theory_and_precompute_commands")


@pytest.mark.unit
def test_failure_is_machine_readable(mocks, capsys):
    status = main(["simulate", mocks.config_path("missing_name.ini")])
    error = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert status == 1, f"exit status was {status}"
    assert error["error"] == "ConfigurationError" and "name" in error["message"], f"error was {error}"
    logging.warning("Successfully tested test_failure_is_machine_readable")


@pytest.mark.unit
def test_argument_errors_exit_with_usage():
    with pytest.raises(SystemExit) as exit_info:
        main(["simulate"])
    assert exit_info.value.code == 2, f"argparse exit code was {exit_info.value.code}"
    logging.warning("Successfully tested test_argument_errors_exit_with_usage")
