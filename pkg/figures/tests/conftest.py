from pathlib import Path

import pytest

from krsolve.cli import ExperimentConfig, run_experiment

SHIPPED = Path(__file__).resolve().parents[2] / "src" / "krsolve" / "configs"


@pytest.fixture(scope="session")
def exp1_output(tmp_path_factory):
    """A completed run of the first reference experiment."""
    out = tmp_path_factory.mktemp("exp1_for_figures")
    config = ExperimentConfig.load(SHIPPED / "exp1.json")
    status = run_experiment(config, out_dir=out)
    assert status == 0
    return out
