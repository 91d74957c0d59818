import os
import sys

import pytest
import yaml

# Get the project root directory
project_root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

# Add the project root to the Python path
sys.path.insert(0, project_root)

from cea_engine.data.csv_io import save_csv  # noqa: E402
from cea_engine.data.preprocess import split_by_arm  # noqa: E402
from cea_engine.simulation import SimConfig, generate  # noqa: E402

SCHEMA = {"epd": "continuous", "eco": "binary", "age": "continuous"}


def arm_section(clusters, beta1, gamma1, missing=True, kind="gamma", dispersion=2.0):
    return {
        "clusters": clusters,
        "size": {"law": "uniform", "low": 8, "high": 15},
        "params": {"kind": kind, "beta1": beta1, "gamma1": gamma1, "alpha": 1.0e-4, "sigma_q_sq": 0.01,
                   "dispersion": dispersion, "sigma_u_sq": 900.0, "sigma_w_sq": 0.002, "rho": 0.3},
        "cost_effects": {"epd": 4.0},
        "missingness": {
            "cost": {"mechanism": "mar", "intercept": -1.2, "slopes": {"epd": 0.08}},
            "qaly": {"mechanism": "mcar", "rate": 0.05},
        } if missing else {},
    }


def simulation_sections(seed=11, missing=True):
    return {
        "schema": dict(SCHEMA),
        "simulation": {
            "seed": seed,
            "covariates": {
                "epd": {"kind": "continuous", "mean": 10.0, "sd": 4.0},
                "eco": {"kind": "binary", "p": 0.5},
                "age": {"kind": "continuous", "mean": 30.0, "sd": 5.0},
            },
            "arms": {
                "control": arm_section(12, 300.0, 0.5, missing),
                "intervention": arm_section(12, 280.0, 0.52, missing),
            },
        },
    }


@pytest.fixture
def sim_sections():
    return simulation_sections()


@pytest.fixture
def sim_config(sim_sections):
    return SimConfig.from_mapping(sim_sections)


@pytest.fixture
def trial(sim_config):
    """Two-arm simulated trial with missing costs and QALYs."""
    dataset, _ = generate(sim_config)
    return dataset


@pytest.fixture
def complete_trial():
    dataset, _ = generate(SimConfig.from_mapping(simulation_sections(seed=5, missing=False)))
    return dataset


@pytest.fixture
def control_arm(trial):
    return split_by_arm(trial)[0]


@pytest.fixture
def trial_csv(tmp_path, trial):
    path = tmp_path / "trial.csv"
    save_csv(trial, path)
    return path


@pytest.fixture
def run_file(tmp_path):
    """A run file with short chains and a coarse grid so pipeline tests stay fast."""
    sections = simulation_sections()
    sections.update({
        "fit": {"quadrature_order": 12},
        "imputation": {"imputations": 2, "burn_in": 30, "spacing": 10, "auxiliaries": ["epd", "eco"]},
        "report": {"lambda_min": 0, "lambda_max": 40000, "lambda_step": 10000, "reference_lambda": 20000},
        "run": {"seed": 11},
    })
    path = tmp_path / "run.yaml"
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(sections, f, sort_keys=False)
    return path
