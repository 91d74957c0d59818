import json

import pandas as pd
import pytest

from cea_engine.configs.settings import EngineConfig, read_sections
from cea_engine.exceptions import ConfigurationError
from cea_engine.utils import hashstr, read_table, write_table


def test_default_values(monkeypatch):
    """Defaults come from static/config.json when no environment overrides are set."""
    monkeypatch.delenv("CEA_ENGINE_QUADRATURE_ORDER", raising=False)
    config = EngineConfig()
    assert config.quadrature_order == 70
    assert config.imputations == 5
    assert config.burn_in == 1000 and config.spacing == 500
    assert config.seed == 20121
    assert len(config.lambda_grid()) == 51


def test_env_override(monkeypatch):
    """Environment variables override the JSON defaults, coerced to the default's type."""
    monkeypatch.setenv("CEA_ENGINE_QUADRATURE_ORDER", "30")
    monkeypatch.setenv("CEA_ENGINE_ADAPTIVE_QUADRATURE", "true")
    config = EngineConfig()
    assert config.quadrature_order == 30
    assert config.adaptive_quadrature is True


def test_overlay_sections():
    config = EngineConfig()
    config.overlay({"fit": {"quadrature_order": 12}, "imputation": {"imputations": 3, "auxiliaries": ["epd"]},
                    "report": {"lambda_max": 2000, "lambda_step": 1000}})
    assert config.quadrature_order == 12
    assert config.imputations == 3
    assert config.lambda_grid() == [0.0, 1000.0, 2000.0]


def test_invalid_values():
    config = EngineConfig()
    with pytest.raises(ConfigurationError):
        config.set("quadrature_order", "many")
    with pytest.raises(ConfigurationError):
        config.set("not_a_setting", 1)
    with pytest.raises(ConfigurationError):
        config.overlay({"fit": ["quadrature_order"]})


def test_run_file(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("fit:\n  quadrature_order: 20\nrun:\n  seed: 5\n", encoding="utf-8")
    config = EngineConfig(run_file=path)
    assert config.quadrature_order == 20 and config.seed == 5
    with pytest.raises(ConfigurationError):
        read_sections(tmp_path / "missing.yaml")
    broken = tmp_path / "broken.yaml"
    broken.write_text("fit: [unclosed\n", encoding="utf-8")
    with pytest.raises(ConfigurationError):
        read_sections(broken)


def test_safe_config_is_serializable():
    settings = EngineConfig().get_safe_config()
    assert "seed" in settings
    assert len(hashstr(json.dumps(settings, sort_keys=True))) == 8


def test_tables_skip_provenance(tmp_path):
    path = tmp_path / "out" / "table.csv"
    frame = pd.DataFrame({"a": [0.1, 1 / 3], "b": ["x", "y"]})
    write_table(frame, path, provenance=["seed: 1"])
    loaded = read_table(path)
    assert loaded["a"].tolist() == [0.1, 1 / 3]
    assert path.read_text(encoding="utf-8").startswith("# seed: 1\n")


def test_imputation_k_is_read_as_imputations(monkeypatch):
    monkeypatch.delenv("CEA_ENGINE_IMPUTATIONS", raising=False)
    config = EngineConfig()
    config.overlay({"imputation": {"k": 10}})
    assert config.imputations == 10
    config.overlay({"imputation": {"k": 4, "imputations": 4}})
    assert config.imputations == 4
    with pytest.raises(ConfigurationError):
        config.overlay({"imputation": {"k": 10, "imputations": 3}})


def test_environment_takes_precedence_over_run_file(monkeypatch):
    monkeypatch.setenv("CEA_ENGINE_QUADRATURE_ORDER", "30")
    config = EngineConfig()
    config.overlay({"fit": {"quadrature_order": 12, "max_iterations": 50}})
    assert config.quadrature_order == 30
    assert config.max_iterations == 50
