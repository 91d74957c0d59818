import numpy as np
import pandas as pd
import pytest

from cea_engine.data.models import Arm, CovariateSchema, TrialDataset
from cea_engine.data.preprocess import split_by_arm
from cea_engine.diagnostics import (
    MissingnessModelResult,
    ScreeningReport,
    complete_case_analysis,
    fit_missingness_logistic,
    screen_auxiliaries,
    screen_outcome_association,
)
from cea_engine.exceptions import ConsistencyError, SeparationError
from cea_engine.glmm.fit import FitOptions

SCHEMA = CovariateSchema.from_mapping({"x": "continuous", "z": "binary"})


def single_arm(cost, x, z=None, clusters=None):
    n = len(cost)
    frame = pd.DataFrame({
        "cluster_id": clusters if clusters is not None else [f"c{i % 4}" for i in range(n)],
        "arm": 0, "cost": cost, "qaly": 0.5, "x": x, "z": z if z is not None else [i % 2 for i in range(n)],
    })
    return TrialDataset.from_frame(frame, SCHEMA)


def test_fully_observed_outcome_raises(complete_trial):
    arm = split_by_arm(complete_trial)[0]
    with pytest.raises(ConsistencyError):
        fit_missingness_logistic(arm, "cost", ["epd"])


def test_separating_covariate_is_named():
    x = np.arange(20, dtype=float)
    cost = np.where(x >= 12, np.nan, 100.0 + x)
    with pytest.raises(SeparationError) as info:
        fit_missingness_logistic(single_arm(cost, x), "cost", ["x"])
    assert info.value.covariate == "x"


def test_wald_p_value_is_scale_invariant(control_arm):
    schema = control_arm.schema
    frame = control_arm.frame
    frame["age"] = frame["age"] * 10.0
    rescaled = TrialDataset.from_frame(frame, schema)
    base = fit_missingness_logistic(control_arm, "cost", ["epd", "age"])
    scaled = fit_missingness_logistic(rescaled, "cost", ["epd", "age"])
    assert scaled.p_value("age") == pytest.approx(base.p_value("age"), rel=1e-5)
    assert scaled.coefficients.set_index("variable").loc["age", "estimate"] == pytest.approx(
        base.coefficients.set_index("variable").loc["age", "estimate"] / 10.0, rel=1e-5)


def test_random_intercept_fit(control_arm):
    plain = fit_missingness_logistic(control_arm, "cost", ["epd"], include_cluster_size=True)
    mixed = fit_missingness_logistic(control_arm, "cost", ["epd"], include_cluster_size=True,
                                     random_intercept=True, quadrature_order=20)
    assert list(mixed.coefficients["variable"]) == ["const", "epd", "cluster_size"]
    assert mixed.cluster_sd >= 0.0
    # the random-intercept model nests the plain logistic model
    assert mixed.loglik >= plain.loglik - 1e-2
    assert mixed.n_obs == len(control_arm)


def test_strong_mar_covariate_detected():
    rng = np.random.default_rng(42)
    x = rng.standard_normal(400)
    missing = rng.random(400) < 1.0 / (1.0 + np.exp(-2.0 * x))
    cost = np.where(missing, np.nan, 100.0)
    d = single_arm(cost, x, clusters=[f"c{i % 20}" for i in range(400)])
    result = fit_missingness_logistic(d, "cost", ["x"])
    assert result.coefficients.set_index("variable").loc["x", "estimate"] > 0
    assert result.p_value("x") < 0.001


def test_outcome_association_screen(control_arm):
    result = screen_outcome_association(control_arm, "cost", ["epd", "eco"])
    assert result.model in ("mixed_linear", "ols")
    assert set(result.coefficients["variable"]) == {"const", "epd", "eco"}


def test_screening_report(trial):
    report = screen_auxiliaries(trial, ["epd", "eco", "age"], quadrature_order=15)
    assert isinstance(report, ScreeningReport)
    frame = report.to_frame()
    assert set(frame["arm"]) == {"control", "intervention"}
    assert {"outcome", "model", "random_intercept", "p"} <= set(frame.columns)
    candidates = report.candidates()
    assert set(candidates) == {"control", "intervention"}
    text = report.to_text()
    assert "candidate auxiliaries [control]" in text


def test_candidates_use_threshold():
    table = pd.DataFrame({"variable": ["const", "a", "b"], "estimate": [0.1, 1.0, 0.2],
                          "se": [0.1, 0.2, 0.5], "z": [1.0, 5.0, 0.4], "p": [0.3, 0.00001, 0.69]})
    report = ScreeningReport([MissingnessModelResult("cost", Arm.CONTROL, False, table)], threshold=0.1)
    assert report.candidates() == {"control": ["a"]}


@pytest.mark.slow
def test_complete_case_analysis(trial):
    result = complete_case_analysis(trial, "gamma", FitOptions(quadrature_order=12), lambda_grid=[0.0, 20000.0])
    control, intervention = result.fits
    assert control.n_rows == len(split_by_arm(trial.complete_cases())[0])
    row = result.summary.increment_row()
    assert row["delta_c"] == pytest.approx(intervention.mean_cost - control.mean_cost)
    assert row["strategy"] == "cc" and row["dist"] == "gamma"


def test_complete_case_needs_two_clusters_per_arm():
    rows = [("c1", 0, 100.0), ("c1", 0, 110.0), ("c2", 0, np.nan), ("t1", 1, 90.0), ("t2", 1, 95.0)]
    frame = pd.DataFrame(rows, columns=["cluster_id", "arm", "cost"])
    frame["qaly"], frame["x"], frame["z"] = 0.5, 1.0, 0.0
    with pytest.raises(ConsistencyError):
        complete_case_analysis(TrialDataset.from_frame(frame, SCHEMA), "gamma")
