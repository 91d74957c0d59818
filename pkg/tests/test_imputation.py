import numpy as np
import pandas as pd
import pytest

from cea_engine.data.models import Arm, CovariateSchema, TrialDataset
from cea_engine.data.preprocess import split_by_arm
from cea_engine.exceptions import ConfigurationError, ConsistencyError, DegenerateDesignError, SchemaError
from cea_engine.imputation import (
    CompletedSet,
    GibbsSampler,
    ImputationSpec,
    Strategy,
    build_design,
    gibbs_run,
    impute_single_level,
    impute_trial,
    imputation_spread,
)

AUX = ("epd", "eco", "age")


def short_spec(**kwargs):
    values = dict(auxiliaries=AUX, k=3, burn_in=20, spacing=5, seed=4)
    values.update(kwargs)
    return ImputationSpec(**values)


def test_design_columns(control_arm):
    assert build_design(control_arm, short_spec()).shape[1] == 4
    design = build_design(control_arm, short_spec(cluster_size=True))
    assert design.shape[1] == 5
    assert design.names == ("intercept",) + AUX + ("cluster_size",)
    assert np.isnan(design.Y).any()


def test_collinear_auxiliary_is_named():
    rows = []
    for i in range(12):
        rows.append({"cluster_id": f"c{i % 3}", "arm": 0, "cost": 100.0 + i, "qaly": 0.5,
                     "epd": float(i % 5), "twice": 2.0 * (i % 5)})
    d = TrialDataset.from_frame(pd.DataFrame(rows),
                                CovariateSchema.from_mapping({"epd": "continuous", "twice": "continuous"}))
    with pytest.raises(DegenerateDesignError) as info:
        build_design(d, ImputationSpec(auxiliaries=("epd", "twice")))
    assert info.value.columns == ["twice"]


def test_unknown_auxiliary(control_arm):
    with pytest.raises(SchemaError):
        build_design(control_arm, short_spec(auxiliaries=("eth",)))


def test_no_missing_cells_returns_copies(complete_trial):
    arm = split_by_arm(complete_trial)[0]
    completed = gibbs_run(arm, short_spec())
    assert completed.k == 3
    assert completed.draw_indices == ()
    assert all(d == arm for d in completed)


def test_retained_iterations(control_arm):
    completed = gibbs_run(control_arm, short_spec())
    assert completed.draw_indices == (25, 30, 35)
    assert len(completed.states) == 3
    assert completed.states[0].level2_cov.shape == (2, 2)


def test_observed_cells_preserved_and_costs_positive(control_arm):
    completed = gibbs_run(control_arm, short_spec())
    cost, qaly = control_arm.costs(), control_arm.qalys()
    for d in completed:
        assert d.is_complete()
        observed = ~np.isnan(cost)
        assert np.array_equal(d.costs()[observed], cost[observed])
        assert np.array_equal(d.qalys()[~np.isnan(qaly)], qaly[~np.isnan(qaly)])
        assert np.all(d.costs() > 0)
    # successive retained states differ at the missing cells
    missing = np.isnan(cost)
    assert not np.array_equal(completed[0].costs()[missing], completed[1].costs()[missing])


def test_same_seed_same_imputations(trial):
    specs = {arm: short_spec() for arm in Arm}
    first = impute_trial(trial, specs, seed=9, key=3)
    second = impute_trial(trial, specs, seed=9, key=3)
    other = impute_trial(trial, specs, seed=10, key=3)
    assert all(a == b for a, b in zip(first, second))
    assert not first[0] == other[0]


def test_executor_does_not_change_results(trial):
    from concurrent.futures import ThreadPoolExecutor

    specs = {arm: short_spec(k=2) for arm in Arm}
    serial = impute_trial(trial, specs, seed=2)
    with ThreadPoolExecutor(max_workers=2) as pool:
        threaded = impute_trial(trial, specs, seed=2, executor=pool)
    assert all(a == b for a, b in zip(serial, threaded))


def test_single_level_has_no_cluster_effects(control_arm):
    completed = impute_single_level(control_arm, short_spec(multilevel=False))
    state = completed.states[0]
    assert state.level2_cov is None
    assert not state.cluster_effects.any()
    with pytest.raises(ConfigurationError):
        impute_single_level(control_arm, short_spec())


def test_back_transform_matches_standardized_predictions(control_arm):
    design = build_design(control_arm, short_spec())
    sampler = GibbsSampler(design, short_spec(), np.random.default_rng(0))
    for i in range(1, 6):
        sampler.step(i)
    state = sampler.snapshot(5)
    original = design.X @ state.fixed_coefficients
    standardized = sampler.y_mean + (sampler.X @ sampler.B) * sampler.y_sd
    assert np.allclose(original, standardized)


def test_coefficient_draws_centre_on_least_squares(complete_trial):
    arm = split_by_arm(complete_trial)[0]
    spec = ImputationSpec(auxiliaries=("epd",), multilevel=False, k=2, burn_in=0, spacing=1)
    design = build_design(arm, spec)
    sampler = GibbsSampler(design, spec, np.random.default_rng(1))
    draws = []
    for i in range(1, 401):
        sampler.step(i)
        draws.append(sampler.snapshot(i).fixed_coefficients)
    ols, *_ = np.linalg.lstsq(design.X, design.Y, rcond=None)
    resid = design.Y - design.X @ ols
    cov = np.linalg.inv(design.X.T @ design.X)
    se = np.sqrt(np.outer(np.diag(cov), resid.var(axis=0)))
    assert np.all(np.abs(np.mean(draws, axis=0) - ols) < 0.5 * se)


def test_completed_set_save_and_load(tmp_path, trial):
    specs = {arm: short_spec(k=2) for arm in Arm}
    completed = impute_trial(trial, specs, seed=3)
    completed.save(tmp_path / "ml", provenance=["seed: 3"])
    loaded = CompletedSet.load(tmp_path / "ml", trial.schema)
    assert loaded.k == 2
    assert loaded.draw_indices == completed.draw_indices
    assert loaded.spec.auxiliaries == AUX
    assert all(a == b for a, b in zip(loaded, completed))


def test_imputation_spread(trial):
    specs = {arm: short_spec(k=3) for arm in Arm}
    completed = impute_trial(trial, specs, seed=3)
    assert imputation_spread(completed, trial, "cost") > 0.0
    with pytest.raises(ConfigurationError):
        imputation_spread(completed, trial, "age")


def test_multilevel_needs_two_clusters():
    rows = [{"cluster_id": "c1", "arm": 0, "cost": c, "qaly": q, "epd": e}
            for c, q, e in ((100.0, 0.5, 1.0), (np.nan, 0.6, 2.0), (120.0, 0.55, 4.0))]
    d = TrialDataset.from_frame(pd.DataFrame(rows), CovariateSchema.from_mapping({"epd": "continuous"}))
    with pytest.raises(ConsistencyError):
        gibbs_run(d, ImputationSpec(auxiliaries=("epd",), k=2, burn_in=1, spacing=1))


def test_strategy_mapping():
    base = ImputationSpec(auxiliaries=("epd",))
    assert Strategy.parse("ML-C") is Strategy.ML_C
    ml_c = base.for_strategy("ml_c")
    assert ml_c.multilevel and ml_c.cluster_size
    sl = base.for_strategy(Strategy.SL)
    assert not sl.multilevel and not sl.cluster_size
    assert ml_c.describe() == "ML: epd+n_i"
    with pytest.raises(ConfigurationError):
        base.for_strategy("cc")
    with pytest.raises(ConfigurationError):
        Strategy.parse("hot-deck")


def test_spec_from_mapping():
    section = {"imputations": 4, "burn_in": 10, "auxiliaries": {"control": ["epd", "eco"], "intervention": "epd+age"}}
    control = ImputationSpec.from_mapping(section, Arm.CONTROL)
    intervention = ImputationSpec.from_mapping(section, Arm.INTERVENTION)
    assert control.k == 4 and control.burn_in == 10
    assert control.auxiliaries == ("epd", "eco")
    assert intervention.auxiliaries == ("epd", "age")
    with pytest.raises(ConfigurationError):
        ImputationSpec(k=1)
    with pytest.raises(ConfigurationError):
        ImputationSpec(auxiliaries=("epd", "epd"))
