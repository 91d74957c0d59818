"""
Simulation oracles over repeated synthetic trials.

Replicate counts are kept small so the module runs in minutes; bias bounds
are expressed in Monte-Carlo standard errors of those replicates.
"""
import math

import numpy as np
import pytest
from scipy import stats

from cea_engine.cea.report import increments
from cea_engine.data.models import Arm
from cea_engine.data.preprocess import split_by_arm
from cea_engine.diagnostics import complete_case_analysis
from cea_engine.glmm.fit import FitOptions, fit_arm
from cea_engine.pipeline.runner import CeaPipeline
from cea_engine.pooling.rubin import EstimateDraw, pool
from cea_engine.simulation import SimConfig, generate, replicate_seeds

OPTS = FitOptions(quadrature_order=10, adaptive=True)

# beta1 = 270 with cost CV sqrt(0.6); sigma_u_sq puts the cost ICC near 0.17
HIGH_ICC = {"beta1": 270.0, "dispersion": 1 / 0.6, "sigma_u_sq": 10200.0}


def arm_config(kind, clusters, size, missing=None, cost_effects=None, **truth):
    params = {"kind": kind, "gamma1": 0.02, "alpha": 1.0e-5, "sigma_q_sq": 1.0e-4, "sigma_w_sq": 4.0e-6,
              "rho": 0.3, **HIGH_ICC}
    params.update(truth)
    return {"clusters": clusters, "size": size, "params": params, "cost_effects": cost_effects or {},
            "missingness": missing or {}}


def simulate(seed, control, intervention=None, covariates=None):
    cfg = SimConfig.from_mapping({"seed": seed, "covariates": covariates or {},
                                  "arms": {"control": control, "intervention": intervention or control}})
    return generate(cfg)


def mc_bias(estimates, truth):
    """Mean bias and its Monte-Carlo standard error."""
    estimates = np.asarray(estimates, dtype=float)
    return estimates.mean() - truth, estimates.std(ddof=1) / math.sqrt(len(estimates))


def pooled_control(pipeline, dataset, strategy, seed, kind):
    """Rubin-pooled control-arm (mean cost, SE, df) after imputing with ``strategy``."""
    completed = pipeline.impute(dataset, strategy, seed)
    draws = []
    for completed_data in completed:
        fit = fit_arm(split_by_arm(completed_data)[0], kind, OPTS)
        draws.append(EstimateDraw([fit.mean_cost, fit.mean_qaly], fit.cov_means))
    pooled = pool(draws)
    return float(pooled.point[0]), float(pooled.se[0]), float(pooled.df[0])


def imputation_pipeline(auxiliaries=(), schema=None, k=5):
    sections = {"imputation": {"imputations": k, "burn_in": 100, "spacing": 20, "auxiliaries": list(auxiliaries)}}
    if schema:
        sections["schema"] = schema
    return CeaPipeline(sections=sections, progress=False)


@pytest.mark.slow
def test_gamma_fit_recovers_parameters_and_covers_mean_cost():
    replicates = 30
    control = arm_config("gamma", 60, {"law": "fixed", "n": 20})
    estimates = {name: [] for name in ("beta1", "gamma1", "alpha", "sigma_q_sq", "dispersion", "sigma_u_sq")}
    covered = 0
    truth = None
    for seed in replicate_seeds(270, replicates):
        dataset, truth = simulate(seed, control)
        fit = fit_arm(split_by_arm(dataset)[0], "gamma", OPTS)
        assert fit.converged
        p = fit.params
        estimates["beta1"].append(p.beta1)
        estimates["gamma1"].append(p.gamma1)
        estimates["alpha"].append(p.alpha)
        estimates["sigma_q_sq"].append(p.sigma_q_sq)
        estimates["dispersion"].append(p.cost_dist.dispersion)
        estimates["sigma_u_sq"].append(p.cluster_cov.sigma_u_sq)
        mean_cost, _ = truth.true_means(Arm.CONTROL)
        covered += abs(fit.mean_cost - mean_cost) <= 1.96 * fit.se_cost

    p = truth.params[Arm.CONTROL]
    mean_cost, _ = truth.true_means(Arm.CONTROL)
    targets = {"beta1": mean_cost, "gamma1": p.gamma1, "alpha": p.alpha, "sigma_q_sq": p.sigma_q_sq,
               "dispersion": p.cost_dist.dispersion, "sigma_u_sq": p.cluster_cov.sigma_u_sq}
    for name, target in targets.items():
        bias, mc_se = mc_bias(estimates[name], target)
        assert abs(bias) < 3 * mc_se, (name, bias, mc_se)
    assert covered / replicates >= 0.8


@pytest.mark.slow
def test_multilevel_imputation_under_mcar_is_consistent():
    replicates = 30
    control = arm_config("lognormal", 40, {"law": "fixed", "n": 20}, dispersion=0.6,
                         missing={"cost": {"mechanism": "mcar", "rate": 0.3}})
    pipeline = imputation_pipeline()
    means, covered = [], 0
    truth = None
    for seed in replicate_seeds(30, replicates):
        dataset, truth = simulate(seed, control)
        mean_cost, se, df = pooled_control(pipeline, dataset, "ml", seed, "lognormal")
        target, _ = truth.true_means(Arm.CONTROL)
        means.append(mean_cost)
        covered += abs(mean_cost - target) <= stats.t.ppf(0.975, df) * se

    bias, mc_se = mc_bias(means, truth.true_means(Arm.CONTROL)[0])
    assert abs(bias) < 3 * mc_se, (bias, mc_se)
    assert covered / replicates >= 0.8


@pytest.mark.slow
def test_single_level_imputation_understates_se_when_costs_cluster():
    replicates = 20
    control = arm_config("gamma", 30, {"law": "fixed", "n": 15},
                         missing={"cost": {"mechanism": "mcar", "rate": 0.4}})
    pipeline = imputation_pipeline(k=3)
    smaller = 0
    for seed in replicate_seeds(5, replicates):
        dataset, _ = simulate(seed, control)
        _, se_single, _ = pooled_control(pipeline, dataset, "sl", seed, "gamma")
        _, se_multi, _ = pooled_control(pipeline, dataset, "ml", seed, "gamma")
        smaller += se_single < se_multi
    assert smaller / replicates >= 0.9


@pytest.mark.slow
def test_complete_cases_are_biased_under_mar_while_ml_c_is_not():
    replicates = 25
    covariates = {"epd": {"kind": "continuous", "mean": 10.0, "sd": 4.0}}
    # high-epd rows cost more and lose their cost more often; larger clusters lose more too
    control = arm_config("lognormal", 40, {"law": "uniform", "low": 10, "high": 20}, beta1=800.0, dispersion=0.5,
                         sigma_u_sq=10000.0, cost_effects={"epd": 25.0},
                         missing={"cost": {"mechanism": "mar", "intercept": -4.85, "slopes": {"epd": 0.4},
                                           "size_slope": 0.5}})
    pipeline = imputation_pipeline(auxiliaries=["epd"], schema={"epd": "continuous"})
    cc_means, mi_means = [], []
    truth = None
    for seed in replicate_seeds(6, replicates):
        dataset, truth = simulate(seed, control, covariates=covariates)
        cc_means.append(complete_case_analysis(dataset, "lognormal", OPTS).fits[0].mean_cost)
        mi_means.append(pooled_control(pipeline, dataset, "ml_c", seed, "lognormal")[0])

    target, _ = truth.true_means(Arm.CONTROL)
    cc_bias, cc_se = mc_bias(cc_means, target)
    mi_bias, mi_se = mc_bias(mi_means, target)
    assert cc_bias < -3 * cc_se, (cc_bias, cc_se)
    assert abs(mi_bias) < 3 * mi_se, (mi_bias, mi_se)


@pytest.mark.slow
def test_incremental_cost_insensitive_to_cost_distribution():
    replicates = 20
    control = arm_config("gamma", 40, {"law": "fixed", "n": 20})
    intervention = arm_config("gamma", 40, {"law": "fixed", "n": 20}, beta1=250.0)
    deltas = {kind: [] for kind in ("normal", "lognormal", "gamma")}
    for seed in replicate_seeds(7, replicates):
        dataset, _ = simulate(seed, control, intervention)
        arms = split_by_arm(dataset)
        for kind, values in deltas.items():
            fits = [fit_arm(arm_data, kind, OPTS) for arm_data in arms]
            values.append(increments(fits[0], fits[1]).delta_c)

    reference = np.asarray(deltas["gamma"])
    mc_se = reference.std(ddof=1) / math.sqrt(replicates)
    for kind in ("normal", "lognormal"):
        gap = np.mean(deltas[kind]) - reference.mean()
        assert abs(gap) < 3 * mc_se, (kind, gap, mc_se)
